#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fmtk/tensor.hpp"

namespace fmtk {

// A trainable array with its gradient slot. Components own their Parameters
// at stable addresses; everything else refers to them by pointer.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool frozen = false;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

// Ordered name -> Parameter* view. Names are dotted paths and unique.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Parameter* param;
  };

  void add(std::string name, Parameter& param);
  // Appends every entry of other, each name prefixed with "prefix." when a
  // prefix is given.
  void extend(const ParameterSet& other, const std::string& prefix = {});

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t scalar_count() const;

  Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name) const;
  bool contains(const Parameter* p) const;

  // Subset with frozen entries removed.
  ParameterSet trainable() const;

  void zero_grad() const;

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
};

class Tape;

namespace detail {
struct Node {
  Tensor owned;
  const Tensor* view = nullptr;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;

  const Tensor& value() const noexcept { return view ? *view : owned; }
  Tensor& grad_slot() {
    if (!has_grad) {
      grad = Tensor::zeros(value().shape());
      has_grad = true;
    }
    return grad;
  }
};
}  // namespace detail

// Handle to a value in a computation. Vars that require grad are bound to the
// Tape that recorded them.
class Var {
 public:
  Var() : Var(Tensor{}) {}
  explicit Var(Tensor constant);

  // Non-owning constant; the referenced tensor must outlive the Var.
  static Var view(const Tensor& t);

  const Tensor& value() const noexcept { return node_->value(); }
  const Shape& shape() const noexcept { return value().shape(); }
  bool requires_grad() const noexcept { return node_->requires_grad; }
  Tape* tape() const noexcept { return tape_; }

  bool has_grad() const noexcept { return node_->has_grad; }
  // Gradient accumulated by Tape::backward; zeros if never reached.
  Tensor grad() const;

  detail::Node& node() const noexcept { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::Node> node_;
  Tape* tape_ = nullptr;
};

// Reverse-mode recorder. Ops whose inputs require grad append a backward
// closure here in execution order; backward() replays them in reverse.
// Parameter leaves are created only for the target set, so gradients flow
// through every other parameter as constants and never accumulate into them.
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape() = default;
  explicit Tape(const ParameterSet& targets);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool wants(const Parameter& p) const { return targets_.contains(&p); }

  Var param(Parameter& p);
  // Leaf that requires grad; its gradient is read back through Var::grad().
  Var watch(Tensor value);

  // Creates a result node that requires grad and records its backward rule.
  Var record(Tensor value, std::function<void(const Tensor& grad_out)> backward);

  void backward(const Var& loss);

  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::unordered_set<const Parameter*> targets_;
  std::vector<Backward> entries_;
};

// Adds g into v's gradient when v requires grad.
void accumulate_grad(const Var& v, const Tensor& g);

// Binds a forward pass to an optional tape plus the train/eval switch and
// the dropout key material.
struct ForwardContext {
  Tape* tape = nullptr;
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;

  Var param(Parameter& p) const { return tape ? tape->param(p) : Var::view(p.value); }

  static ForwardContext eval() { return {}; }
};

}  // namespace fmtk
