#include "fmtk/autodiff.hpp"

namespace fmtk {

void ParameterSet::add(std::string name, Parameter& param) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
  if (param.grad.shape() != param.value.shape()) param.grad = Tensor::zeros(param.value.shape());
  entries_.push_back({std::move(name), &param});
}

void ParameterSet::extend(const ParameterSet& other, const std::string& prefix) {
  for (const auto& e : other) add(prefix.empty() ? e.name : prefix + "." + e.name, *e.param);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.param->value.size();
  return n;
}

Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.param;
  }
  return nullptr;
}

Parameter& ParameterSet::at(const std::string& name) const {
  if (auto* p = find(name)) return *p;
  throw RegistryError("no parameter named '" + name + "'");
}

bool ParameterSet::contains(const Parameter* p) const {
  for (const auto& e : entries_) {
    if (e.param == p) return true;
  }
  return false;
}

ParameterSet ParameterSet::trainable() const {
  ParameterSet out;
  for (const auto& e : entries_) {
    if (!e.param->frozen) out.entries_.push_back(e);
  }
  return out;
}

void ParameterSet::zero_grad() const {
  for (const auto& e : entries_) e.param->zero_grad();
}

Var::Var(Tensor constant) : node_(std::make_shared<detail::Node>()) {
  node_->owned = std::move(constant);
}

Var Var::view(const Tensor& t) {
  Var v(Tensor{});
  v.node_->view = &t;
  return v;
}

Tensor Var::grad() const {
  return node_->has_grad ? node_->grad : Tensor::zeros(shape());
}

Tape::Tape(const ParameterSet& targets) {
  for (const auto& e : targets) targets_.insert(e.param);
}

Var Tape::param(Parameter& p) {
  Var v = Var::view(p.value);
  if (!wants(p)) return v;
  v.node_->requires_grad = true;
  v.tape_ = this;
  auto node = v.node_;
  Parameter* target = &p;
  entries_.push_back([node, target] {
    if (node->has_grad) target->grad.array() += node->grad.array();
  });
  return v;
}

Var Tape::watch(Tensor value) {
  Var v(std::move(value));
  v.node_->requires_grad = true;
  v.tape_ = this;
  return v;
}

Var Tape::record(Tensor value, std::function<void(const Tensor&)> backward) {
  Var out(std::move(value));
  out.node_->requires_grad = true;
  out.tape_ = this;
  auto node = out.node_;
  entries_.push_back([node, fn = std::move(backward)] {
    if (node->has_grad) fn(node->grad);
  });
  return out;
}

void Tape::backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.node().grad_slot().fill(1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

void accumulate_grad(const Var& v, const Tensor& g) {
  if (!v.requires_grad()) return;
  Tensor& slot = v.node().grad_slot();
  if (slot.size() != g.size()) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " for value of shape " +
                     to_string(slot.shape()));
  }
  slot.array() += g.array();
}

}  // namespace fmtk
