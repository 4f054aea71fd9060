#pragma once

#include <vector>

#include "fmtk/core.hpp"

namespace fmtk {

// Encoder output. `group` consecutive rows of values belong to one input
// item (1 unless the encoder splits items into windows).
struct EncodedSeries {
  Var values;
  std::size_t group = 1;
};

// Input-side stage: [B, C, L] series in, [B', C', L'] series out.
class Encoder : public Component {
 public:
  using Component::Component;

  ComponentKind kind() const final { return ComponentKind::Encoder; }

  virtual Var preprocess(const Var& x) const;
  virtual EncodedSeries forward(const Var& x, const ForwardContext& ctx) = 0;
  virtual EncodedSeries postprocess(EncodedSeries out) const { return out; }

  EncodedSeries run(const Var& x, const ForwardContext& ctx) {
    return postprocess(forward(preprocess(x), ctx));
  }

  // Inference convenience over a whole batch (targets/mask are not carried).
  TimeSeriesBatch encode(const TimeSeriesBatch& batch);

  // Symbolic dry run; throws ShapeError/ConfigError when the declared input
  // cannot be consumed.
  virtual SeriesShape output_shape(const SeriesShape& in) const = 0;
};

class IdentityEncoder final : public Encoder {
 public:
  explicit IdentityEncoder(std::string name = "identity") : Encoder(std::move(name)) {}

  std::string type() const override { return "identity"; }
  json config() const override { return json::object(); }
  ParameterSet parameters() override { return {}; }

  EncodedSeries forward(const Var& x, const ForwardContext&) override { return {x, 1}; }
  SeriesShape output_shape(const SeriesShape& in) const override { return in; }
};

struct LinearChannelCombinerConfig {
  std::size_t num_channels = 1;
  std::size_t new_num_channels = 1;
};

// out[b, c', l] = sum_c W[c', c] * x[b, c, l] + bias[c']. Starts as a
// channel average.
class LinearChannelCombiner final : public Encoder {
 public:
  explicit LinearChannelCombiner(LinearChannelCombinerConfig cfg,
                                 std::string name = "linear_channel_combiner");

  std::string type() const override { return "linear_channel_combiner"; }
  json config() const override;
  ParameterSet parameters() override;

  EncodedSeries forward(const Var& x, const ForwardContext& ctx) override;
  SeriesShape output_shape(const SeriesShape& in) const override;

  const LinearChannelCombinerConfig& cfg() const noexcept { return cfg_; }
  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }

 private:
  LinearChannelCombinerConfig cfg_;
  Parameter weight_;
  Parameter bias_;
};

struct WindowConfig {
  std::size_t window_len = 1;
  std::size_t stride = 1;
};

struct WindowOrigin {
  std::size_t item;
  std::size_t start;
};

// Slides a length-w window with stride s over every item. Windows of one
// item are emitted consecutively; a tail shorter than w is dropped.
class WindowEncoder final : public Encoder {
 public:
  explicit WindowEncoder(WindowConfig cfg, std::string name = "window");

  std::string type() const override { return "window"; }
  json config() const override;
  ParameterSet parameters() override { return {}; }

  EncodedSeries forward(const Var& x, const ForwardContext& ctx) override;
  SeriesShape output_shape(const SeriesShape& in) const override;

  std::size_t window_count(std::size_t length) const;
  // Row r of the encoder output came from origins(...)[r].
  std::vector<WindowOrigin> origins(std::size_t batch, std::size_t length) const;

 private:
  WindowConfig cfg_;
};

}  // namespace fmtk
