#include "fmtk/encoders.hpp"

#include "fmtk/ops.hpp"

namespace fmtk {

Var Encoder::preprocess(const Var& x) const {
  if (x.shape().size() != 3) {
    throw ShapeError("encoder '" + name() + "' expects [B, C, L], got " + to_string(x.shape()));
  }
  return x;
}

TimeSeriesBatch Encoder::encode(const TimeSeriesBatch& batch) {
  return TimeSeriesBatch(run(Var(batch.values()), ForwardContext::eval()).values.value());
}

LinearChannelCombiner::LinearChannelCombiner(LinearChannelCombinerConfig cfg, std::string name)
    : Encoder(std::move(name)),
      cfg_(cfg),
      weight_(Tensor({cfg.new_num_channels, cfg.num_channels},
                     cfg.num_channels ? 1.0 / static_cast<double>(cfg.num_channels) : 0.0)),
      bias_(Tensor::zeros({cfg.new_num_channels})) {
  if (cfg.num_channels < 1 || cfg.new_num_channels < 1) {
    throw ConfigError("linear_channel_combiner needs num_channels >= 1 and new_num_channels >= 1");
  }
}

json LinearChannelCombiner::config() const {
  return {{"num_channels", cfg_.num_channels}, {"new_num_channels", cfg_.new_num_channels}};
}

ParameterSet LinearChannelCombiner::parameters() {
  ParameterSet set;
  set.add("weight", weight_);
  set.add("bias", bias_);
  return set;
}

EncodedSeries LinearChannelCombiner::forward(const Var& x, const ForwardContext& ctx) {
  if (x.shape()[1] != cfg_.num_channels) {
    throw ShapeError("linear_channel_combiner expects " + std::to_string(cfg_.num_channels) +
                     " channels, got " + std::to_string(x.shape()[1]));
  }
  return {channel_mix(x, ctx.param(weight_), ctx.param(bias_)), 1};
}

SeriesShape LinearChannelCombiner::output_shape(const SeriesShape& in) const {
  if (in.channels && *in.channels != cfg_.num_channels) {
    throw ShapeError("linear_channel_combiner expects " + std::to_string(cfg_.num_channels) +
                     " channels, got " + std::to_string(*in.channels));
  }
  return {cfg_.new_num_channels, in.length};
}

WindowEncoder::WindowEncoder(WindowConfig cfg, std::string name)
    : Encoder(std::move(name)), cfg_(cfg) {
  if (cfg.window_len < 1 || cfg.stride < 1) {
    throw ConfigError("window encoder needs window_len >= 1 and stride >= 1");
  }
}

json WindowEncoder::config() const {
  return {{"window_len", cfg_.window_len}, {"stride", cfg_.stride}};
}

std::size_t WindowEncoder::window_count(std::size_t length) const {
  if (cfg_.window_len > length) {
    throw ConfigError("window_len " + std::to_string(cfg_.window_len) +
                      " exceeds series length " + std::to_string(length));
  }
  return (length - cfg_.window_len) / cfg_.stride + 1;
}

std::vector<WindowOrigin> WindowEncoder::origins(std::size_t batch, std::size_t length) const {
  const std::size_t n = window_count(length);
  std::vector<WindowOrigin> out;
  out.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < n; ++j) out.push_back({b, j * cfg_.stride});
  }
  return out;
}

EncodedSeries WindowEncoder::forward(const Var& x, const ForwardContext&) {
  const Shape& s = x.shape();
  const std::size_t B = s[0], C = s[1], L = s[2], w = cfg_.window_len;
  const std::size_t n = window_count(L);
  const std::size_t stride = cfg_.stride;
  Tensor out(Shape{B * n, C, w});
  const Tensor& in = x.value();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < C; ++c) {
        const double* src = in.data() + (b * C + c) * L + j * stride;
        std::copy(src, src + w, out.data() + ((b * n + j) * C + c) * w);
      }
    }
  }
  if (!x.requires_grad()) return {Var(std::move(out)), n};
  Var y = x.tape()->record(std::move(out), [x, B, C, L, n, w, stride](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < C; ++c) {
          const double* src = g.data() + ((b * n + j) * C + c) * w;
          double* dst = gx.data() + (b * C + c) * L + j * stride;
          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
    }
    accumulate_grad(x, gx);
  });
  return {y, n};
}

SeriesShape WindowEncoder::output_shape(const SeriesShape& in) const {
  if (in.length) window_count(*in.length);
  return {in.channels, cfg_.window_len};
}

}  // namespace fmtk
