#include "fmtk/datasets.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "fmtk/error.hpp"
#include "fmtk/random.hpp"

namespace fmtk {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kArBurnIn = 64;

struct Split {
  Tensor x;
  Tensor y;
};

Split sine_class(const DatasetSpec& s, std::size_t n, CounterRng& rng, CounterRng& noise) {
  const std::size_t C = s.channels, L = s.length;
  Split out{Tensor(Shape{n, C, L}), Tensor(Shape{n})};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % s.num_classes;
    out.y[i] = static_cast<double>(k);
    const double w = kTwoPi * static_cast<double>(k + 1) / static_cast<double>(L);
    for (std::size_t c = 0; c < C; ++c) {
      const double phase = kTwoPi * rng.next_uniform();
      for (std::size_t t = 0; t < L; ++t)
        out.x(i, c, t) = std::sin(w * static_cast<double>(t) + phase) + s.noise_std * noise.next_normal();
    }
  }
  return out;
}

Split amplitude_reg(const DatasetSpec& s, std::size_t n, CounterRng& rng, CounterRng& noise) {
  const std::size_t C = s.channels, L = s.length;
  Split out{Tensor(Shape{n, C, L}), Tensor(Shape{n, 1})};
  for (std::size_t i = 0; i < n; ++i) {
    const double amp = 0.5 + 1.5 * rng.next_uniform();
    const double cycles = static_cast<double>(1 + rng.next_below(3));
    const double w = kTwoPi * cycles / static_cast<double>(L);
    for (std::size_t c = 0; c < C; ++c) {
      const double phase = kTwoPi * rng.next_uniform();
      for (std::size_t t = 0; t < L; ++t)
        out.x(i, c, t) = amp * std::sin(w * static_cast<double>(t) + phase) + s.noise_std * noise.next_normal();
    }
    out.y[i] = mean_abs_amplitude({out.x.data() + i * C * L, C * L});
  }
  return out;
}

Split ar_forecast(const DatasetSpec& s, std::size_t n, CounterRng& rng, CounterRng& noise) {
  const std::size_t C = s.channels, L = s.length, H = s.horizon, P = s.ar_coeffs.size();
  Split out{Tensor(Shape{n, C, L}), Tensor(Shape{n, C * H})};
  std::vector<double> series(kArBurnIn + L + H);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < series.size(); ++t) {
        double v = rng.next_normal();
        for (std::size_t j = 0; j < P && j < t; ++j) v += s.ar_coeffs[j] * series[t - 1 - j];
        series[t] = v;
      }
      for (std::size_t t = 0; t < L; ++t)
        out.x(i, c, t) = series[kArBurnIn + t] + s.noise_std * noise.next_normal();
      for (std::size_t h = 0; h < H; ++h)
        out.y(i, c * H + h) = series[kArBurnIn + L + h] + s.noise_std * noise.next_normal();
    }
  }
  return out;
}

Split generate_split(const DatasetSpec& s, std::size_t n, std::uint64_t seed, const std::string& split) {
  CounterRng rng(seed, stream_id(s.generator + "/" + split));
  CounterRng noise(seed, stream_id(s.generator + "/" + split + "/noise"));
  if (s.generator == "sine_class") return sine_class(s, n, rng, noise);
  if (s.generator == "amplitude_reg") return amplitude_reg(s, n, rng, noise);
  return ar_forecast(s, n, rng, noise);
}

}  // namespace

void DatasetSpec::validate() const {
  if (generator != "sine_class" && generator != "amplitude_reg" && generator != "ar_forecast")
    throw ConfigError("unknown dataset generator '" + generator +
                      "' (expected sine_class, amplitude_reg, ar_forecast)");
  if (n_train == 0 || n_test == 0) throw ConfigError("dataset sizes must be at least 1");
  if (channels == 0 || length == 0) throw ConfigError("dataset channels and length must be at least 1");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (generator == "sine_class" && num_classes < 2)
    throw ConfigError("sine_class needs num_classes >= 2");
  if (generator == "ar_forecast") {
    if (horizon == 0) throw ConfigError("ar_forecast needs horizon >= 1");
    if (ar_coeffs.empty()) throw ConfigError("ar_forecast needs at least one AR coefficient");
  }
}

TaskKind DatasetSpec::task() const {
  if (generator == "sine_class") return TaskKind::Classification;
  if (generator == "ar_forecast") return TaskKind::Forecasting;
  return TaskKind::Regression;
}

std::size_t DatasetSpec::output_dim() const {
  switch (task()) {
    case TaskKind::Classification: return num_classes;
    case TaskKind::Forecasting: return channels * horizon;
    case TaskKind::Regression: return 1;
  }
  return 1;
}

json DatasetSpec::to_json() const {
  json j{{"generator", generator}, {"n_train", n_train}, {"n_test", n_test},
         {"channels", channels},   {"length", length},   {"noise_std", noise_std}};
  if (generator == "sine_class") j["num_classes"] = num_classes;
  if (generator == "ar_forecast") {
    j["ar_coeffs"] = ar_coeffs;
    j["horizon"] = horizon;
  }
  return j;
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  DatasetSpec s;
  try {
    s.generator = j.value("generator", s.generator);
    s.n_train = j.value("n_train", s.n_train);
    s.n_test = j.value("n_test", s.n_test);
    s.channels = j.value("channels", s.channels);
    s.length = j.value("length", s.length);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.ar_coeffs = j.value("ar_coeffs", s.ar_coeffs);
    s.horizon = j.value("horizon", s.horizon);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  s.validate();
  return s;
}

Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Split train = generate_split(spec, spec.n_train, seed, "train");
  Split test = generate_split(spec, spec.n_test, seed, "test");
  return {std::move(train.x), std::move(train.y), std::move(test.x), std::move(test.y)};
}

double mean_abs_amplitude(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += std::abs(v);
  return s / static_cast<double>(values.size());
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin > end || end > t.dim(0))
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(t.shape()));
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = end - begin;
  Tensor out(shape);
  if (out.size()) std::memcpy(out.data(), t.data() + begin * row, out.bytes());
  return out;
}

std::vector<TimeSeriesBatch> make_batches(const Tensor& x, const Tensor& y, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (x.rank() != 3) throw ShapeError("make_batches expects [n, C, L], got " + to_string(x.shape()));
  if (y.rank() == 0 || y.dim(0) != x.dim(0))
    throw ShapeError("inputs " + to_string(x.shape()) + " and targets " + to_string(y.shape()) +
                     " disagree on item count");
  std::vector<TimeSeriesBatch> out;
  for (std::size_t b = 0; b < x.dim(0); b += batch_size) {
    const std::size_t e = std::min(x.dim(0), b + batch_size);
    out.emplace_back(slice_rows(x, b, e), slice_rows(y, b, e));
  }
  return out;
}

Tensor flatten_items(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("flatten_items expects rank >= 2, got " + to_string(x.shape()));
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

}  // namespace fmtk
