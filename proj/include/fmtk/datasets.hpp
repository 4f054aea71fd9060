#pragma once

#include <string>
#include <vector>

#include "fmtk/core.hpp"

namespace fmtk {

// Seeded synthetic tasks:
//   sine_class    K classes; class k is a sinusoid with k+1 cycles over L,
//                 random phase per channel, unit amplitude
//   amplitude_reg random amplitude in [0.5, 2], 1-3 cycles; target is the
//                 item's mean absolute value
//   ar_forecast   AR(2) per channel with unit innovations; target is the
//                 next `horizon` values of every channel, channel-major
// Gaussian observation noise of std noise_std is added to every value.
struct DatasetSpec {
  std::string generator = "sine_class";
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::size_t channels = 1;
  std::size_t length = 64;
  double noise_std = 0.1;
  std::size_t num_classes = 3;
  std::vector<double> ar_coeffs{0.6, -0.2};
  std::size_t horizon = 8;

  void validate() const;
  TaskKind task() const;
  // Decoder output width for this task: K, 1 or C*H.
  std::size_t output_dim() const;

  json to_json() const;
  static DatasetSpec from_json(const json& j);
};

struct Dataset {
  Tensor train_x;  // [n_train, C, L]
  Tensor train_y;  // [n_train] labels or [n_train, D]
  Tensor test_x;
  Tensor test_y;
};

Dataset generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

// Mean of |x| over all entries.
double mean_abs_amplitude(std::span<const double> values);

// Splits [n, ...] inputs and targets into consecutive batches; the last one
// may be short.
std::vector<TimeSeriesBatch> make_batches(const Tensor& x, const Tensor& y,
                                          std::size_t batch_size);

// Rows [begin, end) of a tensor along axis 0.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

// [n, C, L] -> [n, C*L].
Tensor flatten_items(const Tensor& x);

}  // namespace fmtk
