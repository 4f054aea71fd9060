#pragma once

#include <string>
#include <vector>

#include "fmtk/core.hpp"

namespace fmtk {

// Gradient-mode decoders train end to end through the tape; fit-mode
// decoders are solved on extracted features and never join the tape.
enum class DecoderMode { Gradient, Fit };

// Pools token-resolved embeddings, then flattens channel x embed into F =
// C * E columns. F must equal input_dim.
Var decoder_preprocess(const EmbeddingTensor& emb, std::size_t input_dim);

// Row-wise argmax; ties go to the lowest column. Returns labels as [B].
Tensor argmax_rows(const Tensor& scores);

class Decoder : public Component {
 public:
  using Component::Component;

  ComponentKind kind() const final { return ComponentKind::Decoder; }

  virtual DecoderMode mode() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual bool supports(TaskKind task) const = 0;

  Var preprocess(const EmbeddingTensor& emb) const { return decoder_preprocess(emb, input_dim()); }
  virtual Var forward(const Var& features, const ForwardContext& ctx) = 0;
  // Classification yields labels [B]; other tasks return the raw output.
  virtual Tensor postprocess(const Var& out, TaskKind task) const;

  virtual bool fitted() const { return true; }
  // Fit-mode training on features [n, F]. Classification decoders read
  // targets as integer labels [n].
  virtual void fit(const Tensor& features, const Tensor& targets);
};

struct MLPDecoderConfig {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::size_t hidden_dim = 1;
  std::uint64_t seed = 0;
};

// linear(F -> hidden) -> ReLU -> linear(hidden -> output).
class MLPDecoder final : public Decoder {
 public:
  explicit MLPDecoder(MLPDecoderConfig cfg, std::string name = "mlp");

  std::string type() const override { return "mlp"; }
  json config() const override;
  ParameterSet parameters() override;

  DecoderMode mode() const override { return DecoderMode::Gradient; }
  std::size_t input_dim() const override { return cfg_.input_dim; }
  std::size_t output_dim() const override { return cfg_.output_dim; }
  bool supports(TaskKind) const override { return true; }

  Var forward(const Var& features, const ForwardContext& ctx) override;

  Parameter& w1() noexcept { return w1_; }
  Parameter& b1() noexcept { return b1_; }
  Parameter& w2() noexcept { return w2_; }
  Parameter& b2() noexcept { return b2_; }

 private:
  MLPDecoderConfig cfg_;
  Parameter w1_, b1_, w2_, b2_;
};

// Per-feature z-score fitted on training features. Zero-variance columns
// keep scale 1.
struct Standardizer {
  Parameter mean;
  Parameter scale;

  void fit(const Tensor& x);
  Tensor apply(const Tensor& x) const;
};

struct RidgeSolution {
  Tensor weights;    // [F, d]
  Tensor intercept;  // [d]
};

// w = (XcᵀXc + λI)⁻¹ Xcᵀ yc on column-centered data when fit_intercept,
// intercept = ȳ - x̄ᵀw. Throws NumericalError for a singular system.
RidgeSolution ridge_fit(const Tensor& x, const Tensor& y, double lambda, bool fit_intercept = true);

struct RidgeConfig {
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  double lambda = 1.0;
  bool fit_intercept = true;
};

class RidgeDecoder final : public Decoder {
 public:
  explicit RidgeDecoder(RidgeConfig cfg, std::string name = "ridge", bool fitted = false);

  std::string type() const override { return "ridge"; }
  json config() const override;
  ParameterSet parameters() override;

  DecoderMode mode() const override { return DecoderMode::Fit; }
  std::size_t input_dim() const override { return cfg_.input_dim; }
  std::size_t output_dim() const override { return cfg_.output_dim; }
  bool supports(TaskKind task) const override { return task != TaskKind::Classification; }

  Var forward(const Var& features, const ForwardContext& ctx) override;
  bool fitted() const override { return fitted_; }
  void fit(const Tensor& features, const Tensor& targets) override;

 private:
  RidgeConfig cfg_;
  Parameter weights_;
  Parameter intercept_;
  bool fitted_;
};

struct KnnConfig {
  std::size_t input_dim = 1;
  std::size_t num_classes = 2;
  std::size_t k = 5;
  bool standardize = true;
};

// Majority vote among the k nearest exemplars (Euclidean). Distance ties go
// to the lower training index, vote ties to the lower label.
class KnnDecoder final : public Decoder {
 public:
  explicit KnnDecoder(KnnConfig cfg, std::string name = "knn", std::size_t fitted_exemplars = 0);

  std::string type() const override { return "knn"; }
  json config() const override;
  ParameterSet parameters() override;

  DecoderMode mode() const override { return DecoderMode::Fit; }
  std::size_t input_dim() const override { return cfg_.input_dim; }
  std::size_t output_dim() const override { return cfg_.num_classes; }
  bool supports(TaskKind task) const override { return task == TaskKind::Classification; }

  // Vote counts [B, K].
  Var forward(const Var& features, const ForwardContext& ctx) override;
  bool fitted() const override { return fitted_; }
  void fit(const Tensor& features, const Tensor& targets) override;

  Tensor predict(const Tensor& features);

 private:
  KnnConfig cfg_;
  Standardizer scaler_;
  Parameter exemplars_;
  Parameter labels_;
  bool fitted_;
};

struct LogisticConfig {
  std::size_t input_dim = 1;
  std::size_t num_classes = 2;
  double lr = 0.5;
  std::size_t epochs = 500;
  bool standardize = true;
};

// Multinomial softmax regression fitted by full-batch gradient descent from
// zero weights.
class LogisticDecoder final : public Decoder {
 public:
  explicit LogisticDecoder(LogisticConfig cfg, std::string name = "logistic", bool fitted = false);

  std::string type() const override { return "logistic"; }
  json config() const override;
  ParameterSet parameters() override;

  DecoderMode mode() const override { return DecoderMode::Fit; }
  std::size_t input_dim() const override { return cfg_.input_dim; }
  std::size_t output_dim() const override { return cfg_.num_classes; }
  bool supports(TaskKind task) const override { return task == TaskKind::Classification; }

  // Class probabilities [B, K].
  Var forward(const Var& features, const ForwardContext& ctx) override;
  bool fitted() const override { return fitted_; }
  void fit(const Tensor& features, const Tensor& targets) override;

  // Logits on already standardized features; exposed for gradient checks.
  Var logits(const Var& standardized, const ForwardContext& ctx);
  Tensor standardize(const Tensor& features) const;

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  LogisticConfig cfg_;
  Standardizer scaler_;
  Parameter weight_;
  Parameter bias_;
  bool fitted_;
  std::vector<std::string> warnings_;
};

struct SvmConfig {
  std::size_t input_dim = 1;
  std::size_t num_classes = 2;
  double c = 1.0;
  double lr = 0.01;
  std::size_t epochs = 200;
  bool standardize = true;
};

// One-vs-rest linear SVMs trained by full-batch subgradient descent on
//   mean_i hinge_i + (1 / (2 C n)) ||W||².
// Two classes collapse to one score column s with scores [-s, s].
class LinearSvmDecoder final : public Decoder {
 public:
  explicit LinearSvmDecoder(SvmConfig cfg, std::string name = "svm", bool fitted = false);

  std::string type() const override { return "svm"; }
  json config() const override;
  ParameterSet parameters() override;

  DecoderMode mode() const override { return DecoderMode::Fit; }
  std::size_t input_dim() const override { return cfg_.input_dim; }
  std::size_t output_dim() const override { return cfg_.num_classes; }
  bool supports(TaskKind task) const override { return task == TaskKind::Classification; }

  // Class scores [B, K].
  Var forward(const Var& features, const ForwardContext& ctx) override;
  bool fitted() const override { return fitted_; }
  void fit(const Tensor& features, const Tensor& targets) override;

  // Objective value before each epoch's update, plus the final value.
  const std::vector<double>& objective_trace() const noexcept { return trace_; }
  // Raw per-column scores y = W x + b on standardized features.
  Tensor raw_scores(const Tensor& features) const;

 private:
  std::size_t columns() const { return cfg_.num_classes == 2 ? 1 : cfg_.num_classes; }

  SvmConfig cfg_;
  Standardizer scaler_;
  Parameter weight_;
  Parameter bias_;
  bool fitted_;
  std::vector<double> trace_;
};

}  // namespace fmtk
