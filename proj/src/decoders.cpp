#include "fmtk/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmtk/losses.hpp"
#include "fmtk/ops.hpp"
#include "fmtk/random.hpp"

namespace fmtk {
namespace {

Tensor seeded_gaussian(const Shape& shape, double std, std::uint64_t seed, std::string_view stream) {
  CounterRng rng(seed, stream_id(stream));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std * rng.normal(i);
  return t;
}

void require_features(const Tensor& x, std::size_t input_dim, const std::string& who) {
  if (x.rank() != 2 || x.dim(1) != input_dim) {
    throw ShapeError(who + " expects features [n, " + std::to_string(input_dim) + "], got " +
                     to_string(x.shape()));
  }
}

void require_fitted(bool fitted, const std::string& who) {
  if (!fitted) throw StateError("decoder '" + who + "' must be fitted before predict");
}

}  // namespace

Var decoder_preprocess(const EmbeddingTensor& emb, std::size_t input_dim) {
  const EmbeddingTensor pooled =
      emb.layout() == EmbeddingLayout::TokenResolved ? pool_tokens(emb) : emb;
  const std::size_t B = pooled.batch();
  const std::size_t F = pooled.channels() * pooled.width();
  if (F != input_dim) {
    throw ShapeError("decoder input_dim " + std::to_string(input_dim) +
                     " does not match embedding features C*E = " +
                     std::to_string(pooled.channels()) + "*" + std::to_string(pooled.width()) +
                     " = " + std::to_string(F));
  }
  return reshape(pooled.var(), {B, F});
}

Tensor argmax_rows(const Tensor& scores) {
  Tensor out(Shape{scores.rows()});
  const auto m = scores.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<double>(best);
  }
  return out;
}

Tensor Decoder::postprocess(const Var& out, TaskKind task) const {
  if (task == TaskKind::Classification) return argmax_rows(out.value());
  return out.value();
}

void Decoder::fit(const Tensor&, const Tensor&) {
  throw StateError("decoder '" + name() + "' (" + type() + ") is trained by gradient, not fit");
}

// MLP

MLPDecoder::MLPDecoder(MLPDecoderConfig cfg, std::string name)
    : Decoder(std::move(name)), cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.output_dim < 1 || cfg.hidden_dim < 1) {
    throw ConfigError("mlp decoder dims must all be >= 1");
  }
  w1_ = Parameter(seeded_gaussian({cfg.hidden_dim, cfg.input_dim},
                                  std::sqrt(2.0 / static_cast<double>(cfg.input_dim)), cfg.seed, "w1"));
  b1_ = Parameter(Tensor::zeros({cfg.hidden_dim}));
  w2_ = Parameter(seeded_gaussian({cfg.output_dim, cfg.hidden_dim},
                                  std::sqrt(1.0 / static_cast<double>(cfg.hidden_dim)), cfg.seed, "w2"));
  b2_ = Parameter(Tensor::zeros({cfg.output_dim}));
}

json MLPDecoder::config() const {
  return {{"input_dim", cfg_.input_dim},
          {"output_dim", cfg_.output_dim},
          {"hidden_dim", cfg_.hidden_dim},
          {"seed", cfg_.seed}};
}

ParameterSet MLPDecoder::parameters() {
  ParameterSet set;
  set.add("fc1.weight", w1_);
  set.add("fc1.bias", b1_);
  set.add("fc2.weight", w2_);
  set.add("fc2.bias", b2_);
  return set;
}

Var MLPDecoder::forward(const Var& features, const ForwardContext& ctx) {
  require_features(features.value(), cfg_.input_dim, "mlp decoder '" + name() + "'");
  Var h = relu(linear(features, ctx.param(w1_), ctx.param(b1_)));
  return linear(h, ctx.param(w2_), ctx.param(b2_));
}

// Standardizer

void Standardizer::fit(const Tensor& x) {
  const auto m = x.matrix();
  const double n = static_cast<double>(m.rows());
  mean = Parameter(Tensor(Shape{x.cols()}));
  scale = Parameter(Tensor(Shape{x.cols()}, 1.0));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mu = m.col(c).mean();
    const double var = (m.col(c).array() - mu).square().sum() / n;
    mean.value[static_cast<std::size_t>(c)] = mu;
    scale.value[static_cast<std::size_t>(c)] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

Tensor Standardizer::apply(const Tensor& x) const {
  Tensor out(x.shape());
  out.matrix() =
      ((x.matrix().rowwise() - mean.value.row_vector()).array().rowwise() /
       scale.value.row_vector().array())
          .matrix();
  return out;
}

// Ridge

RidgeSolution ridge_fit(const Tensor& x, const Tensor& y, double lambda, bool fit_intercept) {
  if (x.rank() != 2 || x.dim(0) < 1) throw ShapeError("ridge_fit: X must be [n, F] with n >= 1");
  if (y.rank() == 0 || y.dim(0) != x.dim(0)) {
    throw ShapeError("ridge_fit: y " + to_string(y.shape()) + " vs X " + to_string(x.shape()));
  }
  if (!(lambda >= 0.0)) throw ConfigError("ridge_fit: lambda must be >= 0");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto F = static_cast<Eigen::Index>(x.dim(1));
  const Eigen::Index d = y.rank() == 1 ? 1 : static_cast<Eigen::Index>(y.cols());
  Eigen::MatrixXd X = x.matrix();
  Eigen::MatrixXd Y = Eigen::Map<const RowMatrix<double>>(y.data(), n, d);
  Eigen::RowVectorXd x_mean = Eigen::RowVectorXd::Zero(F);
  Eigen::RowVectorXd y_mean = Eigen::RowVectorXd::Zero(d);
  if (fit_intercept) {
    x_mean = X.colwise().mean();
    y_mean = Y.colwise().mean();
    X.rowwise() -= x_mean;
    Y.rowwise() -= y_mean;
  }
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd diag = ldlt.vectorD().cwiseAbs();
  const double tol = 1e-12 * std::max(1.0, diag.maxCoeff()) * static_cast<double>(F);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || diag.minCoeff() <= tol) {
    throw NumericalError("ridge_fit: normal equations are singular; use lambda > 0");
  }
  const Eigen::MatrixXd W = ldlt.solve(X.transpose() * Y);
  RidgeSolution sol{Tensor(Shape{static_cast<std::size_t>(F), static_cast<std::size_t>(d)}),
                    Tensor(Shape{static_cast<std::size_t>(d)})};
  sol.weights.matrix() = W;
  const Eigen::RowVectorXd b = y_mean - x_mean * W;
  for (Eigen::Index j = 0; j < d; ++j) sol.intercept[static_cast<std::size_t>(j)] = b(j);
  return sol;
}

RidgeDecoder::RidgeDecoder(RidgeConfig cfg, std::string name, bool fitted)
    : Decoder(std::move(name)),
      cfg_(cfg),
      weights_(Tensor::zeros({cfg.input_dim, cfg.output_dim})),
      intercept_(Tensor::zeros({cfg.output_dim})),
      fitted_(fitted) {
  if (cfg.input_dim < 1 || cfg.output_dim < 1) throw ConfigError("ridge dims must be >= 1");
  if (!(cfg.lambda >= 0.0)) throw ConfigError("ridge lambda must be >= 0");
}

json RidgeDecoder::config() const {
  return {{"input_dim", cfg_.input_dim},
          {"output_dim", cfg_.output_dim},
          {"lambda", cfg_.lambda},
          {"fit_intercept", cfg_.fit_intercept},
          {"fitted", fitted_}};
}

ParameterSet RidgeDecoder::parameters() {
  ParameterSet set;
  set.add("weights", weights_);
  set.add("intercept", intercept_);
  return set;
}

void RidgeDecoder::fit(const Tensor& features, const Tensor& targets) {
  require_features(features, cfg_.input_dim, "ridge decoder '" + name() + "'");
  const std::size_t d = targets.rank() == 1 ? 1 : targets.cols();
  if (d != cfg_.output_dim) {
    throw ShapeError("ridge decoder output_dim " + std::to_string(cfg_.output_dim) +
                     " vs target width " + std::to_string(d));
  }
  RidgeSolution sol = ridge_fit(features, targets, cfg_.lambda, cfg_.fit_intercept);
  weights_.value = std::move(sol.weights);
  intercept_.value = std::move(sol.intercept);
  fitted_ = true;
}

Var RidgeDecoder::forward(const Var& features, const ForwardContext&) {
  require_fitted(fitted_, name());
  require_features(features.value(), cfg_.input_dim, "ridge decoder '" + name() + "'");
  Tensor out(Shape{features.value().rows(), cfg_.output_dim});
  out.matrix().noalias() = features.value().matrix() * weights_.value.matrix();
  out.matrix().rowwise() += intercept_.value.row_vector();
  return Var(std::move(out));
}

// KNN

KnnDecoder::KnnDecoder(KnnConfig cfg, std::string name, std::size_t fitted_exemplars)
    : Decoder(std::move(name)),
      cfg_(cfg),
      scaler_{Parameter(Tensor::zeros({cfg.input_dim})), Parameter(Tensor({cfg.input_dim}, 1.0))},
      exemplars_(Tensor::zeros({fitted_exemplars, cfg.input_dim})),
      labels_(Tensor::zeros({fitted_exemplars})),
      fitted_(fitted_exemplars > 0) {
  if (cfg.input_dim < 1 || cfg.num_classes < 1) throw ConfigError("knn dims must be >= 1");
  if (cfg.k < 1) throw ConfigError("knn: k must be >= 1");
}

json KnnDecoder::config() const {
  return {{"input_dim", cfg_.input_dim},
          {"num_classes", cfg_.num_classes},
          {"k", cfg_.k},
          {"standardize", cfg_.standardize},
          {"num_exemplars", fitted_ ? exemplars_.value.dim(0) : 0}};
}

ParameterSet KnnDecoder::parameters() {
  ParameterSet set;
  set.add("scaler.mean", scaler_.mean);
  set.add("scaler.scale", scaler_.scale);
  set.add("exemplars", exemplars_);
  set.add("labels", labels_);
  return set;
}

void KnnDecoder::fit(const Tensor& features, const Tensor& targets) {
  require_features(features, cfg_.input_dim, "knn decoder '" + name() + "'");
  const std::size_t n = features.dim(0);
  if (cfg_.k > n) {
    throw ConfigError("knn: k = " + std::to_string(cfg_.k) + " exceeds " + std::to_string(n) +
                      " training points");
  }
  if (targets.size() != n) throw ShapeError("knn: one label per training row required");
  labels_from(targets, cfg_.num_classes);
  if (cfg_.standardize) {
    scaler_.fit(features);
  } else {
    scaler_.mean.value.fill(0.0);
    scaler_.scale.value.fill(1.0);
  }
  exemplars_.value = scaler_.apply(features);
  labels_.value = targets.reshaped({n});
  fitted_ = true;
}

Var KnnDecoder::forward(const Var& features, const ForwardContext&) {
  require_fitted(fitted_, name());
  require_features(features.value(), cfg_.input_dim, "knn decoder '" + name() + "'");
  const Tensor q = scaler_.apply(features.value());
  const std::size_t n = exemplars_.value.dim(0);
  const std::size_t F = cfg_.input_dim;
  const std::size_t k = cfg_.k;
  Tensor votes(Shape{q.rows(), cfg_.num_classes});
  std::vector<double> dist(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const double* qi = q.data() + i * F;
    for (std::size_t j = 0; j < n; ++j) {
      const double* xj = exemplars_.value.data() + j * F;
      double s = 0.0;
      for (std::size_t f = 0; f < F; ++f) {
        const double diff = qi[f] - xj[f];
        s += diff * diff;
      }
      dist[j] = s;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                      });
    for (std::size_t j = 0; j < k; ++j) {
      votes(i, static_cast<std::size_t>(labels_.value[order[j]])) += 1.0;
    }
  }
  return Var(std::move(votes));
}

Tensor KnnDecoder::predict(const Tensor& features) {
  return argmax_rows(forward(Var(features), ForwardContext::eval()).value());
}

// Logistic

LogisticDecoder::LogisticDecoder(LogisticConfig cfg, std::string name, bool fitted)
    : Decoder(std::move(name)),
      cfg_(cfg),
      scaler_{Parameter(Tensor::zeros({cfg.input_dim})), Parameter(Tensor({cfg.input_dim}, 1.0))},
      weight_(Tensor::zeros({cfg.num_classes, cfg.input_dim})),
      bias_(Tensor::zeros({cfg.num_classes})),
      fitted_(fitted) {
  if (cfg.input_dim < 1 || cfg.num_classes < 2) {
    throw ConfigError("logistic decoder needs input_dim >= 1 and num_classes >= 2");
  }
  if (cfg.epochs < 1 || !(cfg.lr > 0.0)) throw ConfigError("logistic decoder needs lr > 0, epochs >= 1");
}

json LogisticDecoder::config() const {
  return {{"input_dim", cfg_.input_dim}, {"num_classes", cfg_.num_classes},
          {"lr", cfg_.lr},               {"epochs", cfg_.epochs},
          {"standardize", cfg_.standardize}, {"fitted", fitted_}};
}

ParameterSet LogisticDecoder::parameters() {
  ParameterSet set;
  set.add("scaler.mean", scaler_.mean);
  set.add("scaler.scale", scaler_.scale);
  set.add("weight", weight_);
  set.add("bias", bias_);
  return set;
}

Tensor LogisticDecoder::standardize(const Tensor& features) const { return scaler_.apply(features); }

Var LogisticDecoder::logits(const Var& standardized, const ForwardContext& ctx) {
  return linear(standardized, ctx.param(weight_), ctx.param(bias_));
}

void LogisticDecoder::fit(const Tensor& features, const Tensor& targets) {
  require_features(features, cfg_.input_dim, "logistic decoder '" + name() + "'");
  if (targets.size() != features.dim(0)) throw ShapeError("logistic: one label per row required");
  const auto labels = labels_from(targets, cfg_.num_classes);
  warnings_.clear();
  std::vector<std::size_t> counts(cfg_.num_classes, 0);
  for (std::size_t l : labels) ++counts[l];
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) warnings_.push_back("class " + std::to_string(k) + " has no training items");
  }
  if (cfg_.standardize) {
    scaler_.fit(features);
  } else {
    scaler_.mean.value.fill(0.0);
    scaler_.scale.value.fill(1.0);
  }
  const Var x(scaler_.apply(features));
  weight_.value.fill(0.0);
  bias_.value.fill(0.0);
  ParameterSet params;
  params.add("weight", weight_);
  params.add("bias", bias_);
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    params.zero_grad();
    Tape tape(params);
    ForwardContext ctx;
    ctx.tape = &tape;
    tape.backward(cross_entropy(logits(x, ctx), labels));
    weight_.value.array() -= cfg_.lr * weight_.grad.array();
    bias_.value.array() -= cfg_.lr * bias_.grad.array();
  }
  params.zero_grad();
  fitted_ = true;
}

Var LogisticDecoder::forward(const Var& features, const ForwardContext&) {
  require_fitted(fitted_, name());
  require_features(features.value(), cfg_.input_dim, "logistic decoder '" + name() + "'");
  return Var(kernels::softmax_rows(
      logits(Var(scaler_.apply(features.value())), ForwardContext::eval()).value()));
}

// SVM

LinearSvmDecoder::LinearSvmDecoder(SvmConfig cfg, std::string name, bool fitted)
    : Decoder(std::move(name)),
      cfg_(cfg),
      scaler_{Parameter(Tensor::zeros({cfg.input_dim})), Parameter(Tensor({cfg.input_dim}, 1.0))},
      fitted_(fitted) {
  if (cfg.input_dim < 1 || cfg.num_classes < 2) {
    throw ConfigError("svm decoder needs input_dim >= 1 and num_classes >= 2");
  }
  if (!(cfg.c > 0.0) || !(cfg.lr > 0.0) || cfg.epochs < 1) {
    throw ConfigError("svm decoder needs c > 0, lr > 0, epochs >= 1");
  }
  weight_ = Parameter(Tensor::zeros({columns(), cfg.input_dim}));
  bias_ = Parameter(Tensor::zeros({columns()}));
}

json LinearSvmDecoder::config() const {
  return {{"input_dim", cfg_.input_dim}, {"num_classes", cfg_.num_classes},
          {"c", cfg_.c},                 {"lr", cfg_.lr},
          {"epochs", cfg_.epochs},       {"standardize", cfg_.standardize},
          {"fitted", fitted_}};
}

ParameterSet LinearSvmDecoder::parameters() {
  ParameterSet set;
  set.add("scaler.mean", scaler_.mean);
  set.add("scaler.scale", scaler_.scale);
  set.add("weight", weight_);
  set.add("bias", bias_);
  return set;
}

void LinearSvmDecoder::fit(const Tensor& features, const Tensor& targets) {
  require_features(features, cfg_.input_dim, "svm decoder '" + name() + "'");
  if (targets.size() != features.dim(0)) throw ShapeError("svm: one label per row required");
  const auto labels = labels_from(targets, cfg_.num_classes);
  if (cfg_.standardize) {
    scaler_.fit(features);
  } else {
    scaler_.mean.value.fill(0.0);
    scaler_.scale.value.fill(1.0);
  }
  const Var x(scaler_.apply(features));
  const double reg = 1.0 / (cfg_.c * static_cast<double>(features.dim(0)));
  weight_.value.fill(0.0);
  bias_.value.fill(0.0);
  ParameterSet params;
  params.add("weight", weight_);
  params.add("bias", bias_);
  trace_.clear();
  auto objective = [&](const ForwardContext& ctx) {
    Var w = ctx.param(weight_);
    Var scores = linear(x, w, ctx.param(bias_));
    return add(hinge(scores, labels), scale(sum_squares(w), 0.5 * reg));
  };
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    params.zero_grad();
    Tape tape(params);
    ForwardContext ctx;
    ctx.tape = &tape;
    Var loss = objective(ctx);
    trace_.push_back(loss.value().item());
    tape.backward(loss);
    weight_.value.array() -= cfg_.lr * weight_.grad.array();
    bias_.value.array() -= cfg_.lr * bias_.grad.array();
  }
  params.zero_grad();
  trace_.push_back(objective(ForwardContext{}).value().item());
  fitted_ = true;
}

Tensor LinearSvmDecoder::raw_scores(const Tensor& features) const {
  return kernels::linear(scaler_.apply(features), weight_.value, &bias_.value);
}

Var LinearSvmDecoder::forward(const Var& features, const ForwardContext&) {
  require_fitted(fitted_, name());
  require_features(features.value(), cfg_.input_dim, "svm decoder '" + name() + "'");
  Tensor raw = raw_scores(features.value());
  if (cfg_.num_classes != 2) return Var(std::move(raw));
  Tensor scores(Shape{raw.rows(), 2});
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    scores(i, 0) = -raw[i];
    scores(i, 1) = raw[i];
  }
  return Var(std::move(scores));
}

}  // namespace fmtk
