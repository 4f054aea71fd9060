#include "fmtk/losses.hpp"

#include <cmath>

#include "fmtk/kernels.hpp"

namespace fmtk {

std::vector<std::size_t> labels_from(const Tensor& labels, std::size_t num_classes) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (double v : labels.values()) {
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(num_classes)) {
      throw InputError("label " + std::to_string(v) + " outside class range [0, " +
                       std::to_string(num_classes) + ")");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

Var mse(const Var& pred, const Tensor& target) {
  if (pred.value().size() != target.size()) {
    throw ShapeError("mse: prediction " + to_string(pred.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const double n = static_cast<double>(target.size());
  const Eigen::ArrayXd diff = pred.value().array() - target.array();
  Tensor out = Tensor::scalar(diff.square().sum() / n);
  if (!pred.requires_grad()) return Var(std::move(out));
  return pred.tape()->record(std::move(out), [pred, diff, n](const Tensor& g) {
    Tensor gp(pred.shape());
    gp.array() = diff * (2.0 * g.item() / n);
    accumulate_grad(pred, gp);
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  const Tensor& z = logits.value();
  if (z.rows() != labels.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(z.rows()) + " logit rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t label : labels) {
    if (label >= z.cols()) {
      throw InputError("label " + std::to_string(label) + " outside class range [0, " +
                       std::to_string(z.cols()) + ")");
    }
  }
  const double n = static_cast<double>(labels.size());
  auto probs = std::make_shared<Tensor>(kernels::softmax_rows(z));
  double total = 0.0;
  const auto m = z.matrix();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double mx = m.row(r).maxCoeff();
    const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    total += lse - m(r, static_cast<Eigen::Index>(labels[i]));
  }
  Tensor out = Tensor::scalar(total / n);
  if (!logits.requires_grad()) return Var(std::move(out));
  return logits.tape()->record(std::move(out), [logits, labels, probs, n](const Tensor& g) {
    Tensor gz(*probs);
    auto gm = gz.matrix();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      gm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) -= 1.0;
    }
    gz.array() *= g.item() / n;
    accumulate_grad(logits, gz);
  });
}

Var hinge(const Var& scores, const std::vector<std::size_t>& labels, double margin) {
  const Tensor& s = scores.value();
  if (s.rows() != labels.size()) {
    throw ShapeError("hinge: " + std::to_string(s.rows()) + " score rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t K = s.cols();
  const std::size_t classes = K == 1 ? 2 : K;
  for (std::size_t label : labels) {
    if (label >= classes) {
      throw InputError("label " + std::to_string(label) + " outside class range [0, " +
                       std::to_string(classes) + ")");
    }
  }
  const double n = static_cast<double>(labels.size());
  auto sub = std::make_shared<Tensor>(s.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const bool positive = K == 1 ? labels[i] == 1 : labels[i] == k;
      const double y = positive ? 1.0 : -1.0;
      const double slack = margin - y * s[i * K + k];
      if (slack > 0.0) {
        total += slack;
        (*sub)[i * K + k] = -y;
      }
    }
  }
  Tensor out = Tensor::scalar(total / n);
  if (!scores.requires_grad()) return Var(std::move(out));
  return scores.tape()->record(std::move(out), [scores, sub, n](const Tensor& g) {
    Tensor gs(scores.shape());
    gs.array() = sub->array() * (g.item() / n);
    accumulate_grad(scores, gs);
  });
}

}  // namespace fmtk
