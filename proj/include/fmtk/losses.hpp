#pragma once

#include <cstddef>
#include <vector>

#include "fmtk/autodiff.hpp"

namespace fmtk {

// Class labels are carried in real tensors of shape [B]; this checks that
// every entry is an integer in [0, num_classes).
std::vector<std::size_t> labels_from(const Tensor& labels, std::size_t num_classes);

// Mean squared error over all elements.
Var mse(const Var& pred, const Tensor& target);

// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

// One-vs-rest hinge: mean over items of sum_k max(0, margin - y_k * s_k) with
// y_k = +1 for the item's class and -1 otherwise. A single score column is
// treated as a binary problem with label 1 as the positive class. The
// subgradient at the kink is 0.
Var hinge(const Var& scores, const std::vector<std::size_t>& labels, double margin = 1.0);

}  // namespace fmtk
