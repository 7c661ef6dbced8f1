#pragma once

#include <vector>

#include "cof/core/ops.hpp"

namespace cof::training {

// sum_j r_j * mean over sources and pixels of BCE(prob, gt).
// probs[j][n]: stage j, source n, sigmoid of the mask logits.
template <class T>
Var<T> separation_loss(const std::vector<std::vector<Var<T>>>& probs, const std::vector<Tensor<T>>& gt,
                       const std::vector<T>& r, T eps = T(1e-7)) {
  if (probs.empty() || probs.size() != r.size()) throw InvalidInput("separation loss: need one weight per stage");
  Var<T> total(Tensor<T>({1}, T(0)));
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j].size() != gt.size())
      throw InvalidInput("separation loss: stage " + std::to_string(j + 1) + " has " + std::to_string(probs[j].size()) +
                         " sources, ground truth has " + std::to_string(gt.size()));
    for (std::size_t n = 0; n < gt.size(); ++n) {
      if (probs[j][n].shape() != gt[n].shape())
        throw InvalidInput("separation loss: prediction " + shape_str(probs[j][n].shape()) + " vs ground truth " +
                           shape_str(gt[n].shape()));
      total = ops::add(total, ops::scale(ops::bce(probs[j][n], gt[n], eps), r[j] / static_cast<T>(gt.size())));
    }
  }
  return total;
}

// Per-stage terms of the same objective, without weights, for logging.
template <class T>
std::vector<double> stage_losses(const std::vector<std::vector<Var<T>>>& probs, const std::vector<Tensor<T>>& gt,
                                 T eps = T(1e-7)) {
  std::vector<double> out;
  NoGradGuard ng;
  for (auto& stage : probs) {
    double acc = 0;
    for (std::size_t n = 0; n < gt.size(); ++n) acc += ops::bce(stage[n], gt[n], eps).value()[0];
    out.push_back(acc / static_cast<double>(gt.size()));
  }
  return out;
}

}  // namespace cof::training
