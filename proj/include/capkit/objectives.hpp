#pragma once

#include <span>

#include "capkit/autograd.hpp"

namespace capkit {

struct LossWeights {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  /// Extra weight on the ground-truth-one coordinates of the SW vector.
  double sc = 20.0;

  void validate() const;
};

/// Mean next-token cross-entropy over positions with mask != 0 (all
/// positions when `mask` is empty). Throws if every position is masked.
ag::Var loss_l1(const ag::Var& logits_c, std::span<const int> targets,
                std::span<const double> mask = {});

/// MSE(pred, gt) + sc * MSE(pred * gt, gt), both means over the whole vector.
ag::Var loss_l2(const ag::Var& y_pred, std::span<const double> y_gt, double sc);

/// Cross-entropy of the Part A head averaged over SW target positions only;
/// zero when the caption has none.
ag::Var loss_l3(const ag::Var& logits_a, std::span<const int> targets,
                std::span<const double> sw_mask);

/// Weighted average (w1 l1 + w2 l2 + w3 l3) / (w1 + w2 + w3).
ag::Var total_loss(const ag::Var& l1, const ag::Var& l2, const ag::Var& l3, const LossWeights& w);
double total_loss(double l1, double l2, double l3, const LossWeights& w);

/// Minibatch form of the three losses. L1 and L3 are normalised by the
/// number of scored tokens across the batch and L2 by the number of clips,
/// so long captions do not dominate L2 and every SW token counts equally.
class BatchLoss {
 public:
  explicit BatchLoss(LossWeights w) : weights_(w) { weights_.validate(); }

  void add(const ag::Var& logits_c, const ag::Var& logits_a, const ag::Var& sw_pred,
           std::span<const int> targets, std::span<const double> sw_mask,
           std::span<const double> sw_gt);

  struct Terms {
    ag::Var l1, l2, l3, total;
  };
  Terms finish() const;

 private:
  LossWeights weights_;
  ag::Var l1_sum_, l2_sum_, l3_sum_;
  double tokens_ = 0.0;
  double sw_tokens_ = 0.0;
  int clips_ = 0;
};

}  // namespace capkit
