#include "capkit/objectives.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "capkit/error.hpp"

namespace capkit {

void LossWeights::validate() const {
  CAPKIT_CHECK(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0, "bad_config", "loss weights must be non-negative");
  CAPKIT_CHECK(w1 + w2 + w3 > 0.0, "bad_config", "loss weights must not all be zero");
  CAPKIT_CHECK(sc > 0.0, "bad_config", "sc must be positive");
}

namespace {

std::vector<double> ones_or(std::span<const double> mask, std::size_t n) {
  if (mask.empty()) return std::vector<double>(n, 1.0);
  CAPKIT_CHECK(mask.size() == n, "shape_mismatch", "mask length differs from target length");
  std::vector<double> m(mask.begin(), mask.end());
  for (auto& x : m) x = x != 0.0 ? 1.0 : 0.0;
  return m;
}

ag::Var l2_sum_terms(const ag::Var& y_pred, std::span<const double> y_gt, double sc) {
  CAPKIT_CHECK(y_pred.size() == y_gt.size() && !y_gt.empty(), "shape_mismatch",
               "loss_l2: prediction and target lengths differ");
  for (double p : y_pred.value()) {
    CAPKIT_CHECK(p >= 0.0 && p <= 1.0 && std::isfinite(p), "out_of_range", "loss_l2: prediction outside [0, 1]");
  }
  for (double g : y_gt) CAPKIT_CHECK(g == 0.0 || g == 1.0, "out_of_range", "loss_l2: target must be 0 or 1");
  const int n = static_cast<int>(y_gt.size());
  const ag::Var pred = ag::reshape(y_pred, {n});
  const ag::Var gt = ag::constant({n}, std::vector<double>(y_gt.begin(), y_gt.end()));
  const ag::Var first = ag::mean(ag::square(ag::sub(pred, gt)));
  const ag::Var second = ag::mean(ag::square(ag::sub(ag::mul(pred, gt), gt)));
  return ag::add(first, ag::scale(second, sc));
}

}  // namespace

ag::Var loss_l1(const ag::Var& logits_c, std::span<const int> targets, std::span<const double> mask) {
  const auto m = ones_or(mask, targets.size());
  const double count = std::accumulate(m.begin(), m.end(), 0.0);
  CAPKIT_CHECK(count > 0.0, "empty_loss", "loss_l1: every position is masked");
  return ag::scale(ag::cross_entropy_sum(logits_c, targets, m), 1.0 / count);
}

ag::Var loss_l2(const ag::Var& y_pred, std::span<const double> y_gt, double sc) {
  CAPKIT_CHECK(sc > 0.0, "bad_config", "sc must be positive");
  return l2_sum_terms(y_pred, y_gt, sc);
}

ag::Var loss_l3(const ag::Var& logits_a, std::span<const int> targets, std::span<const double> sw_mask) {
  const auto m = ones_or(sw_mask, targets.size());
  const double count = std::accumulate(m.begin(), m.end(), 0.0);
  if (count == 0.0) return ag::constant({1}, {0.0});
  return ag::scale(ag::cross_entropy_sum(logits_a, targets, m), 1.0 / count);
}

ag::Var total_loss(const ag::Var& l1, const ag::Var& l2, const ag::Var& l3, const LossWeights& w) {
  w.validate();
  const double z = w.w1 + w.w2 + w.w3;
  return ag::add(ag::add(ag::scale(l1, w.w1 / z), ag::scale(l2, w.w2 / z)), ag::scale(l3, w.w3 / z));
}

double total_loss(double l1, double l2, double l3, const LossWeights& w) {
  w.validate();
  return (w.w1 * l1 + w.w2 * l2 + w.w3 * l3) / (w.w1 + w.w2 + w.w3);
}

void BatchLoss::add(const ag::Var& logits_c, const ag::Var& logits_a, const ag::Var& sw_pred,
                    std::span<const int> targets, std::span<const double> sw_mask,
                    std::span<const double> sw_gt) {
  const std::vector<double> all(targets.size(), 1.0);
  const auto m = ones_or(sw_mask, targets.size());
  auto acc = [](ag::Var& into, const ag::Var& v) { into = into.defined() ? ag::add(into, v) : v; };

  acc(l1_sum_, ag::cross_entropy_sum(logits_c, targets, all));
  tokens_ += static_cast<double>(targets.size());
  // Terms whose weight is zero are skipped so ablated heads get no gradient
  // and cost nothing.
  if (weights_.w2 > 0.0) acc(l2_sum_, l2_sum_terms(sw_pred, sw_gt, weights_.sc));
  const double sw = std::accumulate(m.begin(), m.end(), 0.0);
  if (weights_.w3 > 0.0 && sw > 0.0) acc(l3_sum_, ag::cross_entropy_sum(logits_a, targets, m));
  sw_tokens_ += sw;
  ++clips_;
}

BatchLoss::Terms BatchLoss::finish() const {
  CAPKIT_CHECK(clips_ > 0 && tokens_ > 0.0, "empty_loss", "batch has no scored tokens");
  const ag::Var zero = ag::constant({1}, {0.0});
  Terms t;
  t.l1 = ag::scale(l1_sum_, 1.0 / tokens_);
  t.l2 = l2_sum_.defined() ? ag::scale(l2_sum_, 1.0 / clips_) : zero;
  t.l3 = l3_sum_.defined() ? ag::scale(l3_sum_, 1.0 / sw_tokens_) : zero;
  t.total = total_loss(t.l1, t.l2, t.l3, weights_);
  return t;
}

}  // namespace capkit
