// SPDX-License-Identifier: Apache-2.0
//
// Distillation losses: temperature softmax, teacher-reference KL, soft
// cross-entropy and the self-distillation target mix. All losses are scalar
// graph tensors, differentiable w.r.t. the student path only; teacher-side
// distributions are detached before use. Losses are means over (unmasked)
// positions so alpha weights stay comparable across batch sizes.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "askd/tensor.hpp"

namespace askd {

// Log epsilon shared by every loss.
inline constexpr double kLossEps = 1e-12;

// Per-position categorical distribution over the vocabulary.
struct ProbDist {
  TensorPtr probs;  // [positions x vocab]

  int64_t positions() const { return probs->shape[0]; }
  int64_t classes() const { return probs->shape[1]; }

  // Validates row sums (1 within 1e-6) and non-negativity.
  static ProbDist from_tensor(const TensorPtr& probs);
  // One-hot rows from label ids.
  static ProbDist one_hot(std::span<const int32_t> labels, int64_t classes);
};

// Optional row mask: 1 = count this position, 0 = padding. Means divide by
// the number of unmasked rows.
using RowMask = std::optional<std::vector<uint8_t>>;

// Row-wise softmax of logits / tau, max-stabilized. tau <= 0 is rejected.
ProbDist softmax_temperature(const TensorPtr& logits, double tau);

// tau^2 * mean over rows of sum_v p_t * log((p_t + eps) / (p_s + eps)).
// Teacher side is treated as a constant.
TensorPtr kl_loss(const ProbDist& p_teacher, const ProbDist& p_student, double tau,
                  const RowMask& mask = std::nullopt);

// alpha_akd * kl_loss. alpha outside [0, 1] is rejected.
TensorPtr akd_loss(const ProbDist& p_student, const ProbDist& p_teacher, double alpha_akd,
                   double tau, const RowMask& mask = std::nullopt);

// mean over rows of -sum_v target * log(p_student + eps); target is constant.
TensorPtr soft_ce_loss(const ProbDist& target, const ProbDist& p_student,
                       const RowMask& mask = std::nullopt);

// (1 - alpha_skd) * y + alpha_skd * p_prev, rows remain distributions.
ProbDist skd_target(const ProbDist& y_one_hot, const ProbDist& p_prev, double alpha_skd);

// soft_ce_loss(skd_target(y, p_prev, alpha_skd), p_student).
TensorPtr skd_loss(const ProbDist& y_one_hot, const ProbDist& p_prev,
                   const ProbDist& p_student, double alpha_skd,
                   const RowMask& mask = std::nullopt);

// l_s + l_akd, the AKD-phase total.
TensorPtr total_loss_akd(const TensorPtr& l_s, const TensorPtr& l_akd);

// Hard-label CE used for L_S and plain supervised training:
// soft_ce_loss(one_hot(labels), softmax(logits)).
TensorPtr hard_ce_loss(const TensorPtr& logits, std::span<const int32_t> labels,
                       const RowMask& mask = std::nullopt);

// Per-step component values for reporting and identity audits.
struct LossBreakdown {
  double l_s = 0.0;
  double l_kl = 0.0;
  double l_akd = 0.0;
  double l_skd = 0.0;
  double l_total = 0.0;
};

}  // namespace askd
