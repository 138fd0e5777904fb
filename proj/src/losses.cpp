// SPDX-License-Identifier: Apache-2.0

#include "askd/losses.hpp"

#include <cmath>
#include <string>

namespace askd {

namespace {

void require_dist_shapes(const ProbDist& a, const ProbDist& b, const char* where) {
  if (a.probs->shape != b.probs->shape) {
    throw ShapeError(std::string(where) + ": distribution shapes differ, " +
                     shape_str(*a.probs) + " vs " + shape_str(*b.probs));
  }
}

void require_alpha(double alpha, const char* where) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValueError(std::string(where) + ": alpha must lie in [0, 1], got " +
                     std::to_string(alpha));
  }
}

void require_mask(const RowMask& mask, int64_t rows, const char* where) {
  if (!mask) return;
  if (static_cast<int64_t>(mask->size()) != rows) {
    throw ShapeError(std::string(where) + ": mask length " + std::to_string(mask->size()) +
                     " does not match " + std::to_string(rows) + " rows");
  }
}

// Mean of per-row values [N,1] over unmasked rows; scalar graph tensor.
TensorPtr masked_row_mean(const TensorPtr& per_row, const RowMask& mask) {
  const int64_t n = per_row->shape[0];
  if (!mask) {
    return ops::scale(ops::sum_reduce(per_row, -1), 1.0 / static_cast<double>(n));
  }
  int64_t kept = 0;
  std::vector<double> m(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    m[static_cast<size_t>(i)] = (*mask)[static_cast<size_t>(i)] ? 1.0 : 0.0;
    kept += (*mask)[static_cast<size_t>(i)] ? 1 : 0;
  }
  if (kept == 0) throw ValueError("loss mask excludes every position");
  auto mask_col = Tensor::from_data({n, 1}, std::move(m));
  auto masked = ops::mul(per_row, mask_col);
  return ops::scale(ops::sum_reduce(masked, -1), 1.0 / static_cast<double>(kept));
}

TensorPtr detach_probs(const ProbDist& d) {
  return d.probs->requires_grad ? Tensor::detached(*d.probs) : d.probs;
}

}  // namespace

ProbDist ProbDist::from_tensor(const TensorPtr& probs) {
  if (!probs->is_matrix()) {
    throw ShapeError("ProbDist: expected [positions x vocab], got " + shape_str(*probs));
  }
  const int64_t m = probs->shape[0], n = probs->shape[1];
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double p = probs->data[static_cast<size_t>(i * n + j)];
      if (p < 0.0) throw ValueError("ProbDist: negative probability in row " + std::to_string(i));
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValueError("ProbDist: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  return ProbDist{probs};
}

ProbDist ProbDist::one_hot(std::span<const int32_t> labels, int64_t classes) {
  std::vector<double> data(labels.size() * static_cast<size_t>(classes), 0.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ValueError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    data[i * static_cast<size_t>(classes) + static_cast<size_t>(labels[i])] = 1.0;
  }
  return ProbDist{Tensor::from_data({static_cast<int64_t>(labels.size()), classes},
                                    std::move(data))};
}

ProbDist softmax_temperature(const TensorPtr& logits, double tau) {
  if (!(tau > 0.0)) {
    throw ValueError("softmax_temperature: tau must be > 0, got " + std::to_string(tau));
  }
  if (!logits->is_matrix()) {
    throw ShapeError("softmax_temperature: expected [positions x vocab], got " +
                     shape_str(*logits));
  }
  return ProbDist{ops::softmax_rows(ops::scale(logits, 1.0 / tau))};
}

TensorPtr kl_loss(const ProbDist& p_teacher, const ProbDist& p_student, double tau,
                  const RowMask& mask) {
  require_dist_shapes(p_teacher, p_student, "kl_loss");
  require_mask(mask, p_teacher.positions(), "kl_loss");
  auto pt = detach_probs(p_teacher);
  auto log_t = ops::log(ops::add_scalar(pt, kLossEps));
  auto log_s = ops::log(ops::add_scalar(p_student.probs, kLossEps));
  auto diff = ops::add(log_t, ops::scale(log_s, -1.0));
  auto per_row = ops::sum_reduce(ops::mul(pt, diff), 1);
  return ops::scale(masked_row_mean(per_row, mask), tau * tau);
}

TensorPtr akd_loss(const ProbDist& p_student, const ProbDist& p_teacher, double alpha_akd,
                   double tau, const RowMask& mask) {
  require_alpha(alpha_akd, "akd_loss");
  return ops::scale(kl_loss(p_teacher, p_student, tau, mask), alpha_akd);
}

TensorPtr soft_ce_loss(const ProbDist& target, const ProbDist& p_student,
                       const RowMask& mask) {
  require_dist_shapes(target, p_student, "soft_ce_loss");
  require_mask(mask, target.positions(), "soft_ce_loss");
  auto tgt = detach_probs(target);
  auto log_s = ops::log(ops::add_scalar(p_student.probs, kLossEps));
  auto per_row = ops::scale(ops::sum_reduce(ops::mul(tgt, log_s), 1), -1.0);
  return masked_row_mean(per_row, mask);
}

ProbDist skd_target(const ProbDist& y_one_hot, const ProbDist& p_prev, double alpha_skd) {
  require_alpha(alpha_skd, "skd_target");
  require_dist_shapes(y_one_hot, p_prev, "skd_target");
  auto mixed = ops::add(ops::scale(detach_probs(y_one_hot), 1.0 - alpha_skd),
                        ops::scale(detach_probs(p_prev), alpha_skd));
  return ProbDist{mixed};
}

TensorPtr skd_loss(const ProbDist& y_one_hot, const ProbDist& p_prev,
                   const ProbDist& p_student, double alpha_skd, const RowMask& mask) {
  return soft_ce_loss(skd_target(y_one_hot, p_prev, alpha_skd), p_student, mask);
}

TensorPtr total_loss_akd(const TensorPtr& l_s, const TensorPtr& l_akd) {
  return ops::add(l_s, l_akd);
}

TensorPtr hard_ce_loss(const TensorPtr& logits, std::span<const int32_t> labels,
                       const RowMask& mask) {
  if (logits->shape[0] != static_cast<int64_t>(labels.size())) {
    throw ShapeError("hard_ce_loss: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(*logits) + " logits");
  }
  auto y = ProbDist::one_hot(labels, logits->shape[1]);
  return soft_ce_loss(y, softmax_temperature(logits, 1.0), mask);
}

}  // namespace askd
