// SPDX-License-Identifier: Apache-2.0
//
// Two-phase distillation schedule. alpha_AKD holds at its initial value for
// the warm-up epochs, then decays linearly by 1/E_t per epoch; alpha_SKD
// ramps linearly from zero. The phase for an epoch is a pure function of the
// epoch index: AKD while alpha_AKD stays above the threshold lambda, SKD
// afterwards. All values are evaluated at epoch start.

#pragma once

#include <iosfwd>
#include <vector>

#include "askd/error.hpp"

namespace askd {

struct ScheduleConfig {
  double alpha_akd_initial = 1.0;
  double alpha_skd_initial = 0.8;
  double lambda = 0.5;     // AKD -> SKD switch threshold
  int warmup_epochs = 2;   // E_w
  int total_epochs = 10;   // E_t
  double tau = 2.0;        // distillation temperature (AKD phase)

  // Throws ConfigError naming the violated invariant.
  void validate() const;
};

enum class Phase { AKD, SKD };
const char* phase_name(Phase p);

// Warm-up hold, then max(0, initial - (e - E_w) / E_t).
double alpha_akd_at(int epoch, const ScheduleConfig& cfg);

// min(1, initial * e / E_t).
double alpha_skd_at(int epoch, const ScheduleConfig& cfg);

// AKD iff alpha_akd_at(epoch) > lambda. Requires 0 <= epoch < total_epochs.
Phase phase_at(int epoch, const ScheduleConfig& cfg);

struct EpochPlan {
  int epoch = 0;
  Phase phase = Phase::AKD;
  double alpha_akd = 0.0;
  double alpha_skd = 0.0;
};

// One plan per epoch in [0, total_epochs); AKD plans form a contiguous
// prefix, SKD plans the suffix.
std::vector<EpochPlan> trajectory(const ScheduleConfig& cfg);

// CSV: epoch,phase,alpha_akd,alpha_skd
void write_trajectory_csv(std::ostream& os, const ScheduleConfig& cfg);

}  // namespace askd
