// SPDX-License-Identifier: Apache-2.0

#include "askd/schedule.hpp"

#include <algorithm>
#include <ostream>
#include <string>

namespace askd {

void ScheduleConfig::validate() const {
  if (!(alpha_akd_initial > 0.0 && alpha_akd_initial <= 1.0)) {
    throw ConfigError("schedule: alpha_akd_initial must lie in (0, 1]");
  }
  if (!(alpha_skd_initial >= 0.0 && alpha_skd_initial <= 1.0)) {
    throw ConfigError("schedule: alpha_skd_initial must lie in [0, 1]");
  }
  if (!(lambda > 0.0 && lambda < alpha_akd_initial)) {
    throw ConfigError("schedule: lambda must satisfy 0 < lambda < alpha_akd_initial");
  }
  if (warmup_epochs < 0) throw ConfigError("schedule: warmup_epochs must be >= 0");
  if (!(warmup_epochs < total_epochs)) {
    throw ConfigError("schedule: warmup_epochs must be < total_epochs");
  }
  if (!(tau > 0.0)) throw ConfigError("schedule: tau must be > 0");
}

const char* phase_name(Phase p) { return p == Phase::AKD ? "akd" : "skd"; }

namespace {

void require_epoch(int epoch, const char* where) {
  if (epoch < 0) {
    throw ValueError(std::string(where) + ": negative epoch " + std::to_string(epoch));
  }
}

}  // namespace

double alpha_akd_at(int epoch, const ScheduleConfig& cfg) {
  require_epoch(epoch, "alpha_akd_at");
  if (epoch < cfg.warmup_epochs) return cfg.alpha_akd_initial;
  const double a = cfg.alpha_akd_initial -
                   static_cast<double>(epoch - cfg.warmup_epochs) /
                       static_cast<double>(cfg.total_epochs);
  return std::max(0.0, a);
}

double alpha_skd_at(int epoch, const ScheduleConfig& cfg) {
  require_epoch(epoch, "alpha_skd_at");
  const double a = cfg.alpha_skd_initial * static_cast<double>(epoch) /
                   static_cast<double>(cfg.total_epochs);
  return std::min(1.0, a);
}

Phase phase_at(int epoch, const ScheduleConfig& cfg) {
  require_epoch(epoch, "phase_at");
  if (epoch >= cfg.total_epochs) {
    throw ValueError("phase_at: epoch " + std::to_string(epoch) + " >= total_epochs " +
                     std::to_string(cfg.total_epochs));
  }
  return alpha_akd_at(epoch, cfg) > cfg.lambda ? Phase::AKD : Phase::SKD;
}

std::vector<EpochPlan> trajectory(const ScheduleConfig& cfg) {
  cfg.validate();
  std::vector<EpochPlan> plans;
  plans.reserve(static_cast<size_t>(cfg.total_epochs));
  for (int e = 0; e < cfg.total_epochs; ++e) {
    plans.push_back(EpochPlan{e, phase_at(e, cfg), alpha_akd_at(e, cfg), alpha_skd_at(e, cfg)});
  }
  return plans;
}

void write_trajectory_csv(std::ostream& os, const ScheduleConfig& cfg) {
  os << "epoch,phase,alpha_akd,alpha_skd\n";
  char buf[64];
  for (const EpochPlan& p : trajectory(cfg)) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.12g,%.12g\n", p.epoch, phase_name(p.phase),
                  p.alpha_akd, p.alpha_skd);
    os << buf;
  }
}

}  // namespace askd
