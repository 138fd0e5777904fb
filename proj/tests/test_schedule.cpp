// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "askd/rng.hpp"
#include "askd/schedule.hpp"

using namespace askd;

namespace {
ScheduleConfig defaults() { return ScheduleConfig{}; }
}  // namespace

TEST_CASE("alpha_akd holds through warm-up then decays linearly") {
  const auto cfg = defaults();
  CHECK(alpha_akd_at(0, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alpha_akd_at(1, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alpha_akd_at(2, cfg) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alpha_akd_at(4, cfg) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(alpha_akd_at(7, cfg) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(alpha_akd_at(-1, cfg), ValueError);
  // clamped at zero far past the end of the decay
  ScheduleConfig long_cfg = cfg;
  long_cfg.total_epochs = 10;
  CHECK(alpha_akd_at(100, long_cfg) == 0.0);
}

TEST_CASE("alpha_skd ramps from zero") {
  const auto cfg = defaults();
  CHECK(alpha_skd_at(0, cfg) == 0.0);
  CHECK(alpha_skd_at(8, cfg) == doctest::Approx(0.64).epsilon(1e-12));
  CHECK(alpha_skd_at(10, cfg) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS_AS(alpha_skd_at(-2, cfg), ValueError);
  // clamped at one for configs where the ramp overshoots
  ScheduleConfig hot = cfg;
  hot.alpha_skd_initial = 1.0;
  CHECK(alpha_skd_at(25, hot) == 1.0);
}

TEST_CASE("phase threshold: strict comparison against lambda") {
  const auto cfg = defaults();
  CHECK(phase_at(0, cfg) == Phase::AKD);
  CHECK(phase_at(6, cfg) == Phase::AKD);  // alpha 0.6 > 0.5
  CHECK(phase_at(7, cfg) == Phase::SKD);  // alpha 0.5 is not > 0.5
  CHECK_THROWS_AS(phase_at(10, cfg), ValueError);
  CHECK_THROWS_AS(phase_at(-1, cfg), ValueError);
}

TEST_CASE("default-constant trajectory") {
  const auto plans = trajectory(defaults());
  REQUIRE(plans.size() == 10);
  const double expect_akd[] = {1.0, 1.0, 1.0, 0.9, 0.8, 0.7, 0.6};
  for (int e = 0; e < 7; ++e) {
    CHECK(plans[e].phase == Phase::AKD);
    CHECK(plans[e].alpha_akd == doctest::Approx(expect_akd[e]).epsilon(1e-12));
  }
  const double expect_skd[] = {0.56, 0.64, 0.72};
  for (int e = 7; e < 10; ++e) {
    CHECK(plans[e].phase == Phase::SKD);
    CHECK(plans[e].alpha_skd == doctest::Approx(expect_skd[e - 7]).epsilon(1e-12));
  }
}

TEST_CASE("config validation names the violated invariant") {
  ScheduleConfig bad = defaults();
  bad.lambda = 1.0;  // lambda >= alpha_akd_initial would skip AKD entirely
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = defaults();
  bad.warmup_epochs = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = defaults();
  bad.tau = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = defaults();
  bad.alpha_skd_initial = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("short config: direct plug-in of the decay formula") {
  // E_w = 0, E_t = 2: epoch 1 sits exactly at the threshold, so the run is
  // one AKD epoch followed by one SKD epoch.
  ScheduleConfig cfg;
  cfg.alpha_akd_initial = 1.0;
  cfg.lambda = 0.5;
  cfg.warmup_epochs = 0;
  cfg.total_epochs = 2;
  const auto plans = trajectory(cfg);
  REQUIRE(plans.size() == 2);
  CHECK(plans[0].phase == Phase::AKD);
  CHECK(plans[0].alpha_akd == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(plans[1].alpha_akd == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(plans[1].phase == Phase::SKD);
}

TEST_CASE("monotonicity and phase-prefix properties over random configs") {
  Rng rng(5150);
  for (int trial = 0; trial < 100; ++trial) {
    ScheduleConfig cfg;
    cfg.alpha_akd_initial = rng.uniform(0.4, 1.0);
    cfg.lambda = rng.uniform(0.05, cfg.alpha_akd_initial - 0.05);
    cfg.alpha_skd_initial = rng.uniform(0.0, 1.0);
    cfg.total_epochs = static_cast<int>(rng.uniform_int(2, 24));
    cfg.warmup_epochs = static_cast<int>(rng.uniform_int(0, cfg.total_epochs - 1));
    cfg.validate();
    const auto plans = trajectory(cfg);
    bool seen_skd = false;
    for (size_t e = 0; e + 1 < plans.size(); ++e) {
      CHECK(plans[e].alpha_akd >= plans[e + 1].alpha_akd);   // non-increasing
      CHECK(plans[e].alpha_skd <= plans[e + 1].alpha_skd);   // non-decreasing
      if (static_cast<int>(e) < cfg.warmup_epochs) {
        CHECK(plans[e].alpha_akd == cfg.alpha_akd_initial);  // warm-up hold
      }
    }
    CHECK(plans[0].alpha_skd == 0.0);
    for (const auto& p : plans) {
      CHECK(p.alpha_akd >= 0.0);
      CHECK(p.alpha_akd <= 1.0);
      CHECK(p.alpha_skd >= 0.0);
      CHECK(p.alpha_skd <= 1.0);
      if (seen_skd) CHECK(p.phase == Phase::SKD);  // AKD+ SKD+ shape
      seen_skd = seen_skd || p.phase == Phase::SKD;
    }
  }
}

TEST_CASE("trajectory CSV shape") {
  std::ostringstream os;
  write_trajectory_csv(os, defaults());
  const std::string csv = os.str();
  CHECK(csv.rfind("epoch,phase,alpha_akd,alpha_skd\n", 0) == 0);
  CHECK(csv.find("7,skd,0.5,0.56") != std::string::npos);
  int lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 11);  // header + ten epochs
}
