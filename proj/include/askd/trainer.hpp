// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration: teacher pretraining, the two-phase distillation
// loop (AKD epochs against a frozen teacher, SKD epochs against the
// previous-epoch student snapshot) and the fixed-alpha / CE / pure-SKD
// baselines. One loss branch updates the student per epoch; every epoch
// boundary persists a snapshot so runs resume bit-identically.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "askd/losses.hpp"
#include "askd/model.hpp"
#include "askd/schedule.hpp"
#include "askd/task.hpp"

namespace askd {

enum class Method { CE_ONLY, KD_FIXED, SKD_ONLY, AKD, ASKD };
const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
  ScheduleConfig schedule;
  ModelConfig student;
  ModelConfig teacher;
  EncoderConfig encoder;
  TaskSpec task;

  Method method = Method::ASKD;
  double lr = 0.2;
  // Plain SGD is the faithful default; momentum and Adam sit behind config.
  double momentum = 0.0;
  bool adam = false;
  int64_t batch_size = 16;
  uint64_t seed = 1;
  double kd_fixed_alpha = 1.0;  // KD_FIXED weight
  double akd_floor = 0.5;       // AKD-only decay floor (alpha sweep knob)

  // teacher pretraining (artifact plumbing, not part of the algorithm)
  int pretrain_max_epochs = 40;
  int pretrain_patience = 3;
  double pretrain_lr = 0.002;
  double pretrain_momentum = 0.9;
  bool pretrain_adam = true;

  std::string data_dir;
  std::string teacher_path;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  uint64_t hash() const;
};

// Datasets plus cached frozen-encoder features (teacher and student share
// the encoder, so one feature set serves both).
struct DataBundle {
  TaskSpec spec;
  std::vector<Utterance> train, val, test;
  std::vector<TensorPtr> train_features, val_features, test_features;
};

DataBundle make_bundle(const TaskSpec& spec, std::vector<Utterance> train,
                       std::vector<Utterance> val, std::vector<Utterance> test,
                       const FrozenEncoder& encoder);
// Reads task_spec.json + {train,val,test}.jsonl from a gen-data directory.
DataBundle load_data_dir(const std::string& dir, const FrozenEncoder& encoder);

struct EpochReport {
  int epoch = 0;
  std::string phase;  // "akd", "skd", "ce" or "kd"
  LossBreakdown mean_loss;
  double val_ter = 0.0;
  double wall_seconds = 0.0;  // console-only; never serialized
  // Per-batch components for identity audits (populated when
  // TrainHooks::keep_batch_losses).
  std::vector<LossBreakdown> batch_losses;

  std::string to_json() const;
  static EpochReport from_json(const std::string& line);
};

struct TrainHooks {
  bool keep_batch_losses = false;
  bool quiet = true;  // suppress per-epoch console lines
};

// Fixed per-train-utterance teacher logits; valid while the teacher stays
// frozen, which the AKD phase guarantees.
struct TeacherLogitCache {
  std::vector<TensorPtr> logits;  // [targets x vocab] per utterance
};
TeacherLogitCache cache_teacher_logits(const Decoder& teacher, const DataBundle& data);

// Hard-label CE training of the teacher until validation token-error stops
// improving (patience epochs) or the cap is reached; returns the best
// checkpoint. Rejects teachers no larger than the student.
ModelSnapshot pretrain_teacher(const TrainConfig& cfg, const DataBundle& data,
                               const FrozenEncoder& encoder,
                               const TrainHooks& hooks = {});

struct SgdState {
  double momentum = 0.0;
  bool adam = false;  // Adam(0.9, 0.999) overrides the momentum setting
  int64_t steps = 0;
  std::vector<std::vector<double>> velocity;  // momentum buffer / Adam m
  std::vector<std::vector<double>> second;    // Adam v
  void step(const std::vector<TensorPtr>& params, double lr);
};

// One AKD-form epoch: L_total = L_S + alpha * tau^2 KL(P_T || P_S).
EpochReport run_epoch_akd(Decoder& student, const TeacherLogitCache& teacher,
                          const DataBundle& data, const EpochPlan& plan,
                          const TrainConfig& cfg, SgdState& opt,
                          const TrainHooks& hooks = {});

// One SKD epoch: targets mix hard labels with the previous-epoch snapshot's
// tau=1 distribution, held fixed for the whole epoch.
EpochReport run_epoch_skd(Decoder& student, const ModelSnapshot& prev_snapshot,
                          const DataBundle& data, const EpochPlan& plan,
                          const TrainConfig& cfg, SgdState& opt,
                          const TrainHooks& hooks = {});

// Hard-label CE epoch (CE_ONLY baseline, SKD_ONLY bootstrap, pretraining).
EpochReport run_epoch_ce(Decoder& student, const DataBundle& data, int epoch,
                         const TrainConfig& cfg, SgdState& opt, double lr,
                         const TrainHooks& hooks = {});

struct DistillResult {
  ModelSnapshot final_snapshot;
  std::vector<EpochReport> reports;
};

// Runs the configured method for schedule.total_epochs epochs. When out_dir
// is non-empty the run directory holds config.json, epoch_<e>.snap and
// reports.jsonl; resume picks up after the last complete epoch and rejects
// config-hash mismatches. shared_teacher_cache, when given, must hold the
// logits of `teacher` over data.train; harnesses pass it to avoid rebuilding
// the cache per run.
DistillResult distill(const TrainConfig& cfg, const DataBundle& data,
                      const std::optional<ModelSnapshot>& teacher,
                      const std::string& out_dir = "", bool resume = false,
                      const TrainHooks& hooks = {},
                      const TeacherLogitCache* shared_teacher_cache = nullptr);

// Corpus token-error-rate of greedy decodes against references.
double validation_ter(const Decoder& dec, const std::vector<Utterance>& utts,
                      const std::vector<TensorPtr>& features);

}  // namespace askd
