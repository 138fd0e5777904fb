// SPDX-License-Identifier: Apache-2.0
//
// Decoding and scoring: greedy decode, Levenshtein token-error-rate, the
// method-comparison harness, the minimum-alpha sweep and the relative
// latency benchmark.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "askd/trainer.hpp"

namespace askd {

// Argmax continuation from BOS until EOS or max_len emitted tokens.
// Returns content tokens only (no BOS/EOS).
std::vector<int32_t> greedy_decode(const Decoder& dec, const TensorPtr& features,
                                   int64_t max_len);

struct WerResult {
  double rate = 0.0;
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;

  int64_t errors() const { return substitutions + insertions + deletions; }
};

// Unit-cost Levenshtein alignment; ties prefer substitution, then insertion,
// then deletion, which pins the S/I/D decomposition. rate = errors / |ref|.
WerResult wer(std::span<const int32_t> reference, std::span<const int32_t> hypothesis);

struct EvalReport {
  std::string method;
  std::string split;
  double ter = 0.0;  // corpus rate: total errors / total reference length
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  int64_t ref_tokens = 0;
  std::vector<WerResult> per_utterance;
};

EvalReport evaluate(const Decoder& dec, const std::vector<Utterance>& utts,
                    const std::vector<TensorPtr>& features);

// --------------------------------------------------------------------------
// comparison harness (Table-1 style)
// --------------------------------------------------------------------------

struct CompareRow {
  Method method = Method::CE_ONLY;
  uint64_t seed = 0;
  double wer = 0.0;
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  bool diverged = false;
};

struct CompareResult {
  std::vector<CompareRow> rows;

  double mean_wer(Method m) const;
  double std_wer(Method m) const;
};

// Trains every (method, seed) pair via distill and scores test-set WER.
// Requires >= 3 seeds. Diverged runs are kept as NaN rows, never dropped.
// Per-run artifacts land under out_dir/<method>_seed<seed>/ when out_dir is
// non-empty.
CompareResult compare_methods(const TrainConfig& base, const DataBundle& data,
                              const std::vector<Method>& methods,
                              const std::vector<uint64_t>& seeds,
                              const std::optional<ModelSnapshot>& teacher,
                              const std::string& out_dir = "",
                              const TrainHooks& hooks = {});

// CSV: method,seed,wer,s,i,d
void write_compare_csv(std::ostream& os, const CompareResult& result);
// Human-readable mean +/- std table.
void write_compare_table(std::ostream& os, const CompareResult& result,
                         const std::vector<Method>& methods);

// --------------------------------------------------------------------------
// minimum-alpha sweep (Fig.-2 style)
// --------------------------------------------------------------------------

struct SweepRow {
  double min_alpha = 0.0;  // 1.0 marks the fixed-alpha control (no decay)
  uint64_t seed = 0;
  double wer = 0.0;
  bool diverged = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double mean_wer(double min_alpha) const;
};

// AKD runs whose alpha decays down to each floor, plus a fixed-alpha control
// at alpha_akd_initial. Floors must lie in (0, alpha_akd_initial).
SweepResult sweep_alpha_min(const TrainConfig& base, const DataBundle& data,
                            const std::vector<double>& min_alphas,
                            const std::vector<uint64_t>& seeds,
                            const std::optional<ModelSnapshot>& teacher,
                            const std::string& out_dir = "",
                            const TrainHooks& hooks = {});

// CSV: min_alpha,seed,wer
void write_sweep_csv(std::ostream& os, const SweepResult& result);

// --------------------------------------------------------------------------
// latency benchmark (Table-3 style)
// --------------------------------------------------------------------------

struct LatencyRow {
  std::string model;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double relative = 1.0;  // teacher mean / this model's mean
};

struct LatencyReport {
  LatencyRow teacher;
  LatencyRow student;
};

// Single-worker wall-clock greedy decode. One untimed warm-up pass per
// model; models alternate per repetition so clock drift cancels.
// repetitions must be >= 5.
LatencyReport bench_latency(const ModelSnapshot& teacher_snap,
                            const ModelSnapshot& student_snap,
                            const std::vector<Utterance>& utts,
                            const std::vector<TensorPtr>& features, int repetitions);

// CSV: model,mean_ms,median_ms,relative
void write_latency_csv(std::ostream& os, const LatencyReport& report);

}  // namespace askd
