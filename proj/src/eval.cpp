// SPDX-License-Identifier: Apache-2.0

#include "askd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <ostream>

#include "askd/rng.hpp"

namespace askd {

namespace fs = std::filesystem;

std::vector<int32_t> greedy_decode(const Decoder& dec, const TensorPtr& features,
                                   int64_t max_len) {
  if (max_len < 1 || max_len > dec.config().max_tgt_len) {
    throw ValueError("greedy_decode: max_len must lie in [1, max_tgt_len]");
  }
  std::vector<int32_t> seq{kBosToken};
  std::vector<int32_t> out;
  const int64_t v = dec.config().vocab_size;
  while (static_cast<int64_t>(out.size()) < max_len &&
         static_cast<int64_t>(seq.size()) < dec.config().max_tgt_len) {
    const auto lg = dec.logits(seq, features);
    const int64_t t = lg->shape[0] - 1;
    const double* row = lg->data.data() + t * v;
    int32_t best = 0;
    for (int64_t j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = static_cast<int32_t>(j);
    }
    if (best == kEosToken) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

WerResult wer(std::span<const int32_t> reference, std::span<const int32_t> hypothesis) {
  if (reference.empty()) throw ValueError("wer: empty reference");
  const size_t n = reference.size(), m = hypothesis.size();
  std::vector<int32_t> d((n + 1) * (m + 1), 0);
  auto at = [&](size_t i, size_t j) -> int32_t& { return d[i * (m + 1) + j]; };
  for (size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int32_t>(i);
  for (size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int32_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      const int32_t sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      const int32_t ins = at(i, j - 1) + 1;
      const int32_t del = at(i - 1, j) + 1;
      at(i, j) = std::min({sub, ins, del});
    }
  }

  // Backtrace with the tie preference substitution > insertion > deletion.
  WerResult r;
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1)) {
      if (reference[i - 1] != hypothesis[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++r.insertions;
      --j;
    } else {
      ++r.deletions;
      --i;
    }
  }
  r.rate = static_cast<double>(r.errors()) / static_cast<double>(n);
  return r;
}

EvalReport evaluate(const Decoder& dec, const std::vector<Utterance>& utts,
                    const std::vector<TensorPtr>& features) {
  EvalReport report;
  const int64_t max_len = dec.config().max_tgt_len - 1;
  for (size_t i = 0; i < utts.size(); ++i) {
    const auto& toks = utts[i].tokens;
    const std::span<const int32_t> ref(toks.data() + 1, toks.size() - 2);
    const auto hyp = greedy_decode(dec, features[i], max_len);
    const WerResult w = wer(ref, hyp);
    report.substitutions += w.substitutions;
    report.insertions += w.insertions;
    report.deletions += w.deletions;
    report.ref_tokens += static_cast<int64_t>(ref.size());
    report.per_utterance.push_back(w);
  }
  report.ter = report.ref_tokens == 0
                   ? 0.0
                   : static_cast<double>(report.substitutions + report.insertions +
                                         report.deletions) /
                         static_cast<double>(report.ref_tokens);
  return report;
}

// ---------------------------------------------------------------------------
// comparison harness
// ---------------------------------------------------------------------------

namespace {

std::vector<double> method_wers(const CompareResult& r, Method m) {
  std::vector<double> v;
  for (const auto& row : r.rows) {
    if (row.method == m && !row.diverged) v.push_back(row.wer);
  }
  return v;
}

}  // namespace

double CompareResult::mean_wer(Method m) const {
  const auto v = method_wers(*this, m);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double CompareResult::std_wer(Method m) const {
  const auto v = method_wers(*this, m);
  if (v.size() < 2) return 0.0;
  const double mean = mean_wer(m);
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

CompareResult compare_methods(const TrainConfig& base, const DataBundle& data,
                              const std::vector<Method>& methods,
                              const std::vector<uint64_t>& seeds,
                              const std::optional<ModelSnapshot>& teacher,
                              const std::string& out_dir, const TrainHooks& hooks) {
  if (seeds.size() < 3) throw ValueError("compare_methods: need at least 3 seeds");
  if (methods.empty()) throw ValueError("compare_methods: no methods given");

  // One teacher logit cache serves every run: the teacher and training set
  // are fixed across methods and seeds.
  std::optional<TeacherLogitCache> shared_cache;
  for (Method m : methods) {
    const bool needs = m == Method::KD_FIXED || m == Method::AKD || m == Method::ASKD;
    if (needs && teacher.has_value() && !shared_cache.has_value()) {
      const Decoder teacher_dec = Decoder::from_snapshot(*teacher, false);
      shared_cache = cache_teacher_logits(teacher_dec, data);
    }
  }

  CompareResult result;
  for (uint64_t seed : seeds) {
    for (Method m : methods) {
      TrainConfig cfg = base;
      cfg.method = m;
      cfg.seed = seed;
      cfg.student.seed = Rng::mix(base.student.seed, seed);
      std::string run_dir;
      if (!out_dir.empty()) {
        run_dir = (fs::path(out_dir) /
                   (std::string(method_name(m)) + "_seed" + std::to_string(seed)))
                      .string();
      }
      CompareRow row;
      row.method = m;
      row.seed = seed;
      const bool needs = m == Method::KD_FIXED || m == Method::AKD || m == Method::ASKD;
      try {
        const DistillResult dr =
            distill(cfg, data, teacher, run_dir, false, hooks,
                    needs && shared_cache.has_value() ? &*shared_cache : nullptr);
        const Decoder dec = Decoder::from_snapshot(dr.final_snapshot, false);
        const EvalReport er = evaluate(dec, data.test, data.test_features);
        row.wer = er.ter;
        row.substitutions = er.substitutions;
        row.insertions = er.insertions;
        row.deletions = er.deletions;
      } catch (const DivergenceError&) {
        row.diverged = true;
        row.wer = std::numeric_limits<double>::quiet_NaN();
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

void write_compare_csv(std::ostream& os, const CompareResult& result) {
  os << "method,seed,wer,s,i,d\n";
  char buf[160];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.10g,%lld,%lld,%lld\n", method_name(r.method),
                  static_cast<unsigned long long>(r.seed), r.wer,
                  static_cast<long long>(r.substitutions), static_cast<long long>(r.insertions),
                  static_cast<long long>(r.deletions));
    os << buf;
  }
}

void write_compare_table(std::ostream& os, const CompareResult& result,
                         const std::vector<Method>& methods) {
  os << "method    mean_wer    std_wer   runs\n";
  char buf[160];
  for (Method m : methods) {
    int runs = 0, diverged = 0;
    for (const auto& r : result.rows) {
      if (r.method == m) {
        ++runs;
        diverged += r.diverged ? 1 : 0;
      }
    }
    std::snprintf(buf, sizeof(buf), "%-8s  %8.4f   %8.4f   %d%s\n", method_name(m),
                  result.mean_wer(m), result.std_wer(m), runs,
                  diverged ? (" (" + std::to_string(diverged) + " diverged)").c_str() : "");
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// minimum-alpha sweep
// ---------------------------------------------------------------------------

double SweepResult::mean_wer(double min_alpha) const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.min_alpha == min_alpha && !r.diverged) {
      s += r.wer;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
}

SweepResult sweep_alpha_min(const TrainConfig& base, const DataBundle& data,
                            const std::vector<double>& min_alphas,
                            const std::vector<uint64_t>& seeds,
                            const std::optional<ModelSnapshot>& teacher,
                            const std::string& out_dir, const TrainHooks& hooks) {
  if (min_alphas.empty()) throw ValueError("sweep_alpha_min: no floors given");
  if (seeds.empty()) throw ValueError("sweep_alpha_min: no seeds given");
  for (double a : min_alphas) {
    if (!(a > 0.0 && a < base.schedule.alpha_akd_initial)) {
      throw ValueError("sweep_alpha_min: floor " + std::to_string(a) +
                       " outside (0, alpha_akd_initial)");
    }
  }

  // Floors to run: the requested ones plus the fixed-alpha control, which is
  // a decay floor at alpha_akd_initial (the alpha never moves).
  std::vector<double> floors = min_alphas;
  floors.push_back(base.schedule.alpha_akd_initial);

  std::optional<TeacherLogitCache> shared_cache;
  if (teacher.has_value()) {
    const Decoder teacher_dec = Decoder::from_snapshot(*teacher, false);
    shared_cache = cache_teacher_logits(teacher_dec, data);
  }

  SweepResult result;
  for (uint64_t seed : seeds) {
    for (double floor : floors) {
      TrainConfig cfg = base;
      cfg.method = Method::AKD;
      cfg.akd_floor = floor;
      cfg.seed = seed;
      cfg.student.seed = Rng::mix(base.student.seed, seed);
      std::string run_dir;
      if (!out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof(name), "floor%.3f_seed%llu", floor,
                      static_cast<unsigned long long>(seed));
        run_dir = (fs::path(out_dir) / name).string();
      }
      SweepRow row;
      row.min_alpha = floor;
      row.seed = seed;
      try {
        const DistillResult dr =
            distill(cfg, data, teacher, run_dir, false, hooks,
                    shared_cache.has_value() ? &*shared_cache : nullptr);
        const Decoder dec = Decoder::from_snapshot(dr.final_snapshot, false);
        row.wer = evaluate(dec, data.test, data.test_features).ter;
      } catch (const DivergenceError&) {
        row.diverged = true;
        row.wer = std::numeric_limits<double>::quiet_NaN();
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

void write_sweep_csv(std::ostream& os, const SweepResult& result) {
  os << "min_alpha,seed,wer\n";
  char buf[96];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g,%llu,%.10g\n", r.min_alpha,
                  static_cast<unsigned long long>(r.seed), r.wer);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// latency benchmark
// ---------------------------------------------------------------------------

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

LatencyReport bench_latency(const ModelSnapshot& teacher_snap,
                            const ModelSnapshot& student_snap,
                            const std::vector<Utterance>& utts,
                            const std::vector<TensorPtr>& features, int repetitions) {
  if (repetitions < 5) throw ValueError("bench_latency: repetitions must be >= 5");
  if (utts.empty()) throw ValueError("bench_latency: empty evaluation set");

  const Decoder teacher = Decoder::from_snapshot(teacher_snap, false);
  const Decoder student = Decoder::from_snapshot(student_snap, false);
  using Clock = std::chrono::steady_clock;

  auto decode_set = [&](const Decoder& dec, std::vector<double>* times_ms) {
    const int64_t max_len = dec.config().max_tgt_len - 1;
    for (size_t i = 0; i < utts.size(); ++i) {
      const auto t0 = Clock::now();
      const auto hyp = greedy_decode(dec, features[i], max_len);
      const auto t1 = Clock::now();
      if (times_ms != nullptr) {
        times_ms->push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
    }
  };

  // warm-up pass, untimed
  decode_set(teacher, nullptr);
  decode_set(student, nullptr);

  std::vector<double> teacher_ms, student_ms;
  for (int rep = 0; rep < repetitions; ++rep) {
    decode_set(teacher, &teacher_ms);
    decode_set(student, &student_ms);
  }

  LatencyReport report;
  report.teacher.model = "teacher";
  report.teacher.mean_ms = mean_of(teacher_ms);
  report.teacher.median_ms = median_of(teacher_ms);
  report.teacher.relative = 1.0;
  report.student.model = "student";
  report.student.mean_ms = mean_of(student_ms);
  report.student.median_ms = median_of(student_ms);
  report.student.relative = report.teacher.mean_ms / report.student.mean_ms;
  return report;
}

void write_latency_csv(std::ostream& os, const LatencyReport& report) {
  os << "model,mean_ms,median_ms,relative\n";
  char buf[128];
  for (const LatencyRow* row : {&report.teacher, &report.student}) {
    std::snprintf(buf, sizeof(buf), "%s,%.6g,%.6g,%.6g\n", row->model.c_str(), row->mean_ms,
                  row->median_ms, row->relative);
    os << buf;
  }
}

}  // namespace askd
