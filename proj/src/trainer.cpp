// SPDX-License-Identifier: Apache-2.0

#include "askd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "askd/eval.hpp"
#include "askd/rng.hpp"

namespace askd {

namespace fs = std::filesystem;
using nlohmann::json;

const char* method_name(Method m) {
  switch (m) {
    case Method::CE_ONLY: return "ce";
    case Method::KD_FIXED: return "kd";
    case Method::SKD_ONLY: return "skd";
    case Method::AKD: return "akd";
    case Method::ASKD: return "askd";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "ce") return Method::CE_ONLY;
  if (name == "kd") return Method::KD_FIXED;
  if (name == "skd") return Method::SKD_ONLY;
  if (name == "akd") return Method::AKD;
  if (name == "askd") return Method::ASKD;
  throw ConfigError("unknown method '" + name + "' (expected ce|kd|skd|akd|askd)");
}

void TrainConfig::validate() const {
  schedule.validate();
  student.validate();
  teacher.validate();
  encoder.validate();
  task.validate();
  if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(kd_fixed_alpha >= 0 && kd_fixed_alpha <= 1)) {
    throw ConfigError("train: kd_fixed_alpha must lie in [0, 1]");
  }
  if (!(akd_floor > 0 && akd_floor <= schedule.alpha_akd_initial)) {
    throw ConfigError("train: akd_floor must lie in (0, alpha_akd_initial]");
  }
  if (pretrain_max_epochs < 1) throw ConfigError("train: pretrain_max_epochs must be >= 1");
  if (pretrain_patience < 1) throw ConfigError("train: pretrain_patience must be >= 1");
  if (!(pretrain_lr > 0)) throw ConfigError("train: pretrain_lr must be > 0");
  if (pretrain_momentum < 0 || pretrain_momentum >= 1) {
    throw ConfigError("train: pretrain_momentum must lie in [0, 1)");
  }
  if (student.d_enc != encoder.d_model || teacher.d_enc != encoder.d_model) {
    throw ConfigError("train: decoder d_enc must equal encoder d_model");
  }
  if (student.vocab_size != task.vocab_size || teacher.vocab_size != task.vocab_size) {
    throw ConfigError("train: decoder vocab_size must equal task vocab_size");
  }
}

std::string TrainConfig::to_json() const {
  json j;
  j["schedule"] = {{"alpha_akd_initial", schedule.alpha_akd_initial},
                   {"alpha_skd_initial", schedule.alpha_skd_initial},
                   {"lambda", schedule.lambda},
                   {"warmup_epochs", schedule.warmup_epochs},
                   {"total_epochs", schedule.total_epochs},
                   {"tau", schedule.tau}};
  j["student"] = json::parse(student.to_json());
  j["teacher"] = json::parse(teacher.to_json());
  j["encoder"] = {{"d_feat", encoder.d_feat},
                  {"d_model", encoder.d_model},
                  {"max_src_len", encoder.max_src_len},
                  {"seed", encoder.seed}};
  j["task"] = json::parse(task.to_json());
  j["method"] = method_name(method);
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["adam"] = adam;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["kd_fixed_alpha"] = kd_fixed_alpha;
  j["akd_floor"] = akd_floor;
  j["pretrain_max_epochs"] = pretrain_max_epochs;
  j["pretrain_patience"] = pretrain_patience;
  j["pretrain_lr"] = pretrain_lr;
  j["pretrain_momentum"] = pretrain_momentum;
  j["pretrain_adam"] = pretrain_adam;
  j["data_dir"] = data_dir;
  j["teacher_path"] = teacher_path;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig cfg;
  const auto& s = j.at("schedule");
  cfg.schedule.alpha_akd_initial = s.at("alpha_akd_initial").get<double>();
  cfg.schedule.alpha_skd_initial = s.at("alpha_skd_initial").get<double>();
  cfg.schedule.lambda = s.at("lambda").get<double>();
  cfg.schedule.warmup_epochs = s.at("warmup_epochs").get<int>();
  cfg.schedule.total_epochs = s.at("total_epochs").get<int>();
  cfg.schedule.tau = s.at("tau").get<double>();
  cfg.student = ModelConfig::from_json(j.at("student").dump());
  cfg.teacher = ModelConfig::from_json(j.at("teacher").dump());
  const auto& e = j.at("encoder");
  cfg.encoder.d_feat = e.at("d_feat").get<int64_t>();
  cfg.encoder.d_model = e.at("d_model").get<int64_t>();
  cfg.encoder.max_src_len = e.at("max_src_len").get<int64_t>();
  cfg.encoder.seed = e.at("seed").get<uint64_t>();
  cfg.task = TaskSpec::from_json(j.at("task").dump());
  cfg.method = method_from_name(j.at("method").get<std::string>());
  cfg.lr = j.at("lr").get<double>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.adam = j.at("adam").get<bool>();
  cfg.batch_size = j.at("batch_size").get<int64_t>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.kd_fixed_alpha = j.at("kd_fixed_alpha").get<double>();
  cfg.akd_floor = j.at("akd_floor").get<double>();
  cfg.pretrain_max_epochs = j.at("pretrain_max_epochs").get<int>();
  cfg.pretrain_patience = j.at("pretrain_patience").get<int>();
  cfg.pretrain_lr = j.at("pretrain_lr").get<double>();
  cfg.pretrain_momentum = j.at("pretrain_momentum").get<double>();
  cfg.pretrain_adam = j.at("pretrain_adam").get<bool>();
  cfg.data_dir = j.value("data_dir", "");
  cfg.teacher_path = j.value("teacher_path", "");
  cfg.validate();
  return cfg;
}

uint64_t TrainConfig::hash() const {
  const std::string s = to_json();
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// data plumbing
// ---------------------------------------------------------------------------

namespace {

std::vector<TensorPtr> encode_all(const FrozenEncoder& encoder,
                                  const std::vector<Utterance>& utts) {
  std::vector<TensorPtr> features;
  features.reserve(utts.size());
  for (const auto& u : utts) features.push_back(encoder.encode(u.frames));
  return features;
}

}  // namespace

DataBundle make_bundle(const TaskSpec& spec, std::vector<Utterance> train,
                       std::vector<Utterance> val, std::vector<Utterance> test,
                       const FrozenEncoder& encoder) {
  DataBundle b;
  b.spec = spec;
  b.train = std::move(train);
  b.val = std::move(val);
  b.test = std::move(test);
  b.train_features = encode_all(encoder, b.train);
  b.val_features = encode_all(encoder, b.val);
  b.test_features = encode_all(encoder, b.test);
  return b;
}

DataBundle load_data_dir(const std::string& dir, const FrozenEncoder& encoder) {
  const fs::path root(dir);
  std::ifstream spec_in(root / "task_spec.json");
  if (!spec_in) throw IoError("load_data_dir: missing " + (root / "task_spec.json").string());
  std::stringstream ss;
  ss << spec_in.rdbuf();
  const TaskSpec spec = TaskSpec::from_json(ss.str());
  return make_bundle(spec, load_dataset((root / "train.jsonl").string(), spec),
                     load_dataset((root / "val.jsonl").string(), spec),
                     load_dataset((root / "test.jsonl").string(), spec), encoder);
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

std::string EpochReport::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["phase"] = phase;
  j["l_s"] = mean_loss.l_s;
  j["l_kl"] = mean_loss.l_kl;
  j["l_akd"] = mean_loss.l_akd;
  j["l_skd"] = mean_loss.l_skd;
  j["l_total"] = mean_loss.l_total;
  j["val_ter"] = val_ter;
  return j.dump();
}

EpochReport EpochReport::from_json(const std::string& line) {
  json j = json::parse(line);
  EpochReport r;
  r.epoch = j.at("epoch").get<int>();
  r.phase = j.at("phase").get<std::string>();
  r.mean_loss.l_s = j.at("l_s").get<double>();
  r.mean_loss.l_kl = j.at("l_kl").get<double>();
  r.mean_loss.l_akd = j.at("l_akd").get<double>();
  r.mean_loss.l_skd = j.at("l_skd").get<double>();
  r.mean_loss.l_total = j.at("l_total").get<double>();
  r.val_ter = j.at("val_ter").get<double>();
  return r;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void SgdState::step(const std::vector<TensorPtr>& params, double lr) {
  if (!adam && momentum == 0.0) {
    sgd_step(params, lr);
    return;
  }
  if (velocity.empty()) {
    velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i]->data.size(), 0.0);
    if (adam) {
      second.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) second[i].assign(params[i]->data.size(), 0.0);
    }
  }
  for (const auto& p : params) {
    if (!p->grad_populated()) throw ValueError("optimizer: parameter has no gradient");
  }
  ++steps;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& m = velocity[i];
    auto& p = *params[i];
    for (size_t k = 0; k < m.size(); ++k) {
      const double g = p.grad[k];
      if (!std::isfinite(g)) throw NonFiniteError("optimizer: non-finite gradient");
      if (adam) {
        m[k] = b1 * m[k] + (1.0 - b1) * g;
        second[i][k] = b2 * second[i][k] + (1.0 - b2) * g * g;
        p.data[k] -= lr * (m[k] / bc1) / (std::sqrt(second[i][k] / bc2) + eps);
      } else {
        m[k] = momentum * m[k] + g;
        p.data[k] -= lr * m[k];
      }
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// epoch runners
// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string divergence_dump(const TrainConfig& cfg, int epoch, const char* what) {
  std::ostringstream os;
  os << "training diverged (" << what << ") at epoch " << epoch << ", seed " << cfg.seed
     << ", method " << method_name(cfg.method) << "\nconfig:\n"
     << cfg.to_json();
  return os.str();
}

// Teacher-forcing view of one utterance: inputs drop the final token,
// labels drop BOS.
struct Forced {
  std::span<const int32_t> inputs;
  std::span<const int32_t> labels;
};

Forced forced_view(const Utterance& u) {
  const size_t n = u.tokens.size();
  return Forced{std::span<const int32_t>(u.tokens.data(), n - 1),
                std::span<const int32_t>(u.tokens.data() + 1, n - 1)};
}

// Student logits for every utterance of the batch stacked row-wise, plus the
// concatenated labels.
TensorPtr stacked_student_logits(Decoder& student, const Batch& batch, const DataBundle& data,
                                 std::vector<int32_t>& labels_out) {
  TensorPtr stacked;
  labels_out.clear();
  for (int64_t idx : batch.indices) {
    const auto& u = data.train[static_cast<size_t>(idx)];
    const auto fv = forced_view(u);
    auto lg = student.logits(fv.inputs, data.train_features[static_cast<size_t>(idx)]);
    labels_out.insert(labels_out.end(), fv.labels.begin(), fv.labels.end());
    stacked = stacked ? ops::concat(stacked, lg, 0) : lg;
  }
  return stacked;
}

// Row-stack of cached per-utterance matrices (constants).
TensorPtr stacked_constant(const std::vector<TensorPtr>& per_utt, const Batch& batch) {
  TensorPtr stacked;
  for (int64_t idx : batch.indices) {
    const auto& t = per_utt[static_cast<size_t>(idx)];
    stacked = stacked ? ops::concat(stacked, t, 0) : t;
  }
  return stacked;
}

// Value-only mean CE of the student distribution against hard labels;
// reporting only, no graph involvement.
double hard_ce_value(const ProbDist& p_student, const std::vector<int32_t>& labels) {
  const int64_t v = p_student.classes();
  double sum = 0.0;
  for (size_t i = 0; i < labels.size(); ++i) {
    sum -= std::log(p_student.probs->data[i * static_cast<size_t>(v) +
                                          static_cast<size_t>(labels[i])] +
                    kLossEps);
  }
  return sum / static_cast<double>(labels.size());
}

void finish_report(EpochReport& r, const Decoder& student, const DataBundle& data,
                   int n_batches, Clock::time_point t0, const TrainHooks& hooks) {
  if (n_batches > 0) {
    r.mean_loss.l_s /= n_batches;
    r.mean_loss.l_kl /= n_batches;
    r.mean_loss.l_akd /= n_batches;
    r.mean_loss.l_skd /= n_batches;
    r.mean_loss.l_total /= n_batches;
  }
  r.val_ter = data.val.empty() ? 0.0 : validation_ter(student, data.val, data.val_features);
  r.wall_seconds = seconds_since(t0);
  if (!hooks.quiet) {
    std::printf("epoch %2d [%s] loss %.4f val_ter %.4f (%.1fs)\n", r.epoch, r.phase.c_str(),
                r.mean_loss.l_total, r.val_ter, r.wall_seconds);
    std::fflush(stdout);
  }
}

}  // namespace

TeacherLogitCache cache_teacher_logits(const Decoder& teacher, const DataBundle& data) {
  TeacherLogitCache cache;
  cache.logits.reserve(data.train.size());
  for (size_t i = 0; i < data.train.size(); ++i) {
    const auto fv = forced_view(data.train[i]);
    cache.logits.push_back(teacher.logits(fv.inputs, data.train_features[i]));
  }
  return cache;
}

EpochReport run_epoch_akd(Decoder& student, const TeacherLogitCache& teacher,
                          const DataBundle& data, const EpochPlan& plan,
                          const TrainConfig& cfg, SgdState& opt, const TrainHooks& hooks) {
  if (plan.phase != Phase::AKD) throw ValueError("run_epoch_akd: plan is not an AKD epoch");
  if (teacher.logits.size() != data.train.size()) {
    throw ValueError("run_epoch_akd: teacher logit cache does not cover the training set");
  }
  const auto t0 = Clock::now();
  EpochReport report;
  report.epoch = plan.epoch;
  report.phase = cfg.method == Method::KD_FIXED ? "kd" : "akd";

  int n_batches = 0;
  try {
    for (const Batch& batch : batch_iter(data.train, cfg.batch_size, cfg.seed, plan.epoch)) {
      Graph graph;
      GraphScope scope(graph);
      std::vector<int32_t> labels;
      auto student_logits = stacked_student_logits(student, batch, data, labels);
      auto teacher_logits = stacked_constant(teacher.logits, batch);

      auto l_s = hard_ce_loss(student_logits, labels);
      auto p_s = softmax_temperature(student_logits, cfg.schedule.tau);
      auto p_t = softmax_temperature(teacher_logits, cfg.schedule.tau);
      auto l_kl = kl_loss(p_t, p_s, cfg.schedule.tau);
      auto l_akd = ops::scale(l_kl, plan.alpha_akd);
      auto l_total = total_loss_akd(l_s, l_akd);
      if (!std::isfinite(l_total->value())) {
        throw DivergenceError(divergence_dump(cfg, plan.epoch, "non-finite loss"));
      }
      graph.backward(l_total);
      opt.step(student.params(), cfg.lr);

      LossBreakdown lb;
      lb.l_s = l_s->value();
      lb.l_kl = l_kl->value();
      lb.l_akd = l_akd->value();
      lb.l_total = l_total->value();
      report.mean_loss.l_s += lb.l_s;
      report.mean_loss.l_kl += lb.l_kl;
      report.mean_loss.l_akd += lb.l_akd;
      report.mean_loss.l_total += lb.l_total;
      if (hooks.keep_batch_losses) report.batch_losses.push_back(lb);
      ++n_batches;
    }
  } catch (const NonFiniteError& e) {
    throw DivergenceError(divergence_dump(cfg, plan.epoch, e.what()));
  }
  finish_report(report, student, data, n_batches, t0, hooks);
  return report;
}

EpochReport run_epoch_skd(Decoder& student, const ModelSnapshot& prev_snapshot,
                          const DataBundle& data, const EpochPlan& plan,
                          const TrainConfig& cfg, SgdState& opt, const TrainHooks& hooks) {
  if (plan.phase != Phase::SKD) throw ValueError("run_epoch_skd: plan is not an SKD epoch");
  if (prev_snapshot.epoch != plan.epoch - 1) {
    throw ValueError("run_epoch_skd: stale snapshot (epoch " +
                     std::to_string(prev_snapshot.epoch) + " for plan epoch " +
                     std::to_string(plan.epoch) + ")");
  }
  const auto t0 = Clock::now();
  EpochReport report;
  report.epoch = plan.epoch;
  report.phase = "skd";

  // P_T from the previous-epoch student, tau = 1, fixed for the whole epoch.
  const Decoder prev = Decoder::from_snapshot(prev_snapshot, /*trainable=*/false);
  std::vector<TensorPtr> prev_probs(data.train.size());
  for (size_t i = 0; i < data.train.size(); ++i) {
    const auto fv = forced_view(data.train[i]);
    prev_probs[i] =
        softmax_temperature(prev.logits(fv.inputs, data.train_features[i]), 1.0).probs;
  }

  int n_batches = 0;
  try {
    for (const Batch& batch : batch_iter(data.train, cfg.batch_size, cfg.seed, plan.epoch)) {
      Graph graph;
      GraphScope scope(graph);
      std::vector<int32_t> labels;
      auto student_logits = stacked_student_logits(student, batch, data, labels);
      auto p_prev = ProbDist{stacked_constant(prev_probs, batch)};

      auto p_s = softmax_temperature(student_logits, 1.0);
      auto y = ProbDist::one_hot(labels, cfg.student.vocab_size);
      auto l_skd = skd_loss(y, p_prev, p_s, plan.alpha_skd);
      if (!std::isfinite(l_skd->value())) {
        throw DivergenceError(divergence_dump(cfg, plan.epoch, "non-finite loss"));
      }
      graph.backward(l_skd);
      opt.step(student.params(), cfg.lr);

      LossBreakdown lb;
      lb.l_s = hard_ce_value(p_s, labels);
      lb.l_skd = l_skd->value();
      lb.l_total = lb.l_skd;
      report.mean_loss.l_s += lb.l_s;
      report.mean_loss.l_skd += lb.l_skd;
      report.mean_loss.l_total += lb.l_total;
      if (hooks.keep_batch_losses) report.batch_losses.push_back(lb);
      ++n_batches;
    }
  } catch (const NonFiniteError& e) {
    throw DivergenceError(divergence_dump(cfg, plan.epoch, e.what()));
  }
  finish_report(report, student, data, n_batches, t0, hooks);
  return report;
}

EpochReport run_epoch_ce(Decoder& student, const DataBundle& data, int epoch,
                         const TrainConfig& cfg, SgdState& opt, double lr,
                         const TrainHooks& hooks) {
  const auto t0 = Clock::now();
  EpochReport report;
  report.epoch = epoch;
  report.phase = "ce";

  int n_batches = 0;
  try {
    for (const Batch& batch : batch_iter(data.train, cfg.batch_size, cfg.seed, epoch)) {
      Graph graph;
      GraphScope scope(graph);
      std::vector<int32_t> labels;
      auto student_logits = stacked_student_logits(student, batch, data, labels);
      auto l_s = hard_ce_loss(student_logits, labels);
      if (!std::isfinite(l_s->value())) {
        throw DivergenceError(divergence_dump(cfg, epoch, "non-finite loss"));
      }
      graph.backward(l_s);
      opt.step(student.params(), lr);

      LossBreakdown lb;
      lb.l_s = l_s->value();
      lb.l_total = lb.l_s;
      report.mean_loss.l_s += lb.l_s;
      report.mean_loss.l_total += lb.l_total;
      if (hooks.keep_batch_losses) report.batch_losses.push_back(lb);
      ++n_batches;
    }
  } catch (const NonFiniteError& e) {
    throw DivergenceError(divergence_dump(cfg, epoch, e.what()));
  }
  finish_report(report, student, data, n_batches, t0, hooks);
  return report;
}

// ---------------------------------------------------------------------------
// teacher pretraining
// ---------------------------------------------------------------------------

ModelSnapshot pretrain_teacher(const TrainConfig& cfg, const DataBundle& data,
                               const FrozenEncoder& encoder, const TrainHooks& hooks) {
  cfg.validate();
  (void)encoder;  // features already cached in the bundle
  if (Decoder::param_count(cfg.teacher) <= Decoder::param_count(cfg.student)) {
    throw ConfigError("pretrain_teacher: teacher must have more parameters than the student");
  }

  Decoder teacher(cfg.teacher, /*trainable=*/true);
  SgdState opt;
  opt.adam = cfg.pretrain_adam;
  opt.momentum = cfg.pretrain_momentum;

  double best_ter = std::numeric_limits<double>::infinity();
  std::vector<double> best_params = teacher.flatten();
  int best_epoch = -1;
  int since_best = 0;
  for (int e = 0; e < cfg.pretrain_max_epochs; ++e) {
    const EpochReport r = run_epoch_ce(teacher, data, e, cfg, opt, cfg.pretrain_lr, hooks);
    if (r.val_ter < best_ter - 1e-9) {
      best_ter = r.val_ter;
      best_params = teacher.flatten();
      best_epoch = e;
      since_best = 0;
    } else if (++since_best >= cfg.pretrain_patience) {
      break;
    }
  }
  ModelSnapshot snap;
  snap.config = cfg.teacher;
  snap.epoch = best_epoch;
  snap.params = std::move(best_params);
  return snap;
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

namespace {

fs::path snap_path(const std::string& out_dir, int epoch) {
  return fs::path(out_dir) / ("epoch_" + std::to_string(epoch) + ".snap");
}

void write_reports(const std::string& out_dir, const std::vector<EpochReport>& reports) {
  std::ofstream os(fs::path(out_dir) / "reports.jsonl", std::ios::trunc);
  if (!os) throw IoError("distill: cannot write reports.jsonl in " + out_dir);
  for (const auto& r : reports) os << r.to_json() << "\n";
}

std::vector<EpochPlan> plans_for_method(const TrainConfig& cfg) {
  std::vector<EpochPlan> plans;
  const int total = cfg.schedule.total_epochs;
  switch (cfg.method) {
    case Method::ASKD:
      return trajectory(cfg.schedule);
    case Method::CE_ONLY:
      for (int e = 0; e < total; ++e) plans.push_back({e, Phase::AKD, 0.0, 0.0});
      return plans;
    case Method::KD_FIXED:
      for (int e = 0; e < total; ++e) plans.push_back({e, Phase::AKD, cfg.kd_fixed_alpha, 0.0});
      return plans;
    case Method::AKD:
      for (int e = 0; e < total; ++e) {
        plans.push_back(
            {e, Phase::AKD, std::max(cfg.akd_floor, alpha_akd_at(e, cfg.schedule)), 0.0});
      }
      return plans;
    case Method::SKD_ONLY:
      plans.push_back({0, Phase::AKD, 0.0, 0.0});  // hard-label bootstrap epoch
      for (int e = 1; e < total; ++e) {
        plans.push_back({e, Phase::SKD, 0.0, alpha_skd_at(e, cfg.schedule)});
      }
      return plans;
  }
  throw ValueError("plans_for_method: unknown method");
}

bool method_needs_teacher(Method m) {
  return m == Method::KD_FIXED || m == Method::AKD || m == Method::ASKD;
}

}  // namespace

DistillResult distill(const TrainConfig& cfg, const DataBundle& data,
                      const std::optional<ModelSnapshot>& teacher, const std::string& out_dir,
                      bool resume, const TrainHooks& hooks,
                      const TeacherLogitCache* shared_teacher_cache) {
  cfg.validate();
  if (method_needs_teacher(cfg.method)) {
    if (!teacher.has_value()) {
      throw ValueError(std::string("distill: method ") + method_name(cfg.method) +
                       " requires a teacher snapshot");
    }
    if (teacher->config != cfg.teacher) {
      throw ConfigError("distill: teacher snapshot config differs from cfg.teacher");
    }
    if (Decoder::param_count(cfg.teacher) <= Decoder::param_count(cfg.student)) {
      throw ConfigError("distill: teacher must have more parameters than the student");
    }
  }

  const bool persist = !out_dir.empty();
  int start_epoch = 0;
  std::vector<EpochReport> reports;
  Decoder student(cfg.student, /*trainable=*/true);
  std::optional<ModelSnapshot> prev_snapshot;

  if (persist) {
    fs::create_directories(out_dir);
    const fs::path cfg_path = fs::path(out_dir) / "config.json";
    if (resume && fs::exists(cfg_path)) {
      std::ifstream is(cfg_path);
      std::stringstream ss;
      ss << is.rdbuf();
      const TrainConfig stored = TrainConfig::from_json(ss.str());
      if (stored.hash() != cfg.hash()) {
        throw ConfigError("distill resume: config hash mismatch with " + cfg_path.string());
      }
      // Pick up after the last persisted epoch.
      int last = -1;
      for (int e = 0; e < cfg.schedule.total_epochs; ++e) {
        if (fs::exists(snap_path(out_dir, e))) last = e;
      }
      if (last >= 0) {
        prev_snapshot = ModelSnapshot::load(snap_path(out_dir, last).string());
        student.load_flat(prev_snapshot->params);
        start_epoch = last + 1;
        std::ifstream rep(fs::path(out_dir) / "reports.jsonl");
        std::string line;
        while (std::getline(rep, line)) {
          if (line.empty()) continue;
          EpochReport r = EpochReport::from_json(line);
          if (r.epoch <= last) reports.push_back(std::move(r));
        }
        write_reports(out_dir, reports);
      }
    } else {
      std::ofstream os(cfg_path, std::ios::trunc);
      if (!os) throw IoError("distill: cannot write " + cfg_path.string());
      json doc = json::parse(cfg.to_json());
      char hex[32];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(cfg.hash()));
      doc["config_hash"] = hex;  // ignored by from_json on resume
      os << doc.dump(2) << "\n";
      write_reports(out_dir, {});
    }
  }

  // Optimizer state is not checkpointed; with the default plain SGD the
  // optimizer is stateless and resume stays bit-exact.
  SgdState opt;
  opt.adam = cfg.adam;
  opt.momentum = cfg.momentum;

  std::optional<TeacherLogitCache> teacher_cache;
  const TeacherLogitCache* cache_ptr = shared_teacher_cache;
  if (cache_ptr == nullptr && method_needs_teacher(cfg.method) &&
      start_epoch < cfg.schedule.total_epochs) {
    const Decoder teacher_dec = Decoder::from_snapshot(*teacher, /*trainable=*/false);
    teacher_cache = cache_teacher_logits(teacher_dec, data);
    cache_ptr = &*teacher_cache;
  }

  const auto plans = plans_for_method(cfg);
  for (int e = start_epoch; e < cfg.schedule.total_epochs; ++e) {
    const EpochPlan& plan = plans[static_cast<size_t>(e)];
    EpochReport report;
    if (cfg.method == Method::CE_ONLY ||
        (cfg.method == Method::SKD_ONLY && plan.epoch == 0)) {
      report = run_epoch_ce(student, data, e, cfg, opt, cfg.lr, hooks);
    } else if (plan.phase == Phase::AKD) {
      report = run_epoch_akd(student, *cache_ptr, data, plan, cfg, opt, hooks);
    } else {
      if (!prev_snapshot.has_value()) {
        throw ValueError("distill: SKD epoch " + std::to_string(e) +
                         " has no previous-epoch snapshot");
      }
      report = run_epoch_skd(student, *prev_snapshot, data, plan, cfg, opt, hooks);
    }
    prev_snapshot = student.snapshot(e);
    reports.push_back(std::move(report));
    if (persist) {
      prev_snapshot->save(snap_path(out_dir, e).string());
      write_reports(out_dir, reports);
    }
  }

  DistillResult result;
  result.final_snapshot = prev_snapshot.has_value() ? *prev_snapshot : student.snapshot(-1);
  result.reports = std::move(reports);
  return result;
}

double validation_ter(const Decoder& dec, const std::vector<Utterance>& utts,
                      const std::vector<TensorPtr>& features) {
  int64_t errors = 0;
  int64_t ref_len = 0;
  const int64_t max_len = dec.config().max_tgt_len - 1;
  for (size_t i = 0; i < utts.size(); ++i) {
    const auto& toks = utts[i].tokens;
    const std::span<const int32_t> ref(toks.data() + 1, toks.size() - 2);  // strip BOS/EOS
    const auto hyp = greedy_decode(dec, features[i], max_len);
    const WerResult w = wer(ref, hyp);
    errors += w.errors();
    ref_len += static_cast<int64_t>(ref.size());
  }
  return ref_len == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(ref_len);
}

}  // namespace askd
