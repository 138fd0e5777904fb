// SPDX-License-Identifier: Apache-2.0
//
// askdlab command-line front-end. Subcommands cover the full experiment
// cycle: data generation, teacher pretraining, distillation, evaluation,
// the method comparison, the minimum-alpha sweep, the latency benchmark and
// the schedule dump.
//
// Exit codes: 0 ok, 2 usage, 3 config validation, 4 training divergence,
// 1 any other runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "askd/config.hpp"
#include "askd/eval.hpp"

namespace fs = std::filesystem;
using namespace askd;

namespace {

std::string default_out(const std::string& leaf) {
  const char* root = std::getenv("ASKDLAB_OUT");
  return ((root != nullptr && *root != '\0') ? fs::path(root) : fs::path("runs")) / leaf;
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw ConfigError("config: --seeds list is empty");
  return seeds;
}

std::vector<double> parse_floors(const std::string& csv) {
  std::vector<double> floors;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) floors.push_back(std::stod(item));
  }
  return floors;
}

std::vector<Method> parse_methods(const std::string& csv) {
  std::vector<Method> methods;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) methods.push_back(method_from_name(item));
  }
  if (methods.empty()) throw ConfigError("config: --methods list is empty");
  return methods;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << text;
}

struct CommonFlags {
  std::string config_path;
  std::string out;
  int64_t seed = -1;  // -1 = keep config value

  void attach(CLI::App* cmd, const std::string& out_default) {
    cmd->add_option("--config", config_path, "JSON config file (defaults < file < flags)");
    cmd->add_option("--out", out, "output directory")->default_val(out_default);
    cmd->add_option("--seed", seed, "run seed (overrides config)");
  }

  ResolvedConfig resolve(
      std::vector<std::pair<std::string, nlohmann::json>> overrides = {}) const {
    if (seed >= 0) overrides.emplace_back("train.seed", seed);
    return ResolvedConfig::resolve(config_path, overrides);
  }
};

ModelSnapshot load_teacher_or_fail(const std::string& path) {
  if (path.empty()) throw ConfigError("config: teacher snapshot path is required (--teacher)");
  return ModelSnapshot::load(path);
}

int run_gen_data(const CommonFlags& flags) {
  const ResolvedConfig rc = flags.resolve();
  const TaskSpec spec = rc.task_spec();
  fs::create_directories(flags.out);
  write_file((fs::path(flags.out) / "task_spec.json").string(), spec.to_json() + "\n");
  write_dataset((fs::path(flags.out) / "train.jsonl").string(),
                gen_dataset(spec, rc.n_train(), Split::kTrain));
  write_dataset((fs::path(flags.out) / "val.jsonl").string(),
                gen_dataset(spec, rc.n_val(), Split::kVal));
  write_dataset((fs::path(flags.out) / "test.jsonl").string(),
                gen_dataset(spec, rc.n_test(), Split::kTest));
  rc.write((fs::path(flags.out) / "config.json").string());
  std::cout << "wrote " << rc.n_train() << "/" << rc.n_val() << "/" << rc.n_test()
            << " utterances to " << flags.out << "\n";
  return 0;
}

int run_train_teacher(const CommonFlags& flags, const std::string& data_dir) {
  const ResolvedConfig rc =
      flags.resolve({{std::string("train.data_dir"), nlohmann::json(data_dir)}});
  const TrainConfig cfg = rc.train_config();
  if (cfg.data_dir.empty()) throw ConfigError("config: train.data_dir must name a dataset");
  const FrozenEncoder encoder(cfg.encoder);
  const DataBundle data = load_data_dir(cfg.data_dir, encoder);
  TrainHooks hooks;
  hooks.quiet = false;
  const ModelSnapshot snap = pretrain_teacher(cfg, data, encoder, hooks);
  fs::create_directories(flags.out);
  const std::string path = (fs::path(flags.out) / "teacher.snap").string();
  snap.save(path);
  rc.write((fs::path(flags.out) / "config.json").string());
  const Decoder teacher = Decoder::from_snapshot(snap, false);
  std::cout << "teacher saved to " << path << " (best epoch " << snap.epoch << ", val_ter "
            << validation_ter(teacher, data.val, data.val_features) << ")\n";
  return 0;
}

int run_distill(const CommonFlags& flags, const std::string& data_dir,
                const std::string& method, const std::string& teacher_path, bool resume) {
  std::vector<std::pair<std::string, nlohmann::json>> overrides;
  if (!data_dir.empty()) overrides.emplace_back("train.data_dir", data_dir);
  if (!method.empty()) overrides.emplace_back("train.method", method);
  if (!teacher_path.empty()) overrides.emplace_back("train.teacher_path", teacher_path);
  const ResolvedConfig rc = flags.resolve(overrides);
  const TrainConfig cfg = rc.train_config();
  if (cfg.data_dir.empty()) throw ConfigError("config: train.data_dir must name a dataset");
  const FrozenEncoder encoder(cfg.encoder);
  const DataBundle data = load_data_dir(cfg.data_dir, encoder);
  std::optional<ModelSnapshot> teacher;
  if (cfg.method == Method::KD_FIXED || cfg.method == Method::AKD ||
      cfg.method == Method::ASKD) {
    teacher = load_teacher_or_fail(cfg.teacher_path);
  }
  TrainHooks hooks;
  hooks.quiet = false;
  const DistillResult result = distill(cfg, data, teacher, flags.out, resume, hooks);
  const Decoder dec = Decoder::from_snapshot(result.final_snapshot, false);
  const EvalReport er = evaluate(dec, data.test, data.test_features);
  std::cout << "final test token-error-rate " << er.ter << " (" << flags.out << ")\n";
  return 0;
}

int run_eval(const CommonFlags& flags, const std::string& snapshot_path,
             const std::string& data_dir, const std::string& split) {
  const ResolvedConfig rc = flags.resolve();
  const ModelSnapshot snap = ModelSnapshot::load(snapshot_path);
  const FrozenEncoder encoder(rc.encoder_config());
  const DataBundle data = load_data_dir(data_dir, encoder);
  const std::vector<Utterance>* utts = nullptr;
  const std::vector<TensorPtr>* features = nullptr;
  if (split == "train") {
    utts = &data.train;
    features = &data.train_features;
  } else if (split == "val") {
    utts = &data.val;
    features = &data.val_features;
  } else if (split == "test") {
    utts = &data.test;
    features = &data.test_features;
  } else {
    throw ConfigError("config: --split must be train|val|test");
  }
  const Decoder dec = Decoder::from_snapshot(snap, false);
  const EvalReport er = evaluate(dec, *utts, *features);
  std::cout << "split " << split << ": ter " << er.ter << " (S=" << er.substitutions
            << " I=" << er.insertions << " D=" << er.deletions << " over " << er.ref_tokens
            << " reference tokens)\n";
  return 0;
}

int run_compare(const CommonFlags& flags, const std::string& data_dir,
                const std::string& methods_csv, const std::string& seeds_csv,
                const std::string& teacher_path) {
  const ResolvedConfig rc =
      flags.resolve({{std::string("train.data_dir"), nlohmann::json(data_dir)}});
  TrainConfig cfg = rc.train_config();
  const std::vector<Method> methods = parse_methods(methods_csv);
  const std::vector<uint64_t> seeds = parse_seeds(seeds_csv);
  const FrozenEncoder encoder(cfg.encoder);
  const DataBundle data = load_data_dir(cfg.data_dir, encoder);

  bool needs_teacher = false;
  for (Method m : methods) {
    needs_teacher |= (m == Method::KD_FIXED || m == Method::AKD || m == Method::ASKD);
  }
  std::optional<ModelSnapshot> teacher;
  fs::create_directories(flags.out);
  if (needs_teacher) {
    if (!teacher_path.empty()) {
      teacher = ModelSnapshot::load(teacher_path);
    } else {
      std::cout << "pretraining teacher (no --teacher given)...\n";
      teacher = pretrain_teacher(cfg, data, encoder);
      teacher->save((fs::path(flags.out) / "teacher.snap").string());
    }
    cfg.teacher = teacher->config;
  }

  const CompareResult result = compare_methods(cfg, data, methods, seeds, teacher, flags.out);
  std::ostringstream csv;
  write_compare_csv(csv, result);
  write_file((fs::path(flags.out) / "comparison.csv").string(), csv.str());
  rc.write((fs::path(flags.out) / "config.json").string());
  write_compare_table(std::cout, result, methods);
  std::cout << "rows written to " << (fs::path(flags.out) / "comparison.csv").string() << "\n";
  return 0;
}

int run_sweep(const CommonFlags& flags, const std::string& data_dir,
              const std::string& floors_csv, const std::string& seeds_csv,
              const std::string& teacher_path) {
  const ResolvedConfig rc =
      flags.resolve({{std::string("train.data_dir"), nlohmann::json(data_dir)}});
  TrainConfig cfg = rc.train_config();
  const std::vector<double> floors = parse_floors(floors_csv);
  const std::vector<uint64_t> seeds = parse_seeds(seeds_csv);
  const FrozenEncoder encoder(cfg.encoder);
  const DataBundle data = load_data_dir(cfg.data_dir, encoder);
  std::optional<ModelSnapshot> teacher;
  fs::create_directories(flags.out);
  if (!teacher_path.empty()) {
    teacher = ModelSnapshot::load(teacher_path);
  } else {
    std::cout << "pretraining teacher (no --teacher given)...\n";
    teacher = pretrain_teacher(cfg, data, encoder);
    teacher->save((fs::path(flags.out) / "teacher.snap").string());
  }
  cfg.teacher = teacher->config;

  const SweepResult result = sweep_alpha_min(cfg, data, floors, seeds, teacher, flags.out);
  std::ostringstream csv;
  write_sweep_csv(csv, result);
  write_file((fs::path(flags.out) / "sweep.csv").string(), csv.str());
  rc.write((fs::path(flags.out) / "config.json").string());
  for (double f : floors) {
    std::cout << "floor " << f << ": mean wer " << result.mean_wer(f) << "\n";
  }
  std::cout << "fixed-alpha control: mean wer "
            << result.mean_wer(cfg.schedule.alpha_akd_initial) << "\n";
  return 0;
}

int run_bench(const CommonFlags& flags, const std::string& teacher_path,
              const std::string& student_path, const std::string& data_dir, int reps,
              int64_t n_utts) {
  const ResolvedConfig rc = flags.resolve();
  const ModelSnapshot teacher = ModelSnapshot::load(teacher_path);
  const ModelSnapshot student = ModelSnapshot::load(student_path);
  const FrozenEncoder encoder(rc.encoder_config());
  const DataBundle data = load_data_dir(data_dir, encoder);
  std::vector<Utterance> utts = data.test;
  std::vector<TensorPtr> features = data.test_features;
  if (n_utts > 0 && n_utts < static_cast<int64_t>(utts.size())) {
    utts.resize(static_cast<size_t>(n_utts));
    features.resize(static_cast<size_t>(n_utts));
  }
  const LatencyReport report = bench_latency(teacher, student, utts, features, reps);
  std::ostringstream csv;
  write_latency_csv(csv, report);
  fs::create_directories(flags.out);
  write_file((fs::path(flags.out) / "latency.csv").string(), csv.str());
  std::cout << csv.str();
  std::cout << "student decodes " << report.student.relative << "x faster than the teacher\n";
  return 0;
}

int run_dump_schedule(const CommonFlags& flags, const std::string& out_file) {
  const ResolvedConfig rc = flags.resolve();
  const TrainConfig cfg = rc.train_config();
  if (out_file.empty()) {
    write_trajectory_csv(std::cout, cfg.schedule);
  } else {
    std::ofstream os(out_file, std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_file);
    write_trajectory_csv(os, cfg.schedule);
  }
  return 0;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"askdlab: adaptive self-knowledge distillation laboratory"};
  app.require_subcommand(1);

  CommonFlags gen_flags, teach_flags, distill_flags, eval_flags, compare_flags, sweep_flags,
      bench_flags, sched_flags;
  std::string data_dir, method, teacher_path, student_path, split = "test";
  std::string methods_csv = "ce,kd,skd,akd,askd", seeds_csv = "1,2,3,4,5";
  std::string floors_csv = "0.3,0.5,0.7", snapshot_path, sched_out;
  bool resume = false;
  int reps = 7;
  int64_t bench_utts = 32;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  gen_flags.attach(gen, default_out("data"));

  auto* teach = app.add_subcommand("train-teacher", "pretrain the teacher with hard-label CE");
  teach_flags.attach(teach, default_out("teacher"));
  teach->add_option("--data", data_dir, "dataset directory")->required();

  auto* dis = app.add_subcommand("distill", "run one distillation method");
  distill_flags.attach(dis, default_out("distill"));
  dis->add_option("--data", data_dir, "dataset directory");
  dis->add_option("--method", method, "ce|kd|skd|akd|askd");
  dis->add_option("--teacher", teacher_path, "teacher snapshot (kd/akd/askd)");
  dis->add_flag("--resume", resume, "resume from the last epoch checkpoint");

  auto* ev = app.add_subcommand("eval", "score a snapshot on a dataset split");
  eval_flags.attach(ev, default_out("eval"));
  ev->add_option("--snapshot", snapshot_path, "model snapshot")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--split", split, "train|val|test");

  auto* cmp = app.add_subcommand("compare", "train methods across seeds, report test WER");
  compare_flags.attach(cmp, default_out("compare"));
  cmp->add_option("--data", data_dir, "dataset directory")->required();
  cmp->add_option("--methods", methods_csv, "comma list of ce|kd|skd|akd|askd");
  cmp->add_option("--seeds", seeds_csv, "comma list of seeds");
  cmp->add_option("--teacher", teacher_path, "reuse a pretrained teacher snapshot");

  auto* sweep = app.add_subcommand("sweep-alpha", "AKD decay-floor sweep plus fixed control");
  sweep_flags.attach(sweep, default_out("sweep"));
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--floors", floors_csv, "comma list of decay floors");
  sweep->add_option("--seeds", seeds_csv, "comma list of seeds");
  sweep->add_option("--teacher", teacher_path, "reuse a pretrained teacher snapshot");

  auto* bench = app.add_subcommand("bench-latency", "relative greedy-decode latency");
  bench_flags.attach(bench, default_out("latency"));
  bench->add_option("--teacher", teacher_path, "teacher snapshot")->required();
  bench->add_option("--student", student_path, "student snapshot")->required();
  bench->add_option("--data", data_dir, "dataset directory")->required();
  bench->add_option("--reps", reps, "timed repetitions (>= 5)");
  bench->add_option("--utts", bench_utts, "max utterances from the test split");

  auto* sched = app.add_subcommand("dump-schedule", "emit the epoch/alpha/phase trajectory");
  sched_flags.attach(sched, default_out("schedule"));
  sched->add_option("--csv", sched_out, "write CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_flags);
    if (teach->parsed()) return run_train_teacher(teach_flags, data_dir);
    if (dis->parsed()) return run_distill(distill_flags, data_dir, method, teacher_path, resume);
    if (ev->parsed()) return run_eval(eval_flags, snapshot_path, data_dir, split);
    if (cmp->parsed())
      return run_compare(compare_flags, data_dir, methods_csv, seeds_csv, teacher_path);
    if (sweep->parsed())
      return run_sweep(sweep_flags, data_dir, floors_csv, seeds_csv, teacher_path);
    if (bench->parsed())
      return run_bench(bench_flags, teacher_path, student_path, data_dir, reps, bench_utts);
    if (sched->parsed()) return run_dump_schedule(sched_flags, sched_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int main(int argc, char** argv) { return cli_dispatch(argc, argv); }
