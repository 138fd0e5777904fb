// SPDX-License-Identifier: Apache-2.0

#include "askd/config.hpp"

#include <fstream>
#include <sstream>

#include "askd/rng.hpp"

namespace askd {

using nlohmann::json;

json ResolvedConfig::defaults() {
  json j;
  j["schedule"] = {{"alpha_akd_initial", 1.0}, {"alpha_skd_initial", 0.8}, {"lambda", 0.5},
                   {"warmup_epochs", 2},       {"total_epochs", 10},       {"tau", 2.0}};
  j["student"] = {{"vocab_size", 32}, {"d_model", 64},     {"n_heads", 4},
                  {"n_layers", 2},    {"d_ff", 128},       {"d_enc", 32},
                  {"max_src_len", 64}, {"max_tgt_len", 16}, {"seed", 101}};
  j["teacher"] = {{"vocab_size", 32}, {"d_model", 128},    {"n_heads", 4},
                  {"n_layers", 6},    {"d_ff", 256},       {"d_enc", 32},
                  {"max_src_len", 64}, {"max_tgt_len", 16}, {"seed", 202}};
  j["encoder"] = {{"d_feat", 16}, {"d_model", 32}, {"max_src_len", 64}, {"seed", 7}};
  j["task"] = {{"vocab_size", 32},   {"d_feat", 16}, {"frames_per_token_min", 2},
               {"frames_per_token_max", 4}, {"noise_std", 0.5}, {"min_tokens", 4},
               {"max_tokens", 12},   {"seed", 42}};
  j["data"] = {{"n_train", 2000}, {"n_val", 200}, {"n_test", 200}};
  j["train"] = {{"method", "askd"},
                {"lr", 0.2},
                {"momentum", 0.0},
                {"adam", false},
                {"batch_size", 16},
                {"seed", 1},
                {"kd_fixed_alpha", 1.0},
                {"akd_floor", 0.5},
                {"pretrain_max_epochs", 40},
                {"pretrain_patience", 3},
                {"pretrain_lr", 0.002},
                {"pretrain_momentum", 0.9},
                {"pretrain_adam", true},
                {"data_dir", ""},
                {"teacher_path", ""}};
  return j;
}

namespace {

void merge_checked(json& base, const json& overlay, const std::string& prefix) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    if (base[it.key()].is_object() && it.value().is_object()) {
      merge_checked(base[it.key()], it.value(), path);
    } else if (base[it.key()].is_object() != it.value().is_object()) {
      throw ConfigError("config: key '" + path + "' has the wrong structure");
    } else {
      base[it.key()] = it.value();
    }
  }
}

json* navigate(json& doc, const std::string& dotted) {
  json* cur = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->contains(key)) throw ConfigError("config: unknown key '" + dotted + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) return cur;
    start = dot + 1;
  }
}

}  // namespace

ResolvedConfig ResolvedConfig::resolve(
    const std::string& config_path,
    const std::vector<std::pair<std::string, json>>& overrides) {
  ResolvedConfig rc;
  rc.doc = defaults();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw IoError("config: cannot open " + config_path);
    json file_doc;
    try {
      file_doc = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config: " + config_path + " is not valid JSON: " + e.what());
    }
    merge_checked(rc.doc, file_doc, "");
  }
  for (const auto& [path, value] : overrides) *navigate(rc.doc, path) = value;
  return rc;
}

uint64_t ResolvedConfig::hash() const {
  const std::string s = doc.dump();  // nlohmann serializes objects key-sorted
  return fnv1a64(s.data(), s.size());
}

TrainConfig ResolvedConfig::train_config() const {
  TrainConfig cfg;
  const auto& s = doc.at("schedule");
  cfg.schedule.alpha_akd_initial = s.at("alpha_akd_initial").get<double>();
  cfg.schedule.alpha_skd_initial = s.at("alpha_skd_initial").get<double>();
  cfg.schedule.lambda = s.at("lambda").get<double>();
  cfg.schedule.warmup_epochs = s.at("warmup_epochs").get<int>();
  cfg.schedule.total_epochs = s.at("total_epochs").get<int>();
  cfg.schedule.tau = s.at("tau").get<double>();
  cfg.student = ModelConfig::from_json(doc.at("student").dump());
  cfg.teacher = ModelConfig::from_json(doc.at("teacher").dump());
  cfg.encoder = encoder_config();
  cfg.task = task_spec();
  const auto& t = doc.at("train");
  cfg.method = method_from_name(t.at("method").get<std::string>());
  cfg.lr = t.at("lr").get<double>();
  cfg.momentum = t.at("momentum").get<double>();
  cfg.adam = t.at("adam").get<bool>();
  cfg.batch_size = t.at("batch_size").get<int64_t>();
  cfg.seed = t.at("seed").get<uint64_t>();
  cfg.kd_fixed_alpha = t.at("kd_fixed_alpha").get<double>();
  cfg.akd_floor = t.at("akd_floor").get<double>();
  cfg.pretrain_max_epochs = t.at("pretrain_max_epochs").get<int>();
  cfg.pretrain_patience = t.at("pretrain_patience").get<int>();
  cfg.pretrain_lr = t.at("pretrain_lr").get<double>();
  cfg.pretrain_momentum = t.at("pretrain_momentum").get<double>();
  cfg.pretrain_adam = t.at("pretrain_adam").get<bool>();
  cfg.data_dir = t.at("data_dir").get<std::string>();
  cfg.teacher_path = t.at("teacher_path").get<std::string>();
  cfg.validate();
  return cfg;
}

TaskSpec ResolvedConfig::task_spec() const { return TaskSpec::from_json(doc.at("task").dump()); }

EncoderConfig ResolvedConfig::encoder_config() const {
  const auto& e = doc.at("encoder");
  EncoderConfig cfg;
  cfg.d_feat = e.at("d_feat").get<int64_t>();
  cfg.d_model = e.at("d_model").get<int64_t>();
  cfg.max_src_len = e.at("max_src_len").get<int64_t>();
  cfg.seed = e.at("seed").get<uint64_t>();
  cfg.validate();
  return cfg;
}

int64_t ResolvedConfig::n_train() const { return doc.at("data").at("n_train").get<int64_t>(); }
int64_t ResolvedConfig::n_val() const { return doc.at("data").at("n_val").get<int64_t>(); }
int64_t ResolvedConfig::n_test() const { return doc.at("data").at("n_test").get<int64_t>(); }

void ResolvedConfig::write(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("config: cannot write " + path);
  json out = doc;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash()));
  out["config_hash"] = hex;
  os << out.dump(2) << "\n";
}

}  // namespace askd
