// SPDX-License-Identifier: Apache-2.0

#include "askd/task.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "askd/model.hpp"
#include "askd/rng.hpp"

namespace askd {

using nlohmann::json;

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (vocab_size < 5) throw ConfigError("task: vocab_size must be >= 5 (4 reserved + content)");
  if (d_feat < 1) throw ConfigError("task: d_feat must be >= 1");
  if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min) {
    throw ConfigError("task: frames_per_token range is empty");
  }
  if (noise_std < 0) throw ConfigError("task: noise_std must be >= 0");
  if (min_tokens < 1 || max_tokens < min_tokens) {
    throw ConfigError("task: token length range is empty");
  }
}

std::string TaskSpec::to_json() const {
  json j;
  j["vocab_size"] = vocab_size;
  j["d_feat"] = d_feat;
  j["frames_per_token_min"] = frames_per_token_min;
  j["frames_per_token_max"] = frames_per_token_max;
  j["noise_std"] = noise_std;
  j["min_tokens"] = min_tokens;
  j["max_tokens"] = max_tokens;
  j["seed"] = seed;
  return j.dump();
}

TaskSpec TaskSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  TaskSpec spec;
  spec.vocab_size = j.at("vocab_size").get<int64_t>();
  spec.d_feat = j.at("d_feat").get<int64_t>();
  spec.frames_per_token_min = j.at("frames_per_token_min").get<int>();
  spec.frames_per_token_max = j.at("frames_per_token_max").get<int>();
  spec.noise_std = j.at("noise_std").get<double>();
  spec.min_tokens = j.at("min_tokens").get<int>();
  spec.max_tokens = j.at("max_tokens").get<int>();
  spec.seed = j.at("seed").get<uint64_t>();
  spec.validate();
  return spec;
}

namespace {

// Fixed per-token feature embedding, independent of the utterance stream.
std::vector<double> token_embedding(const TaskSpec& spec, int32_t token) {
  Rng rng(Rng::mix(spec.seed, 0x70CEB, static_cast<uint64_t>(token)));
  std::vector<double> e(static_cast<size_t>(spec.d_feat));
  for (double& v : e) v = rng.uniform(-1.0, 1.0);
  return e;
}

}  // namespace

std::vector<Utterance> gen_dataset(const TaskSpec& spec, int64_t n, Split split) {
  spec.validate();
  if (n < 1) throw ValueError("gen_dataset: n must be >= 1");

  // Content tokens live above the reserved ids.
  const int32_t first_content = kUnkToken + 1;
  const int32_t last_content = static_cast<int32_t>(spec.vocab_size) - 1;

  std::vector<Utterance> utts;
  utts.reserve(static_cast<size_t>(n));
  const uint64_t split_salt = static_cast<uint64_t>(split) + 1;
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(Rng::mix(spec.seed, split_salt, static_cast<uint64_t>(i)));
    Utterance u;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%06lld", split_name(split),
                    static_cast<long long>(i));
      u.id = buf;
    }
    const int len = static_cast<int>(rng.uniform_int(spec.min_tokens, spec.max_tokens));
    u.tokens.push_back(kBosToken);
    std::vector<std::vector<double>> rows;
    for (int t = 0; t < len; ++t) {
      const auto tok = static_cast<int32_t>(rng.uniform_int(first_content, last_content));
      u.tokens.push_back(tok);
      const auto emb = token_embedding(spec, tok);
      const int reps = static_cast<int>(
          rng.uniform_int(spec.frames_per_token_min, spec.frames_per_token_max));
      for (int r = 0; r < reps; ++r) {
        std::vector<double> row(emb);
        for (double& v : row) v += rng.gaussian(0.0, spec.noise_std);
        rows.push_back(std::move(row));
      }
    }
    u.tokens.push_back(kEosToken);
    std::vector<double> flat;
    flat.reserve(rows.size() * static_cast<size_t>(spec.d_feat));
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    u.frames = Tensor::from_data({static_cast<int64_t>(rows.size()), spec.d_feat},
                                 std::move(flat));
    utts.push_back(std::move(u));
  }
  return utts;
}

void write_dataset(const std::string& path, const std::vector<Utterance>& utts) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("write_dataset: cannot open " + path);
  for (const Utterance& u : utts) {
    json j;
    j["id"] = u.id;
    const int64_t s = u.frames->shape[0], d = u.frames->shape[1];
    json frames = json::array();
    for (int64_t i = 0; i < s; ++i) {
      json row = json::array();
      for (int64_t k = 0; k < d; ++k) row.push_back(u.frames->data[static_cast<size_t>(i * d + k)]);
      frames.push_back(std::move(row));
    }
    j["frames"] = std::move(frames);
    j["tokens"] = u.tokens;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("write_dataset: write failed for " + path);
}

std::vector<Utterance> load_dataset(const std::string& path, const TaskSpec& spec) {
  std::ifstream is(path);
  if (!is) throw IoError("load_dataset: cannot open " + path);
  std::vector<Utterance> utts;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    Utterance u;
    try {
      u.id = j.at("id").get<std::string>();
      const auto& fr = j.at("frames");
      if (!fr.is_array() || fr.empty()) throw ValueError("frames must be a non-empty array");
      const int64_t s = static_cast<int64_t>(fr.size());
      const int64_t d = static_cast<int64_t>(fr[0].size());
      std::vector<double> flat;
      flat.reserve(static_cast<size_t>(s * d));
      for (const auto& row : fr) {
        if (static_cast<int64_t>(row.size()) != d) throw ValueError("ragged frame rows");
        for (const auto& v : row) flat.push_back(v.get<double>());
      }
      u.frames = Tensor::from_data({s, d}, std::move(flat));
      u.tokens = j.at("tokens").get<std::vector<int32_t>>();
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    if (u.frames->shape[1] != spec.d_feat) {
      throw IoError(path + ":" + std::to_string(line_no) + ": frame width " +
                    std::to_string(u.frames->shape[1]) + " != task d_feat " +
                    std::to_string(spec.d_feat));
    }
    if (u.tokens.size() < 3 || u.tokens.front() != kBosToken || u.tokens.back() != kEosToken) {
      throw IoError(path + ":" + std::to_string(line_no) +
                    ": token sequence must be BOS ... EOS");
    }
    for (size_t t = 1; t + 1 < u.tokens.size(); ++t) {
      if (u.tokens[t] <= kUnkToken || u.tokens[t] >= spec.vocab_size) {
        throw IoError(path + ":" + std::to_string(line_no) + ": token " +
                      std::to_string(u.tokens[t]) + " outside vocab of " +
                      std::to_string(spec.vocab_size));
      }
    }
    utts.push_back(std::move(u));
  }
  if (utts.empty()) throw IoError("load_dataset: " + path + " holds no records");
  return utts;
}

std::vector<Batch> batch_iter(const std::vector<Utterance>& data, int64_t batch_size,
                              uint64_t seed, int epoch) {
  if (batch_size < 1) throw ValueError("batch_iter: batch_size must be >= 1");
  if (epoch < 0) throw ValueError("batch_iter: negative epoch");
  if (data.empty()) throw ValueError("batch_iter: empty dataset");

  std::vector<int64_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::mix(seed, 0xBA7C4, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    b.indices.assign(order.begin() + static_cast<int64_t>(start),
                     order.begin() + static_cast<int64_t>(end));
    b.size = static_cast<int64_t>(b.indices.size());
    for (int64_t idx : b.indices) {
      b.max_len = std::max(b.max_len, static_cast<int64_t>(data[static_cast<size_t>(idx)].tokens.size()));
    }
    b.tokens.assign(static_cast<size_t>(b.size * b.max_len), kPadToken);
    b.token_mask.assign(static_cast<size_t>(b.size * b.max_len), 0);
    for (int64_t item = 0; item < b.size; ++item) {
      const auto& toks = data[static_cast<size_t>(b.indices[static_cast<size_t>(item)])].tokens;
      for (size_t p = 0; p < toks.size(); ++p) {
        b.tokens[static_cast<size_t>(item * b.max_len) + p] = toks[p];
        b.token_mask[static_cast<size_t>(item * b.max_len) + p] = 1;
      }
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace askd
