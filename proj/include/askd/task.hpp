// SPDX-License-Identifier: Apache-2.0
//
// Synthetic speech-like transduction task. Each utterance maps a random
// token sequence to a frame matrix: every token owns a fixed seeded
// embedding, repeated for a sampled duration and perturbed with Gaussian
// noise. Generation is bit-deterministic per (spec, split, index).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "askd/tensor.hpp"

namespace askd {

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

struct TaskSpec {
  int64_t vocab_size = 32;
  int64_t d_feat = 16;
  int frames_per_token_min = 2;
  int frames_per_token_max = 4;
  double noise_std = 0.5;
  int min_tokens = 4;
  int max_tokens = 12;
  uint64_t seed = 42;

  void validate() const;
  std::string to_json() const;
  static TaskSpec from_json(const std::string& text);
};

struct Utterance {
  std::string id;
  TensorPtr frames;             // [src_len x d_feat]
  std::vector<int32_t> tokens;  // BOS ... EOS, no padding inside
};

// n utterances for the split, fully determined by (spec, n, split).
std::vector<Utterance> gen_dataset(const TaskSpec& spec, int64_t n, Split split);

// Line-delimited records: {"id": ..., "frames": [[...]], "tokens": [...]}.
void write_dataset(const std::string& path, const std::vector<Utterance>& utts);

// Parse errors name the offending line; token ids are checked against the
// task vocabulary.
std::vector<Utterance> load_dataset(const std::string& path, const TaskSpec& spec);

// Padded minibatch view. Items reference the backing dataset.
struct Batch {
  std::vector<int64_t> indices;           // dataset order of members
  std::vector<int32_t> tokens;            // [size x max_len], kPadToken-filled
  std::vector<uint8_t> token_mask;        // 1 = real token, 0 = padding
  int64_t size = 0;
  int64_t max_len = 0;

  int32_t token_at(int64_t item, int64_t pos) const { return tokens[static_cast<size_t>(item * max_len + pos)]; }
  bool is_real(int64_t item, int64_t pos) const { return token_mask[static_cast<size_t>(item * max_len + pos)] != 0; }
};

// Seeded shuffle of the dataset order, then fixed-size chunks (the tail
// batch may be short). Order is a pure function of (seed, epoch).
std::vector<Batch> batch_iter(const std::vector<Utterance>& data, int64_t batch_size,
                              uint64_t seed, int epoch);

}  // namespace askd
