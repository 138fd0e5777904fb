// SPDX-License-Identifier: Apache-2.0
//
// Toy encoder-decoder. The encoder is a frozen seeded projection standing in
// for a pretrained feature extractor; teacher and student decoders differ
// only in depth/width. Decoder blocks are pre-norm with causal self-attention,
// cross-attention over encoder features, and a SwiGLU feed-forward.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "askd/tensor.hpp"

namespace askd {

// Reserved token ids. vocab_size >= 4 keeps them addressable.
inline constexpr int32_t kPadToken = 0;
inline constexpr int32_t kBosToken = 1;
inline constexpr int32_t kEosToken = 2;
inline constexpr int32_t kUnkToken = 3;

struct ModelConfig {
  int64_t vocab_size = 32;
  int64_t d_model = 64;
  int64_t n_heads = 4;
  int64_t n_layers = 2;
  int64_t d_ff = 128;
  int64_t d_enc = 32;  // encoder feature width consumed by cross-attention
  int64_t max_src_len = 64;
  int64_t max_tgt_len = 16;
  uint64_t seed = 101;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  uint64_t hash() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderConfig {
  int64_t d_feat = 16;
  int64_t d_model = 32;  // must equal ModelConfig::d_enc of the decoders
  int64_t max_src_len = 64;
  uint64_t seed = 7;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Sinusoidal table, one row per position.
TensorPtr sinusoidal_positions(int64_t len, int64_t dim);

// (swish(x W) elementwise* x V) W_out with swish(z) = z * sigmoid(z).
TensorPtr swiglu(const TensorPtr& x, const TensorPtr& w, const TensorPtr& v,
                 const TensorPtr& w_out);

// Deterministic frozen feature extractor: tanh(frames W1 + positions) W2.
// Parameters never enter a gradient graph.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(const EncoderConfig& cfg);

  // frames: [src_len x d_feat], 1 <= src_len <= max_src_len.
  TensorPtr encode(const TensorPtr& frames) const;

  const EncoderConfig& config() const { return cfg_; }
  // Bit-level fingerprint of the parameters, for frozen-contract audits.
  uint64_t param_checksum() const;

 private:
  EncoderConfig cfg_;
  TensorPtr w1_;   // [d_feat x d_model]
  TensorPtr w2_;   // [d_model x d_model]
  TensorPtr pos_;  // [max_src_len x d_model]
};

// Immutable copy of decoder parameters at an epoch boundary.
struct ModelSnapshot {
  ModelConfig config;
  int epoch = 0;
  std::vector<double> params;

  uint64_t config_hash() const { return config.hash(); }
  void save(const std::string& path) const;
  static ModelSnapshot load(const std::string& path);
};

class Decoder {
 public:
  // Fresh decoder with seeded Glorot-uniform weights (biases and layer-norm
  // offsets zero, gains one). trainable controls requires_grad on params.
  Decoder(const ModelConfig& cfg, bool trainable);

  static int64_t param_count(const ModelConfig& cfg);

  // Next-token logits, one row per input position. tokens must start with
  // BOS; causal masking keeps row t independent of tokens after t.
  TensorPtr logits(std::span<const int32_t> tokens, const TensorPtr& enc_features) const;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorPtr>& params() const { return params_; }
  bool trainable() const { return trainable_; }

  std::vector<double> flatten() const;
  void load_flat(std::span<const double> flat);

  ModelSnapshot snapshot(int epoch) const;
  static Decoder from_snapshot(const ModelSnapshot& snap, bool trainable);

 private:
  struct Layer {
    TensorPtr ln1_g, ln1_b;
    TensorPtr wq1, wk1, wv1, wo1;  // causal self-attention
    TensorPtr ln2_g, ln2_b;
    TensorPtr wq2, wk2, wv2, wo2;  // cross-attention (k/v project from d_enc)
    TensorPtr ln3_g, ln3_b;
    TensorPtr ff_w, ff_v, ff_out;  // SwiGLU
  };

  TensorPtr attention(const TensorPtr& q_src, const TensorPtr& kv_src, const TensorPtr& wq,
                      const TensorPtr& wk, const TensorPtr& wv, const TensorPtr& wo,
                      bool causal) const;

  ModelConfig cfg_;
  bool trainable_ = false;
  TensorPtr embedding_;  // [vocab x d_model]
  std::vector<Layer> layers_;
  TensorPtr lnf_g_, lnf_b_;
  TensorPtr w_vocab_;  // [d_model x vocab]
  TensorPtr pos_;      // constant positional table
  std::vector<TensorPtr> params_;
};

}  // namespace askd
