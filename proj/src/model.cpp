// SPDX-License-Identifier: Apache-2.0

#include "askd/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "askd/rng.hpp"

namespace askd {

using nlohmann::json;

void ModelConfig::validate() const {
  if (vocab_size < 4) throw ConfigError("model: vocab_size must be >= 4 (pad/bos/eos/unk)");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || d_enc < 1) {
    throw ConfigError("model: all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
  if (max_src_len < 1 || max_tgt_len < 1) {
    throw ConfigError("model: max_src_len and max_tgt_len must be >= 1");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["vocab_size"] = vocab_size;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["n_layers"] = n_layers;
  j["d_ff"] = d_ff;
  j["d_enc"] = d_enc;
  j["max_src_len"] = max_src_len;
  j["max_tgt_len"] = max_tgt_len;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.d_model = j.at("d_model").get<int64_t>();
  cfg.n_heads = j.at("n_heads").get<int64_t>();
  cfg.n_layers = j.at("n_layers").get<int64_t>();
  cfg.d_ff = j.at("d_ff").get<int64_t>();
  cfg.d_enc = j.at("d_enc").get<int64_t>();
  cfg.max_src_len = j.at("max_src_len").get<int64_t>();
  cfg.max_tgt_len = j.at("max_tgt_len").get<int64_t>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.validate();
  return cfg;
}

uint64_t ModelConfig::hash() const {
  const std::string s = to_json();  // nlohmann keeps object keys sorted
  return fnv1a64(s.data(), s.size());
}

void EncoderConfig::validate() const {
  if (d_feat < 1 || d_model < 1 || max_src_len < 1) {
    throw ConfigError("encoder: all dimensions must be >= 1");
  }
}

TensorPtr sinusoidal_positions(int64_t len, int64_t dim) {
  auto t = Tensor::zeros({len, dim});
  for (int64_t p = 0; p < len; ++p) {
    for (int64_t i = 0; i < dim; ++i) {
      const double angle =
          static_cast<double>(p) /
          std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      t->data[static_cast<size_t>(p * dim + i)] = (i % 2 == 0) ? std::sin(angle)
                                                               : std::cos(angle);
    }
  }
  return t;
}

TensorPtr swiglu(const TensorPtr& x, const TensorPtr& w, const TensorPtr& v,
                 const TensorPtr& w_out) {
  auto a = ops::matmul(x, w);
  auto gate = ops::mul(a, ops::sigmoid(a));  // swish
  return ops::matmul(ops::mul(gate, ops::matmul(x, v)), w_out);
}

// ---------------------------------------------------------------------------
// FrozenEncoder
// ---------------------------------------------------------------------------

namespace {

TensorPtr seeded_uniform(Rng& rng, int64_t rows, int64_t cols, double limit) {
  auto t = Tensor::zeros({rows, cols});
  for (double& v : t->data) v = rng.uniform(-limit, limit);
  return t;
}

TensorPtr glorot(Rng& rng, int64_t fan_in, int64_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return seeded_uniform(rng, fan_in, fan_out, limit);
}

}  // namespace

FrozenEncoder::FrozenEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg.seed, 0xE4C0DE));
  w1_ = glorot(rng, cfg.d_feat, cfg.d_model);
  w2_ = glorot(rng, cfg.d_model, cfg.d_model);
  pos_ = sinusoidal_positions(cfg.max_src_len, cfg.d_model);
}

TensorPtr FrozenEncoder::encode(const TensorPtr& frames) const {
  if (!frames->is_matrix()) {
    throw ShapeError("encode: frames must be [src_len x d_feat], got " + shape_str(*frames));
  }
  const int64_t s = frames->shape[0];
  if (s < 1) throw ValueError("encode: zero-frame input");
  if (s > cfg_.max_src_len) {
    throw ValueError("encode: src_len " + std::to_string(s) + " exceeds max " +
                     std::to_string(cfg_.max_src_len));
  }
  if (frames->shape[1] != cfg_.d_feat) {
    throw ShapeError("encode: expected d_feat " + std::to_string(cfg_.d_feat) + ", got " +
                     shape_str(*frames));
  }
  for (double v : frames->data) {
    if (!std::isfinite(v)) throw NonFiniteError("encode: non-finite frame value");
  }
  // Parameters are grad-free constants, so nothing records on any graph.
  // Positions mix in additively after the nonlinearity so frame content
  // stays linearly recoverable downstream.
  auto h = ops::matmul(frames, w1_);
  for (double& v : h->data) v = std::tanh(v);
  auto out = ops::matmul(h, w2_);
  const int64_t d = cfg_.d_model;
  for (int64_t i = 0; i < s; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      const size_t k = static_cast<size_t>(i * d + j);
      out->data[k] += pos_->data[k];
    }
  }
  return out;
}

uint64_t FrozenEncoder::param_checksum() const {
  uint64_t h = fnv1a64(w1_->data.data(), w1_->data.size() * sizeof(double));
  h ^= fnv1a64(w2_->data.data(), w2_->data.size() * sizeof(double));
  return h;
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder::Decoder(const ModelConfig& cfg, bool trainable) : cfg_(cfg), trainable_(trainable) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg.seed, 0xDEC0DE));
  const int64_t d = cfg.d_model, de = cfg.d_enc, ff = cfg.d_ff, v = cfg.vocab_size;

  auto param = [&](TensorPtr t) {
    t->requires_grad = trainable_;
    params_.push_back(t);
    return t;
  };
  auto ones_vec = [&](int64_t n) { return Tensor::full({n}, 1.0); };
  auto zeros_vec = [&](int64_t n) { return Tensor::zeros({n}); };

  embedding_ = param(glorot(rng, v, d));
  layers_.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : layers_) {
    l.ln1_g = param(ones_vec(d));
    l.ln1_b = param(zeros_vec(d));
    l.wq1 = param(glorot(rng, d, d));
    l.wk1 = param(glorot(rng, d, d));
    l.wv1 = param(glorot(rng, d, d));
    l.wo1 = param(glorot(rng, d, d));
    l.ln2_g = param(ones_vec(d));
    l.ln2_b = param(zeros_vec(d));
    l.wq2 = param(glorot(rng, d, d));
    l.wk2 = param(glorot(rng, de, d));
    l.wv2 = param(glorot(rng, de, d));
    l.wo2 = param(glorot(rng, d, d));
    l.ln3_g = param(ones_vec(d));
    l.ln3_b = param(zeros_vec(d));
    l.ff_w = param(glorot(rng, d, ff));
    l.ff_v = param(glorot(rng, d, ff));
    l.ff_out = param(glorot(rng, ff, d));
  }
  lnf_g_ = param(ones_vec(d));
  lnf_b_ = param(zeros_vec(d));
  w_vocab_ = param(glorot(rng, d, v));
  pos_ = sinusoidal_positions(cfg.max_tgt_len, d);
}

int64_t Decoder::param_count(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model, de = cfg.d_enc, ff = cfg.d_ff, v = cfg.vocab_size;
  const int64_t per_layer = 2 * d            // ln1
                            + 4 * d * d      // self-attention
                            + 2 * d          // ln2
                            + 2 * d * d + 2 * de * d  // cross-attention
                            + 2 * d          // ln3
                            + 2 * d * ff + ff * d;    // swiglu
  return v * d + cfg.n_layers * per_layer + 2 * d + d * v;
}

TensorPtr Decoder::attention(const TensorPtr& q_src, const TensorPtr& kv_src,
                             const TensorPtr& wq, const TensorPtr& wk, const TensorPtr& wv,
                             const TensorPtr& wo, bool causal) const {
  const int64_t t = q_src->shape[0];
  const int64_t s = kv_src->shape[0];
  const int64_t dh = cfg_.d_model / cfg_.n_heads;

  auto q = ops::matmul(q_src, wq);
  auto k = ops::matmul(kv_src, wk);
  auto v = ops::matmul(kv_src, wv);

  TensorPtr causal_keep;
  if (causal) {
    causal_keep = Tensor::zeros({t, s});
    for (int64_t i = 0; i < t; ++i) {
      for (int64_t j = 0; j <= i && j < s; ++j) {
        causal_keep->data[static_cast<size_t>(i * s + j)] = 1.0;
      }
    }
  }

  TensorPtr heads;
  for (int64_t h = 0; h < cfg_.n_heads; ++h) {
    auto qh = ops::slice(q, 0, t, h * dh, (h + 1) * dh);
    auto kh = ops::slice(k, 0, s, h * dh, (h + 1) * dh);
    auto vh = ops::slice(v, 0, s, h * dh, (h + 1) * dh);
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)),
                             1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = ops::mask_fill(scores, causal_keep, -1e9);
    auto att = ops::matmul(ops::softmax_rows(scores), vh);
    heads = h == 0 ? att : ops::concat(heads, att, 1);
  }
  return ops::matmul(heads, wo);
}

TensorPtr Decoder::logits(std::span<const int32_t> tokens, const TensorPtr& enc_features) const {
  if (tokens.empty()) throw ValueError("logits: empty token sequence");
  if (tokens[0] != kBosToken) throw ValueError("logits: sequence must begin with BOS");
  if (static_cast<int64_t>(tokens.size()) > cfg_.max_tgt_len) {
    throw ValueError("logits: sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_tgt_len " + std::to_string(cfg_.max_tgt_len));
  }
  for (int32_t tok : tokens) {
    if (tok < 0 || tok >= cfg_.vocab_size) {
      throw ValueError("logits: token id " + std::to_string(tok) + " outside vocab of " +
                       std::to_string(cfg_.vocab_size));
    }
  }
  if (!enc_features->is_matrix() || enc_features->shape[1] != cfg_.d_enc) {
    throw ShapeError("logits: encoder features must be [src_len x " +
                     std::to_string(cfg_.d_enc) + "], got " + shape_str(*enc_features));
  }

  const int64_t t = static_cast<int64_t>(tokens.size());
  std::vector<int32_t> ids(tokens.begin(), tokens.end());
  // sqrt(d) embedding scale keeps token content above the positional signal
  auto x = ops::add(ops::scale(ops::gather_rows(embedding_, ids),
                               std::sqrt(static_cast<double>(cfg_.d_model))),
                    ops::slice(pos_, 0, t, 0, cfg_.d_model));
  for (const Layer& l : layers_) {
    auto h1 = ops::row_affine(ops::layer_norm_rows(x), l.ln1_g, l.ln1_b);
    x = ops::add(x, attention(h1, h1, l.wq1, l.wk1, l.wv1, l.wo1, /*causal=*/true));
    auto h2 = ops::row_affine(ops::layer_norm_rows(x), l.ln2_g, l.ln2_b);
    x = ops::add(x, attention(h2, enc_features, l.wq2, l.wk2, l.wv2, l.wo2, /*causal=*/false));
    auto h3 = ops::row_affine(ops::layer_norm_rows(x), l.ln3_g, l.ln3_b);
    x = ops::add(x, swiglu(h3, l.ff_w, l.ff_v, l.ff_out));
  }
  x = ops::row_affine(ops::layer_norm_rows(x), lnf_g_, lnf_b_);
  return ops::matmul(x, w_vocab_);
}

std::vector<double> Decoder::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(param_count(cfg_)));
  for (const auto& p : params_) flat.insert(flat.end(), p->data.begin(), p->data.end());
  return flat;
}

void Decoder::load_flat(std::span<const double> flat) {
  if (static_cast<int64_t>(flat.size()) != param_count(cfg_)) {
    throw ValueError("load_flat: expected " + std::to_string(param_count(cfg_)) +
                     " values, got " + std::to_string(flat.size()));
  }
  size_t off = 0;
  for (const auto& p : params_) {
    std::copy(flat.begin() + static_cast<int64_t>(off),
              flat.begin() + static_cast<int64_t>(off + p->data.size()), p->data.begin());
    off += p->data.size();
  }
}

ModelSnapshot Decoder::snapshot(int epoch) const {
  return ModelSnapshot{cfg_, epoch, flatten()};
}

Decoder Decoder::from_snapshot(const ModelSnapshot& snap, bool trainable) {
  Decoder dec(snap.config, trainable);
  dec.load_flat(snap.params);
  return dec;
}

// ---------------------------------------------------------------------------
// snapshot file I/O (little-endian host assumed; format checked by magic)
// ---------------------------------------------------------------------------

namespace {

constexpr char kSnapMagic[8] = {'A', 'S', 'K', 'D', 'S', 'N', 'A', 'P'};
constexpr uint32_t kSnapVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void ModelSnapshot::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("snapshot save: cannot open " + path);
  os.write(kSnapMagic, sizeof(kSnapMagic));
  write_pod(os, kSnapVersion);
  write_pod(os, config_hash());
  write_pod(os, static_cast<int32_t>(epoch));
  write_pod(os, static_cast<uint64_t>(params.size()));
  const std::string cfg_json = config.to_json();
  write_pod(os, static_cast<uint32_t>(cfg_json.size()));
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  os.write(reinterpret_cast<const char*>(params.data()),
           static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!os) throw IoError("snapshot save: write failed for " + path);
}

ModelSnapshot ModelSnapshot::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("snapshot load: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kSnapMagic, sizeof(magic)) != 0) {
    throw IoError("snapshot load: bad magic in " + path);
  }
  uint32_t version = 0;
  read_pod(is, version);
  if (version != kSnapVersion) {
    throw IoError("snapshot load: unsupported version " + std::to_string(version));
  }
  uint64_t stored_hash = 0;
  read_pod(is, stored_hash);
  int32_t epoch = 0;
  read_pod(is, epoch);
  uint64_t n_params = 0;
  read_pod(is, n_params);
  uint32_t json_len = 0;
  read_pod(is, json_len);
  std::string cfg_json(json_len, '\0');
  is.read(cfg_json.data(), json_len);
  if (!is) throw IoError("snapshot load: truncated header in " + path);

  ModelSnapshot snap;
  snap.config = ModelConfig::from_json(cfg_json);
  snap.epoch = epoch;
  if (snap.config.hash() != stored_hash) {
    throw IoError("snapshot load: config hash mismatch in " + path);
  }
  if (n_params != static_cast<uint64_t>(Decoder::param_count(snap.config))) {
    throw IoError("snapshot load: parameter count mismatch in " + path);
  }
  snap.params.resize(n_params);
  is.read(reinterpret_cast<char*>(snap.params.data()),
          static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!is) throw IoError("snapshot load: truncated parameters in " + path);
  return snap;
}

}  // namespace askd
