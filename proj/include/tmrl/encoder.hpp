#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tmrl/numkit.hpp"
#include "tmrl/tape.hpp"
#include "tmrl/temporal.hpp"
#include "tmrl/tokenizer.hpp"

namespace tmrl {

// ---------------------------------------------------------------------------
// Toy deterministic encoder: token embedding + position embedding followed by
// two feed-forward mixing layers (linear -> activation -> layer norm), then
// pooling. Vectors are rows; a linear layer computes x * W + b.
// ---------------------------------------------------------------------------

struct EncoderConfig {
  std::uint32_t vocab_size = 1024;
  std::uint32_t d = 64;
  std::uint32_t max_len = 64;
  std::uint32_t n_layers = 2;
  Activation activation = Activation::Tanh;
  bool layer_norm = true;
  double ln_eps = 1e-5;
  PoolingMode pooling = PoolingMode::Mean;
};

struct MixLayer {
  Matrix W;        // d x d
  Matrix b;        // 1 x d
  Matrix ln_gain;  // 1 x d
  Matrix ln_bias;  // 1 x d
};

struct EncoderParams {
  EncoderConfig cfg;
  Matrix embedding;  // vocab x d
  Matrix position;   // max_len x d
  std::vector<MixLayer> layers;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderParams p;
    p.cfg = cfg;
    Rng rng(seed);
    double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    auto fill = [&](Matrix& m, std::size_t r, std::size_t c, double bd) {
      m = Matrix(r, c);
      for (double& v : m.data) v = rng.uniform(-bd, bd);
    };
    fill(p.embedding, cfg.vocab_size, cfg.d, bound);
    fill(p.position, cfg.max_len, cfg.d, bound);
    p.layers.resize(cfg.n_layers);
    for (auto& layer : p.layers) {
      fill(layer.W, cfg.d, cfg.d, bound);
      layer.b = Matrix(1, cfg.d, 0.0);
      layer.ln_gain = Matrix(1, cfg.d, 1.0);
      layer.ln_bias = Matrix(1, cfg.d, 0.0);
    }
    return p;
  }

  static EncoderParams zeros(const EncoderConfig& cfg) {
    EncoderParams p;
    p.cfg = cfg;
    p.embedding = Matrix(cfg.vocab_size, cfg.d);
    p.position = Matrix(cfg.max_len, cfg.d);
    p.layers.resize(cfg.n_layers);
    for (auto& layer : p.layers) {
      layer.W = Matrix(cfg.d, cfg.d);
      layer.b = Matrix(1, cfg.d);
      layer.ln_gain = Matrix(1, cfg.d);
      layer.ln_bias = Matrix(1, cfg.d);
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Low-rank adapters
// ---------------------------------------------------------------------------

/// Additive low-rank delta on one linear layer: x*W + scale * (x*A)*B.
/// B starts at zero so a fresh adapter leaves the forward pass unchanged.
struct LoRAAdapter {
  std::size_t target_layer = 0;
  std::size_t rank = 4;
  Matrix A;  // d x r (down projection)
  Matrix B;  // r x d (up projection)
  double scale = 4.0;
  double dropout = 0.0;  // applied to the adapter input in training mode only

  static LoRAAdapter init(std::size_t layer, std::size_t d, std::size_t rank,
                          double scale, double dropout, Rng& rng) {
    if (rank < 1) throw config_error("LoRA rank must be >= 1");
    LoRAAdapter a;
    a.target_layer = layer;
    a.rank = rank;
    a.scale = scale;
    a.dropout = dropout;
    a.A = Matrix(d, rank);
    double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : a.A.data) v = rng.uniform(-bound, bound);
    a.B = Matrix(rank, d, 0.0);
    return a;
  }
};

/// Evaluation-mode adapter forward: x*W + scale*((x*A)*B).
inline Vector lora_forward(const Matrix& W, const LoRAAdapter& adapter,
                           const Vector& x) {
  if (x.size() != W.rows || adapter.A.rows != W.rows ||
      adapter.B.cols != W.cols || adapter.A.cols != adapter.B.rows)
    throw input_error("lora_forward: shape mismatch");
  Matrix xr = Matrix::row_vector(x);
  Matrix base = matmul(xr, W);
  Matrix delta = matmul(matmul(xr, adapter.A), adapter.B);
  Vector out(W.cols);
  for (std::size_t j = 0; j < W.cols; ++j)
    out[j] = base.at(0, j) + adapter.scale * delta.at(0, j);
  return out;
}

/// Folds the adapter into the base weight: W' = W + scale * (A*B).
inline Matrix lora_merge(const Matrix& W, const LoRAAdapter& adapter) {
  if (adapter.A.rows != W.rows || adapter.B.cols != W.cols ||
      adapter.A.cols != adapter.B.rows)
    throw input_error("lora_merge: shape mismatch");
  Matrix delta = matmul(adapter.A, adapter.B);
  Matrix out = W;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] += adapter.scale * delta.data[i];
  return out;
}

// ---------------------------------------------------------------------------
// Temporal projector: two-layer feed-forward map into the first t dimensions,
// mirroring the encoder's activation/layer-norm configuration. Training-only;
// discarded for inference.
// ---------------------------------------------------------------------------

struct TemporalProjector {
  std::size_t t = 8;
  Matrix W1;       // d x hidden
  Matrix b1;       // 1 x hidden
  Matrix ln_gain;  // 1 x hidden
  Matrix ln_bias;  // 1 x hidden
  Matrix W2;       // hidden x t
  Matrix b2;       // 1 x t
  Activation activation = Activation::Tanh;
  bool layer_norm = true;
  double ln_eps = 1e-5;

  static TemporalProjector init(std::size_t d, std::size_t hidden, std::size_t t,
                                Activation activation, bool layer_norm,
                                double ln_eps, std::uint64_t seed) {
    TemporalProjector p;
    p.t = t;
    p.activation = activation;
    p.layer_norm = layer_norm;
    p.ln_eps = ln_eps;
    Rng rng(seed);
    double b1 = 1.0 / std::sqrt(static_cast<double>(d));
    double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    p.W1 = Matrix(d, hidden);
    for (double& v : p.W1.data) v = rng.uniform(-b1, b1);
    p.b1 = Matrix(1, hidden, 0.0);
    p.ln_gain = Matrix(1, hidden, 1.0);
    p.ln_bias = Matrix(1, hidden, 0.0);
    p.W2 = Matrix(hidden, t);
    for (double& v : p.W2.data) v = rng.uniform(-b2, b2);
    p.b2 = Matrix(1, t, 0.0);
    return p;
  }

  /// Identity configuration used by tests: P(h) = first t entries of h.
  static TemporalProjector identity(std::size_t d, std::size_t t) {
    TemporalProjector p;
    p.t = t;
    p.activation = Activation::Identity;
    p.layer_norm = false;
    p.W1 = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i) p.W1.at(i, i) = 1.0;
    p.b1 = Matrix(1, d, 0.0);
    p.ln_gain = Matrix(1, d, 1.0);
    p.ln_bias = Matrix(1, d, 0.0);
    p.W2 = Matrix(d, t);
    for (std::size_t i = 0; i < t; ++i) p.W2.at(i, i) = 1.0;
    p.b2 = Matrix(1, t, 0.0);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Forward passes (evaluation mode, 64-bit)
// ---------------------------------------------------------------------------

namespace encdetail {

inline const LoRAAdapter* adapter_for_layer(
    const std::vector<LoRAAdapter>* adapters, std::size_t layer) {
  if (!adapters) return nullptr;
  for (const auto& a : *adapters)
    if (a.target_layer == layer) return &a;
  return nullptr;
}

inline Matrix layer_norm_rows(const Matrix& x, const Matrix& gain,
                              const Matrix& bias, double eps) {
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      double d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(x.cols);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j)
      out.at(i, j) = (x.at(i, j) - mean) * inv * gain.at(0, j) + bias.at(0, j);
  }
  return out;
}

}  // namespace encdetail

/// Contextualized token states, one row per token. Deterministic given
/// (params, adapters, seq). Evaluation mode: no dropout.
inline Matrix encode(const EncoderParams& params,
                     const std::vector<LoRAAdapter>* adapters,
                     const TokenSequence& seq) {
  const auto& cfg = params.cfg;
  const std::size_t L = seq.length();
  if (L == 0) throw input_error("encode: empty token sequence");
  if (L > cfg.max_len)
    throw input_error("encode: sequence length " + std::to_string(L) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  Matrix h(L, cfg.d);
  for (std::size_t i = 0; i < L; ++i) {
    if (seq.ids[i] >= cfg.vocab_size)
      throw input_error("encode: token id out of range");
    auto erow = params.embedding.row(seq.ids[i]);
    auto prow = params.position.row(i);
    for (std::size_t j = 0; j < cfg.d; ++j) h.at(i, j) = erow[j] + prow[j];
  }
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const MixLayer& layer = params.layers[li];
    Matrix z = matmul(h, layer.W);
    const LoRAAdapter* ad = encdetail::adapter_for_layer(adapters, li);
    if (ad) {
      Matrix delta = matmul(matmul(h, ad->A), ad->B);
      for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] += ad->scale * delta.data[i];
    }
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < cfg.d; ++j)
        z.at(i, j) = activate(cfg.activation, z.at(i, j) + layer.b.at(0, j));
    h = cfg.layer_norm
            ? encdetail::layer_norm_rows(z, layer.ln_gain, layer.ln_bias, cfg.ln_eps)
            : std::move(z);
  }
  return h;
}

/// Pools token states into one embedding row.
inline Vector pool(const Matrix& hidden, PoolingMode mode,
                   const TokenSequence& seq) {
  if (hidden.rows == 0) throw input_error("pool: empty hidden states");
  switch (mode) {
    case PoolingMode::Cls:
      if (!seq.cls_present)
        throw config_error("pool: CLS pooling requested but no CLS token");
      return hidden.row_copy(0);
    case PoolingMode::Eos:
      if (!seq.eos_present)
        throw config_error("pool: EOS pooling requested but no EOS token");
      return hidden.row_copy(hidden.rows - 1);
    case PoolingMode::Mean: {
      Vector out(hidden.cols, 0.0);
      for (std::size_t i = 0; i < hidden.rows; ++i)
        for (std::size_t j = 0; j < hidden.cols; ++j) out[j] += hidden.at(i, j);
      for (double& v : out) v /= static_cast<double>(hidden.rows);
      return out;
    }
  }
  throw config_error("pool: unknown mode");
}

/// Indices of tokens whose character ranges intersect any span; under CLS
/// pooling the CLS row is always included (first).
inline std::vector<std::size_t> temporal_token_indices(
    const std::vector<TemporalSpan>& spans, const TokenSequence& seq,
    PoolingMode mode) {
  std::vector<std::size_t> idx;
  if (mode == PoolingMode::Cls) {
    if (!seq.cls_present)
      throw config_error("temporal_token_indices: CLS mode without CLS token");
    idx.push_back(0);
  }
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (mode == PoolingMode::Cls && i == 0) continue;
    for (const auto& s : spans) {
      if (seq.offsets[i].intersects(s.begin, s.end)) {
        idx.push_back(i);
        break;
      }
    }
  }
  if (idx.empty())
    throw empty_temporal_error("no temporal tokens selected");
  return idx;
}

/// Rows of the temporal tokens (|T| x d).
inline Matrix select_temporal_tokens(const Matrix& hidden,
                                     const std::vector<TemporalSpan>& spans,
                                     const TokenSequence& seq, PoolingMode mode) {
  if (hidden.rows != seq.length())
    throw input_error("select_temporal_tokens: hidden/sequence length mismatch");
  auto idx = temporal_token_indices(spans, seq, mode);
  Matrix out(idx.size(), hidden.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = hidden.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Mean of the projected temporal token rows (the t-dimensional temporal
/// representation of the sample).
inline Vector project_temporal(const TemporalProjector& proj,
                               const Matrix& temporal_rows) {
  if (temporal_rows.rows == 0)
    throw input_error("project_temporal: need at least one row");
  Matrix mid = matmul(temporal_rows, proj.W1);
  for (std::size_t i = 0; i < mid.rows; ++i)
    for (std::size_t j = 0; j < mid.cols; ++j)
      mid.at(i, j) = activate(proj.activation, mid.at(i, j) + proj.b1.at(0, j));
  if (proj.layer_norm)
    mid = encdetail::layer_norm_rows(mid, proj.ln_gain, proj.ln_bias, proj.ln_eps);
  Matrix out = matmul(mid, proj.W2);
  Vector mean(proj.W2.cols, 0.0);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j)
      mean[j] += out.at(i, j) + proj.b2.at(0, j);
  for (double& v : mean) v /= static_cast<double>(out.rows);
  return mean;
}

// ---------------------------------------------------------------------------
// Tape-based forward passes for training
// ---------------------------------------------------------------------------

/// Tape variables for one optimization step. Base encoder blocks are
/// constants (frozen); adapter and projector blocks are trainable leaves.
struct EncoderVars {
  tape::Var embedding, position;
  std::vector<std::array<tape::Var, 4>> layers;  // W, b, ln_gain, ln_bias
  // Parallel to the model's adapter list.
  std::vector<tape::Var> adapter_A, adapter_B;
  // Projector (absent when training without a temporal objective).
  tape::Var p_W1, p_b1, p_lng, p_lnb, p_W2, p_b2;
  bool has_projector = false;
};

inline EncoderVars make_encoder_vars(const EncoderParams& params,
                                     const std::vector<LoRAAdapter>& adapters,
                                     const TemporalProjector* projector,
                                     bool train_adapters = true,
                                     bool train_projector = true) {
  EncoderVars v;
  v.embedding = tape::constant(params.embedding);
  v.position = tape::constant(params.position);
  for (const auto& layer : params.layers)
    v.layers.push_back({tape::constant(layer.W), tape::constant(layer.b),
                        tape::constant(layer.ln_gain),
                        tape::constant(layer.ln_bias)});
  for (const auto& a : adapters) {
    v.adapter_A.push_back(tape::leaf(a.A, train_adapters));
    v.adapter_B.push_back(tape::leaf(a.B, train_adapters));
  }
  if (projector) {
    v.has_projector = true;
    v.p_W1 = tape::leaf(projector->W1, train_projector);
    v.p_b1 = tape::leaf(projector->b1, train_projector);
    v.p_lng = tape::leaf(projector->ln_gain, train_projector);
    v.p_lnb = tape::leaf(projector->ln_bias, train_projector);
    v.p_W2 = tape::leaf(projector->W2, train_projector);
    v.p_b2 = tape::leaf(projector->b2, train_projector);
  }
  return v;
}

/// Tape counterpart of encode(). dropout_masks, when provided, holds one
/// pre-scaled mask per adapter (inverted dropout), applied to the adapter
/// branch input only.
inline tape::Var encode_tape(const EncoderVars& vars, const EncoderParams& params,
                             const std::vector<LoRAAdapter>& adapters,
                             const TokenSequence& seq,
                             const std::vector<Matrix>* dropout_masks = nullptr) {
  const auto& cfg = params.cfg;
  const std::size_t L = seq.length();
  if (L == 0) throw input_error("encode_tape: empty token sequence");
  if (L > cfg.max_len) throw input_error("encode_tape: sequence exceeds max_len");
  std::vector<std::size_t> tok_idx(seq.ids.begin(), seq.ids.end());
  std::vector<std::size_t> pos_idx(L);
  for (std::size_t i = 0; i < L; ++i) pos_idx[i] = i;
  tape::Var h = tape::add(tape::select_rows(vars.embedding, tok_idx),
                          tape::select_rows(vars.position, pos_idx));
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    tape::Var z = tape::matmul(h, vars.layers[li][0]);
    for (std::size_t ai = 0; ai < adapters.size(); ++ai) {
      if (adapters[ai].target_layer != li) continue;
      tape::Var branch_in = h;
      if (dropout_masks && !(*dropout_masks)[ai].data.empty()) {
        Matrix mask = (*dropout_masks)[ai];
        if (mask.rows != L || mask.cols != cfg.d)
          throw input_error("encode_tape: dropout mask shape mismatch");
        branch_in = tape::mul(h, tape::constant(std::move(mask)));
      }
      tape::Var delta =
          tape::matmul(tape::matmul(branch_in, vars.adapter_A[ai]), vars.adapter_B[ai]);
      z = tape::add(z, tape::scale(delta, adapters[ai].scale));
    }
    z = tape::act(tape::add_rowvec(z, vars.layers[li][1]), cfg.activation);
    h = cfg.layer_norm
            ? tape::layer_norm(z, vars.layers[li][2], vars.layers[li][3], cfg.ln_eps)
            : z;
  }
  return h;
}

inline tape::Var pool_tape(const tape::Var& hidden, PoolingMode mode,
                           const TokenSequence& seq) {
  switch (mode) {
    case PoolingMode::Cls:
      if (!seq.cls_present) throw config_error("pool_tape: no CLS token");
      return tape::select_rows(hidden, {0});
    case PoolingMode::Eos:
      if (!seq.eos_present) throw config_error("pool_tape: no EOS token");
      return tape::select_rows(hidden, {hidden->val.rows - 1});
    case PoolingMode::Mean:
      return tape::mean_rows(hidden);
  }
  throw config_error("pool_tape: unknown mode");
}

/// Tape counterpart of project_temporal() over pre-selected rows.
inline tape::Var project_temporal_tape(const EncoderVars& vars,
                                       const TemporalProjector& proj,
                                       const tape::Var& rows) {
  tape::Var mid = tape::act(
      tape::add_rowvec(tape::matmul(rows, vars.p_W1), vars.p_b1), proj.activation);
  if (proj.layer_norm)
    mid = tape::layer_norm(mid, vars.p_lng, vars.p_lnb, proj.ln_eps);
  tape::Var out = tape::add_rowvec(tape::matmul(mid, vars.p_W2), vars.p_b2);
  return tape::mean_rows(out);
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: magic "TMRL", version, dims, pooling mode, then
// parameter blocks as 32-bit little-endian floats, closed by a content digest.
// ---------------------------------------------------------------------------

struct Checkpoint {
  EncoderParams base;
  std::vector<LoRAAdapter> adapters;
  std::optional<TemporalProjector> projector;
  // Merged per-layer weights (base W + adapter delta), for zero-overhead
  // inference without the adapter structures.
  std::optional<std::vector<Matrix>> merged_weights;
};

namespace ckptdetail {

constexpr std::uint32_t kVersion = 1;

inline void put_matrix(std::string& out, const Matrix& m) {
  wire::put_u32(out, static_cast<std::uint32_t>(m.rows));
  wire::put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (double v : m.data) wire::put_f32(out, static_cast<float>(v));
}

inline Matrix get_matrix(wire::Reader& r) {
  std::uint32_t rows = r.get_u32();
  std::uint32_t cols = r.get_u32();
  Matrix m(rows, cols);
  for (double& v : m.data) v = static_cast<double>(r.get_f32());
  return m;
}

}  // namespace ckptdetail

inline std::string serialize_checkpoint(const Checkpoint& cp) {
  using namespace ckptdetail;
  std::string out;
  out.append("TMRL");
  wire::put_u32(out, kVersion);
  const auto& cfg = cp.base.cfg;
  wire::put_u32(out, cfg.vocab_size);
  wire::put_u32(out, cfg.d);
  wire::put_u32(out, cfg.max_len);
  wire::put_u32(out, cfg.n_layers);
  wire::put_u32(out, static_cast<std::uint32_t>(cfg.pooling));
  wire::put_u32(out, static_cast<std::uint32_t>(cfg.activation));
  wire::put_u32(out, cfg.layer_norm ? 1 : 0);
  wire::put_f32(out, static_cast<float>(cfg.ln_eps));
  put_matrix(out, cp.base.embedding);
  put_matrix(out, cp.base.position);
  for (const auto& layer : cp.base.layers) {
    put_matrix(out, layer.W);
    put_matrix(out, layer.b);
    put_matrix(out, layer.ln_gain);
    put_matrix(out, layer.ln_bias);
  }
  wire::put_u32(out, static_cast<std::uint32_t>(cp.adapters.size()));
  for (const auto& a : cp.adapters) {
    wire::put_u32(out, static_cast<std::uint32_t>(a.target_layer));
    wire::put_u32(out, static_cast<std::uint32_t>(a.rank));
    wire::put_f32(out, static_cast<float>(a.scale));
    wire::put_f32(out, static_cast<float>(a.dropout));
    put_matrix(out, a.A);
    put_matrix(out, a.B);
  }
  wire::put_u32(out, cp.projector ? 1 : 0);
  if (cp.projector) {
    const auto& p = *cp.projector;
    wire::put_u32(out, static_cast<std::uint32_t>(p.t));
    wire::put_u32(out, static_cast<std::uint32_t>(p.activation));
    wire::put_u32(out, p.layer_norm ? 1 : 0);
    wire::put_f32(out, static_cast<float>(p.ln_eps));
    put_matrix(out, p.W1);
    put_matrix(out, p.b1);
    put_matrix(out, p.ln_gain);
    put_matrix(out, p.ln_bias);
    put_matrix(out, p.W2);
    put_matrix(out, p.b2);
  }
  wire::put_u32(out, cp.merged_weights ? 1 : 0);
  if (cp.merged_weights) {
    wire::put_u32(out, static_cast<std::uint32_t>(cp.merged_weights->size()));
    for (const auto& w : *cp.merged_weights) put_matrix(out, w);
  }
  Fnv64 digest;
  digest.update(out.data(), out.size());
  wire::put_u64(out, digest.digest());
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  using namespace ckptdetail;
  if (bytes.size() < 16) throw input_error("checkpoint: file too small");
  if (bytes.substr(0, 4) != "TMRL")
    throw input_error("checkpoint: bad magic (not a TMRL checkpoint)");
  {
    Fnv64 digest;
    digest.update(bytes.data(), bytes.size() - 8);
    std::string payload = bytes.substr(bytes.size() - 8);
    wire::Reader dr(payload, "checkpoint digest");
    if (dr.get_u64() != digest.digest())
      throw input_error("checkpoint: digest mismatch (corrupted file)");
  }
  std::string body = bytes.substr(4, bytes.size() - 12);
  wire::Reader r(body, "checkpoint");
  std::uint32_t version = r.get_u32();
  if (version != kVersion)
    throw input_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint cp;
  EncoderConfig cfg;
  cfg.vocab_size = r.get_u32();
  cfg.d = r.get_u32();
  cfg.max_len = r.get_u32();
  cfg.n_layers = r.get_u32();
  cfg.pooling = static_cast<PoolingMode>(r.get_u32());
  cfg.activation = static_cast<Activation>(r.get_u32());
  cfg.layer_norm = r.get_u32() != 0;
  cfg.ln_eps = static_cast<double>(r.get_f32());
  cp.base.cfg = cfg;
  cp.base.embedding = get_matrix(r);
  cp.base.position = get_matrix(r);
  cp.base.layers.resize(cfg.n_layers);
  for (auto& layer : cp.base.layers) {
    layer.W = get_matrix(r);
    layer.b = get_matrix(r);
    layer.ln_gain = get_matrix(r);
    layer.ln_bias = get_matrix(r);
  }
  std::uint32_t n_adapters = r.get_u32();
  for (std::uint32_t i = 0; i < n_adapters; ++i) {
    LoRAAdapter a;
    a.target_layer = r.get_u32();
    a.rank = r.get_u32();
    a.scale = static_cast<double>(r.get_f32());
    a.dropout = static_cast<double>(r.get_f32());
    a.A = get_matrix(r);
    a.B = get_matrix(r);
    cp.adapters.push_back(std::move(a));
  }
  if (r.get_u32() != 0) {
    TemporalProjector p;
    p.t = r.get_u32();
    p.activation = static_cast<Activation>(r.get_u32());
    p.layer_norm = r.get_u32() != 0;
    p.ln_eps = static_cast<double>(r.get_f32());
    p.W1 = get_matrix(r);
    p.b1 = get_matrix(r);
    p.ln_gain = get_matrix(r);
    p.ln_bias = get_matrix(r);
    p.W2 = get_matrix(r);
    p.b2 = get_matrix(r);
    cp.projector = std::move(p);
  }
  if (r.get_u32() != 0) {
    std::uint32_t n = r.get_u32();
    std::vector<Matrix> merged;
    for (std::uint32_t i = 0; i < n; ++i) merged.push_back(get_matrix(r));
    cp.merged_weights = std::move(merged);
  }
  return cp;
}

inline void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(cp));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

/// EncoderParams with adapters folded into the layer weights.
inline EncoderParams merged_params(const EncoderParams& base,
                                   const std::vector<LoRAAdapter>& adapters) {
  EncoderParams out = base;
  for (const auto& a : adapters) {
    if (a.target_layer >= out.layers.size())
      throw input_error("merged_params: adapter targets missing layer");
    out.layers[a.target_layer].W = lora_merge(out.layers[a.target_layer].W, a);
  }
  return out;
}

}  // namespace tmrl
