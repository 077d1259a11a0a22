#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/rng.hpp"

namespace vulnir {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Precision { Single, Double };

inline std::string precision_name(Precision p) {
  return p == Precision::Single ? "single" : "double";
}

inline Precision precision_from_name(const std::string& s) {
  if (s == "single") return Precision::Single;
  if (s == "double") return Precision::Double;
  throw ConfigError("unknown precision '" + s + "' (expected 'single' or 'double')");
}

// Architecture constants baked into the wiring.
inline constexpr double kAttentionMaskBias = -1e9;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::int32_t vocab_size = 0;  // total IDs including specials; set from the vocabulary
  std::int32_t d_model = 128;
  std::int32_t n_heads = 4;
  std::int32_t n_layers = 4;
  std::int32_t d_ff = 256;
  std::int32_t max_len = 512;
  std::int32_t n_fc_layers = 2;  // classifier head depth, the ablation variable
  std::int32_t fc_hidden = 64;
  double dropout_rate = 0.1;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("model: vocab_size must be >= 1");
    if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1 || max_len < 1 || fc_hidden < 1) {
      throw ConfigError("model: all sizes must be >= 1");
    }
    if (n_fc_layers < 1) throw ConfigError("model: n_fc_layers must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (d_model % 2 != 0) throw ConfigError("model: d_model must be even for sinusoidal encoding");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ConfigError("model: dropout_rate must be in [0, 1)");
    }
  }

  static ModelConfig bert_like() {
    ModelConfig cfg;
    cfg.n_fc_layers = 1;
    return cfg;
  }

  static ModelConfig distilbert_like() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_fc_layers = 1;
    return cfg;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                     {"n_heads", cfg.n_heads},       {"n_layers", cfg.n_layers},
                     {"d_ff", cfg.d_ff},             {"max_len", cfg.max_len},
                     {"n_fc_layers", cfg.n_fc_layers}, {"fc_hidden", cfg.fc_hidden},
                     {"dropout_rate", cfg.dropout_rate}};
}

// Accepts an optional "preset" ("bert-like" / "distilbert-like") plus field
// overrides.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "bert-like") {
      cfg = ModelConfig::bert_like();
    } else if (preset == "distilbert-like") {
      cfg = ModelConfig::distilbert_like();
    } else {
      throw ConfigError("unknown model preset '" + preset + "'");
    }
  }
  auto get_int = [&](const char* key, std::int32_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::int32_t>();
  };
  get_int("vocab_size", cfg.vocab_size);
  get_int("d_model", cfg.d_model);
  get_int("n_heads", cfg.n_heads);
  get_int("n_layers", cfg.n_layers);
  get_int("d_ff", cfg.d_ff);
  get_int("max_len", cfg.max_len);
  get_int("n_fc_layers", cfg.n_fc_layers);
  get_int("fc_hidden", cfg.fc_hidden);
  if (j.contains("dropout_rate")) cfg.dropout_rate = j.at("dropout_rate").get<double>();
  return cfg;
}

inline void from_json(const nlohmann::json& j, ModelConfig& cfg) { cfg = model_config_from_json(j); }

// PE[pos, 2i]   = sin(pos / 10000^(2i/d))
// PE[pos, 2i+1] = cos(pos / 10000^(2i/d))
template <typename Scalar>
Mat<Scalar> positional_encoding(std::int32_t max_len, std::int32_t d_model) {
  if (d_model % 2 != 0) {
    throw OddDimension("positional_encoding: d_model must be even, got " + std::to_string(d_model));
  }
  if (max_len < 1 || d_model < 1) throw ShapeMismatch("positional_encoding: sizes must be >= 1");
  Mat<Scalar> pe(max_len, d_model);
  for (std::int32_t pos = 0; pos < max_len; ++pos) {
    for (std::int32_t i = 0; 2 * i < d_model; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * i) / d_model);
      pe(pos, 2 * i) = static_cast<Scalar>(std::sin(angle));
      pe(pos, 2 * i + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

template <typename Scalar>
struct EncoderBlockWeights {
  Mat<Scalar> w_q, w_k, w_v, w_o;      // d_model x d_model, applied as y = x * W
  Mat<Scalar> ff_w1, ff_b1;            // d_model x d_ff, 1 x d_ff
  Mat<Scalar> ff_w2, ff_b2;            // d_ff x d_model, 1 x d_model
  Mat<Scalar> ln1_gain, ln1_bias;      // 1 x d_model
  Mat<Scalar> ln2_gain, ln2_bias;      // 1 x d_model
};

template <typename Scalar>
struct FcLayer {
  Mat<Scalar> w;  // in x out
  Mat<Scalar> b;  // 1 x out
};

template <typename Scalar>
class TransformerModel {
public:
  ModelConfig cfg;
  Mat<Scalar> embedding;                           // vocab_size x d_model
  Mat<Scalar> pe;                                  // max_len x d_model, constant
  std::vector<EncoderBlockWeights<Scalar>> blocks;
  std::vector<FcLayer<Scalar>> head;

  TransformerModel(const ModelConfig& config, std::uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(seed);
    // draws happen in double so single/double models share an init stream
    auto fill = [&rng](Mat<Scalar>& m, std::int64_t rows, std::int64_t cols, double fan_in) {
      const double bound = 1.0 / std::sqrt(fan_in);
      m.resize(rows, cols);
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
          m(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
        }
      }
    };

    const auto d = cfg.d_model;
    // a lookup activates exactly one input, so the embedding's effective
    // fan-in is 1; anything smaller lets the positional encoding drown the
    // token signal
    fill(embedding, cfg.vocab_size, d, 1.0);
    pe = positional_encoding<Scalar>(cfg.max_len, d);

    blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& b : blocks) {
      fill(b.w_q, d, d, d);
      fill(b.w_k, d, d, d);
      fill(b.w_v, d, d, d);
      fill(b.w_o, d, d, d);
      fill(b.ff_w1, d, cfg.d_ff, d);
      fill(b.ff_b1, 1, cfg.d_ff, d);
      fill(b.ff_w2, cfg.d_ff, d, cfg.d_ff);
      fill(b.ff_b2, 1, d, cfg.d_ff);
      b.ln1_gain = Mat<Scalar>::Ones(1, d);
      b.ln1_bias = Mat<Scalar>::Zero(1, d);
      b.ln2_gain = Mat<Scalar>::Ones(1, d);
      b.ln2_bias = Mat<Scalar>::Zero(1, d);
    }

    head.resize(static_cast<std::size_t>(cfg.n_fc_layers));
    for (std::int32_t l = 0; l < cfg.n_fc_layers; ++l) {
      const std::int32_t in = (l == 0) ? d : cfg.fc_hidden;
      const std::int32_t out = (l == cfg.n_fc_layers - 1) ? 2 : cfg.fc_hidden;
      fill(head[static_cast<std::size_t>(l)].w, in, out, in);
      fill(head[static_cast<std::size_t>(l)].b, 1, out, in);
    }
  }
};

// Visits every learnable tensor in a fixed canonical order (the checkpoint
// and optimizer orders). The positional encoding is constant, not a
// parameter.
template <typename Scalar, typename Fn>
void for_each_parameter(TransformerModel<Scalar>& m, Fn&& fn) {
  fn(std::string("embedding"), m.embedding);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& b = m.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    fn(p + "w_q", b.w_q);
    fn(p + "w_k", b.w_k);
    fn(p + "w_v", b.w_v);
    fn(p + "w_o", b.w_o);
    fn(p + "ff_w1", b.ff_w1);
    fn(p + "ff_b1", b.ff_b1);
    fn(p + "ff_w2", b.ff_w2);
    fn(p + "ff_b2", b.ff_b2);
    fn(p + "ln1_gain", b.ln1_gain);
    fn(p + "ln1_bias", b.ln1_bias);
    fn(p + "ln2_gain", b.ln2_gain);
    fn(p + "ln2_bias", b.ln2_bias);
  }
  for (std::size_t l = 0; l < m.head.size(); ++l) {
    const std::string p = "head" + std::to_string(l) + ".";
    fn(p + "w", m.head[l].w);
    fn(p + "b", m.head[l].b);
  }
}

template <typename Scalar, typename Fn>
void for_each_parameter(const TransformerModel<Scalar>& m, Fn&& fn) {
  for_each_parameter(const_cast<TransformerModel<Scalar>&>(m),
                     [&fn](const std::string& name, Mat<Scalar>& t) {
                       fn(name, static_cast<const Mat<Scalar>&>(t));
                     });
}

// Inverted dropout; masks are drawn during the forward pass and cached for
// the backward pass. Inactive when rng is null or rate is zero.
struct DropoutCtx {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

template <typename Scalar>
Mat<Scalar> draw_dropout_mask(std::int64_t rows, std::int64_t cols, const DropoutCtx& ctx) {
  Mat<Scalar> mask(rows, cols);
  const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - ctx.rate));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      mask(r, c) = ctx.rng->uniform() < ctx.rate ? Scalar(0) : keep_scale;
    }
  }
  return mask;
}

// Embedding lookup plus positional encoding. PAD positions are embedded like
// any other token; masking is attention's job.
template <typename Scalar>
Mat<Scalar> embed(const std::vector<std::int32_t>& ids, const TransformerModel<Scalar>& model) {
  const auto len = static_cast<std::int64_t>(ids.size());
  if (len < 1) throw ShapeMismatch("embed: empty sequence");
  if (len > model.cfg.max_len) {
    throw ShapeMismatch("embed: sequence length " + std::to_string(len) + " exceeds max_len " +
                        std::to_string(model.cfg.max_len));
  }
  Mat<Scalar> e(len, model.cfg.d_model);
  for (std::int64_t t = 0; t < len; ++t) {
    const auto id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= model.cfg.vocab_size) {
      throw IdOutOfRange("embed: id " + std::to_string(id) + " outside [0, " +
                         std::to_string(model.cfg.vocab_size) + ")");
    }
    e.row(t) = model.embedding.row(id) + model.pe.row(t);
  }
  return e;
}

template <typename Scalar>
void softmax_rows_inplace(Mat<Scalar>& m) {
  for (std::int64_t r = 0; r < m.rows(); ++r) {
    const Scalar max = m.row(r).maxCoeff();
    Scalar sum = 0;
    for (std::int64_t c = 0; c < m.cols(); ++c) {
      const Scalar e = std::exp(m(r, c) - max);
      m(r, c) = e;
      sum += e;
    }
    m.row(r) /= sum;
  }
}

template <typename Scalar>
struct AttentionResult {
  Mat<Scalar> output;
  Mat<Scalar> probs;  // row-stochastic attention weights
};

// softmax(Q K^T / sqrt(d_k) + mask_bias) V. key_mask is 1 for attendable
// positions; masked keys get a large negative additive bias whose softmax
// weight underflows to zero.
template <typename Scalar>
AttentionResult<Scalar> attention(const Mat<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v,
                                  const std::vector<std::uint8_t>& key_mask) {
  if (q.rows() != k.rows() || k.rows() != v.rows()) {
    throw ShapeMismatch("attention: Q/K/V row counts differ");
  }
  if (q.cols() != k.cols()) throw ShapeMismatch("attention: Q and K widths differ");
  if (static_cast<std::int64_t>(key_mask.size()) != k.rows()) {
    throw ShapeMismatch("attention: mask length does not match key count");
  }
  const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(q.cols())));
  Mat<Scalar> scores = q * k.transpose() * scale;
  for (std::size_t j = 0; j < key_mask.size(); ++j) {
    if (!key_mask[j]) {
      scores.col(static_cast<std::int64_t>(j)).array() += static_cast<Scalar>(kAttentionMaskBias);
    }
  }
  softmax_rows_inplace(scores);
  Mat<Scalar> output = scores * v;
  return {std::move(output), std::move(scores)};
}

template <typename Scalar>
struct MhaCache {
  Mat<Scalar> q, k, v;               // L x d_model, all heads side by side
  std::vector<Mat<Scalar>> probs;    // per head, L x L
  Mat<Scalar> concat;                // L x d_model, before the output projection
};

// Q = E W_Q, K = E W_K, V = E W_V; columns split into n_heads groups,
// attention per head, heads concatenated and projected by W_O.
template <typename Scalar>
Mat<Scalar> multi_head_attention(const Mat<Scalar>& e, const EncoderBlockWeights<Scalar>& w,
                                 std::int32_t n_heads, const std::vector<std::uint8_t>& mask,
                                 MhaCache<Scalar>* cache = nullptr) {
  const auto d = e.cols();
  if (w.w_q.rows() != d || w.w_q.cols() != d) throw ShapeMismatch("mha: W_Q shape");
  if (n_heads < 1 || d % n_heads != 0) throw ShapeMismatch("mha: head split does not divide d_model");
  Mat<Scalar> q = e * w.w_q;
  Mat<Scalar> k = e * w.w_k;
  Mat<Scalar> v = e * w.w_v;
  const auto dk = d / n_heads;
  Mat<Scalar> concat(e.rows(), d);
  std::vector<Mat<Scalar>> probs;
  probs.reserve(static_cast<std::size_t>(n_heads));
  for (std::int32_t h = 0; h < n_heads; ++h) {
    auto res = attention<Scalar>(q.middleCols(h * dk, dk), k.middleCols(h * dk, dk),
                                 v.middleCols(h * dk, dk), mask);
    concat.middleCols(h * dk, dk) = res.output;
    probs.push_back(std::move(res.probs));
  }
  Mat<Scalar> out = concat * w.w_o;
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return out;
}

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> xhat;            // normalized pre-gain activations
  std::vector<Scalar> inv_std; // per row
};

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& gain, const Mat<Scalar>& bias,
                       LayerNormCache<Scalar>* cache = nullptr) {
  const auto d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeMismatch("layer_norm: gain/bias must be 1 x width");
  }
  Mat<Scalar> out(x.rows(), d);
  Mat<Scalar> xhat(x.rows(), d);
  std::vector<Scalar> inv_std(static_cast<std::size_t>(x.rows()));
  const auto inv_d = static_cast<Scalar>(1.0 / static_cast<double>(d));
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() * inv_d;
    Scalar var = 0;
    for (std::int64_t c = 0; c < d; ++c) {
      const Scalar diff = x(r, c) - mean;
      var += diff * diff;
    }
    var *= inv_d;
    const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    inv_std[static_cast<std::size_t>(r)] = inv;
    for (std::int64_t c = 0; c < d; ++c) {
      xhat(r, c) = (x(r, c) - mean) * inv;
      out(r, c) = xhat(r, c) * gain(0, c) + bias(0, c);
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> input;
  MhaCache<Scalar> mha;
  Mat<Scalar> attn_dropout;  // scaled keep mask; empty when dropout inactive
  Mat<Scalar> r1;
  LayerNormCache<Scalar> ln1;
  Mat<Scalar> a;       // LN1 output, FFN input
  Mat<Scalar> ff_pre;  // A W1 + b1
  Mat<Scalar> ff_act;  // relu(ff_pre)
  Mat<Scalar> ffn_dropout;
  Mat<Scalar> r2;
  LayerNormCache<Scalar> ln2;
};

// Post-norm residual wiring:
//   A   = LayerNorm(E + MHA(E))
//   out = LayerNorm(A + FFN(A)),  FFN = relu(A W1 + b1) W2 + b2
template <typename Scalar>
Mat<Scalar> encoder_block(const Mat<Scalar>& e, const EncoderBlockWeights<Scalar>& w,
                          std::int32_t n_heads, const std::vector<std::uint8_t>& mask,
                          BlockCache<Scalar>* cache = nullptr, const DropoutCtx& dropout = {}) {
  Mat<Scalar> attn = multi_head_attention(e, w, n_heads, mask, cache ? &cache->mha : nullptr);
  Mat<Scalar> attn_drop_mask;
  if (dropout.active()) {
    attn_drop_mask = draw_dropout_mask<Scalar>(attn.rows(), attn.cols(), dropout);
    attn = attn.cwiseProduct(attn_drop_mask);
  }
  Mat<Scalar> r1 = e + attn;
  Mat<Scalar> a = layer_norm(r1, w.ln1_gain, w.ln1_bias, cache ? &cache->ln1 : nullptr);

  Mat<Scalar> ff_pre = a * w.ff_w1;
  ff_pre.rowwise() += w.ff_b1.row(0);
  Mat<Scalar> ff_act = ff_pre.cwiseMax(Scalar(0));
  Mat<Scalar> ffn = ff_act * w.ff_w2;
  ffn.rowwise() += w.ff_b2.row(0);
  Mat<Scalar> ffn_drop_mask;
  if (dropout.active()) {
    ffn_drop_mask = draw_dropout_mask<Scalar>(ffn.rows(), ffn.cols(), dropout);
    ffn = ffn.cwiseProduct(ffn_drop_mask);
  }
  Mat<Scalar> r2 = a + ffn;
  Mat<Scalar> out = layer_norm(r2, w.ln2_gain, w.ln2_bias, cache ? &cache->ln2 : nullptr);

  if (cache) {
    cache->input = e;
    cache->attn_dropout = std::move(attn_drop_mask);
    cache->r1 = std::move(r1);
    cache->a = std::move(a);
    cache->ff_pre = std::move(ff_pre);
    cache->ff_act = std::move(ff_act);
    cache->ffn_dropout = std::move(ffn_drop_mask);
    cache->r2 = std::move(r2);
  }
  return out;
}

template <typename Scalar>
std::pair<Scalar, Scalar> softmax2(Scalar l0, Scalar l1) {
  const Scalar m = std::max(l0, l1);
  const Scalar e0 = std::exp(l0 - m);
  const Scalar e1 = std::exp(l1 - m);
  const Scalar z = e0 + e1;
  return {e0 / z, e1 / z};
}

template <typename Scalar>
struct HeadCache {
  std::vector<Mat<Scalar>> inputs;  // activation entering each FC layer, 1 x in
  std::vector<Mat<Scalar>> pre;     // pre-activation output of each layer, 1 x out
};

template <typename Scalar>
struct ClassifyResult {
  Mat<Scalar> logits;  // 1 x 2
  Scalar prob;         // p(Y = 1 | X)
};

// Pools the CLS position (row 0) and runs the FC stack, relu between layers
// and none after the last.
template <typename Scalar>
ClassifyResult<Scalar> classify(const Mat<Scalar>& h, const std::vector<FcLayer<Scalar>>& head,
                                HeadCache<Scalar>* cache = nullptr) {
  if (h.rows() < 1) throw ShapeMismatch("classify: empty hidden state");
  if (head.empty()) throw ShapeMismatch("classify: empty head");
  Mat<Scalar> z = h.row(0);
  for (std::size_t l = 0; l < head.size(); ++l) {
    if (z.cols() != head[l].w.rows()) {
      throw ShapeMismatch("classify: layer " + std::to_string(l) + " expects width " +
                          std::to_string(head[l].w.rows()) + ", got " + std::to_string(z.cols()));
    }
    if (cache) cache->inputs.push_back(z);
    Mat<Scalar> pre = z * head[l].w + head[l].b;
    if (cache) cache->pre.push_back(pre);
    z = (l + 1 < head.size()) ? pre.cwiseMax(Scalar(0)).eval() : std::move(pre);
  }
  if (z.cols() != 2) throw ShapeMismatch("classify: final layer must produce 2 logits");
  const auto probs = softmax2(z(0, 0), z(0, 1));
  return {std::move(z), probs.second};
}

template <typename Scalar>
struct ForwardTrace {
  Mat<Scalar> embedded;
  std::vector<BlockCache<Scalar>> blocks;
  Mat<Scalar> encoder_out;
  HeadCache<Scalar> head;
  Mat<Scalar> logits;
};

template <typename Scalar>
struct ForwardResult {
  Mat<Scalar> logits;  // 1 x 2
  Scalar prob;
};

// embed -> n_layers encoder blocks -> classify. Deterministic whenever
// dropout is inactive.
template <typename Scalar>
ForwardResult<Scalar> forward(const std::vector<std::int32_t>& ids,
                              const std::vector<std::uint8_t>& mask,
                              const TransformerModel<Scalar>& model,
                              ForwardTrace<Scalar>* trace = nullptr,
                              const DropoutCtx& dropout = {}) {
  if (ids.size() != mask.size()) throw ShapeMismatch("forward: ids/mask length mismatch");
  Mat<Scalar> e = embed(ids, model);
  if (trace) {
    trace->embedded = e;
    trace->blocks.clear();
    trace->blocks.resize(model.blocks.size());
  }
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    e = encoder_block(e, model.blocks[l], model.cfg.n_heads, mask,
                      trace ? &trace->blocks[l] : nullptr, dropout);
  }
  if (trace) trace->encoder_out = e;
  auto cls = classify(e, model.head, trace ? &trace->head : nullptr);
  if (trace) trace->logits = cls.logits;
  return {std::move(cls.logits), cls.prob};
}

}  // namespace vulnir
