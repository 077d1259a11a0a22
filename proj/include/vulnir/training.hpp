#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vulnir/errors.hpp"
#include "vulnir/ir_program.hpp"
#include "vulnir/model.hpp"
#include "vulnir/rng.hpp"
#include "vulnir/tokenizer.hpp"
#include "vulnir/vocabulary.hpp"

namespace vulnir {

struct TrainConfig {
  double learning_rate = 0.05;
  std::int32_t batch_size = 8;
  std::int32_t epochs = 10;
  std::uint64_t seed = 42;
  std::int32_t per_class_samples = 512;
  Precision precision = Precision::Single;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (per_class_samples < 1) throw ConfigError("train: per_class_samples must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"learning_rate", cfg.learning_rate},
                     {"batch_size", cfg.batch_size},
                     {"epochs", cfg.epochs},
                     {"seed", cfg.seed},
                     {"per_class_samples", cfg.per_class_samples},
                     {"precision", precision_name(cfg.precision)}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  cfg = TrainConfig{};
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::int32_t>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::int32_t>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("per_class_samples")) {
    cfg.per_class_samples = j.at("per_class_samples").get<std::int32_t>();
  }
  if (j.contains("precision")) {
    cfg.precision = precision_from_name(j.at("precision").get<std::string>());
  }
}

// loss = -log softmax(logits)[label], via log-sum-exp
template <typename Scalar>
Scalar cross_entropy(const Mat<Scalar>& logits, std::int32_t label) {
  if (logits.rows() != 1 || logits.cols() != 2) {
    throw ShapeMismatch("cross_entropy: logits must be 1 x 2");
  }
  if (label != 0 && label != 1) {
    throw InvariantViolation("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
  }
  const Scalar m = std::max(logits(0, 0), logits(0, 1));
  const Scalar lse = m + std::log(std::exp(logits(0, 0) - m) + std::exp(logits(0, 1) - m));
  return lse - logits(0, label);
}

// A program after encoding and padding, ready for the model.
struct EncodedExample {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::int32_t label = 0;
};

// Sequences keep their natural length (attention masking makes PAD tails
// inert, so padding short sequences would only add work); overlong ones are
// truncated through pad_or_truncate.
inline EncodedExample encode_example(const IrProgram& program, const Vocabulary& vocab,
                                     std::int32_t max_len) {
  auto seq = encode(program, vocab);
  if (seq.length() <= max_len) {
    EncodedExample ex;
    ex.ids = std::move(seq.ids);
    ex.mask.assign(ex.ids.size(), 1);
    ex.label = program.label;
    return ex;
  }
  auto padded = pad_or_truncate(seq, max_len);
  return {std::move(padded.first), std::move(padded.second), program.label};
}

inline std::vector<EncodedExample> encode_dataset(const std::vector<IrProgram>& programs,
                                                  const Vocabulary& vocab, std::int32_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(programs.size());
  for (const auto& p : programs) out.push_back(encode_example(p, vocab, max_len));
  return out;
}

// Gradient storage mirrors the model tensor for tensor; the weight structs
// double as gradient containers. Embedding gradients are dense with
// untouched rows exactly zero.
template <typename Scalar>
struct Gradients {
  Mat<Scalar> embedding;
  std::vector<EncoderBlockWeights<Scalar>> blocks;
  std::vector<FcLayer<Scalar>> head;
};

template <typename Scalar>
Gradients<Scalar> zero_gradients(const TransformerModel<Scalar>& model) {
  Gradients<Scalar> g;
  g.embedding = Mat<Scalar>::Zero(model.embedding.rows(), model.embedding.cols());
  g.blocks.resize(model.blocks.size());
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& b = model.blocks[l];
    auto& gb = g.blocks[l];
    auto zero_like = [](const Mat<Scalar>& t) { return Mat<Scalar>::Zero(t.rows(), t.cols()).eval(); };
    gb.w_q = zero_like(b.w_q);
    gb.w_k = zero_like(b.w_k);
    gb.w_v = zero_like(b.w_v);
    gb.w_o = zero_like(b.w_o);
    gb.ff_w1 = zero_like(b.ff_w1);
    gb.ff_b1 = zero_like(b.ff_b1);
    gb.ff_w2 = zero_like(b.ff_w2);
    gb.ff_b2 = zero_like(b.ff_b2);
    gb.ln1_gain = zero_like(b.ln1_gain);
    gb.ln1_bias = zero_like(b.ln1_bias);
    gb.ln2_gain = zero_like(b.ln2_gain);
    gb.ln2_bias = zero_like(b.ln2_bias);
  }
  g.head.resize(model.head.size());
  for (std::size_t l = 0; l < model.head.size(); ++l) {
    g.head[l].w = Mat<Scalar>::Zero(model.head[l].w.rows(), model.head[l].w.cols());
    g.head[l].b = Mat<Scalar>::Zero(model.head[l].b.rows(), model.head[l].b.cols());
  }
  return g;
}

// Same visitation order and names as for_each_parameter on the model.
template <typename Scalar, typename Fn>
void for_each_gradient(Gradients<Scalar>& g, Fn&& fn) {
  fn(std::string("embedding"), g.embedding);
  for (std::size_t l = 0; l < g.blocks.size(); ++l) {
    auto& b = g.blocks[l];
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
  for (std::size_t l = 0; l < g.head.size(); ++l) {
    const std::string p = "head" + std::to_string(l) + ".";
    fn(p + "w", g.head[l].w);
    fn(p + "b", g.head[l].b);
  }
}

namespace detail {

// dL/dx for y = LayerNorm(x), given dL/dy. Accumulates gain/bias gradients.
template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                const Mat<Scalar>& gain, Mat<Scalar>& dgain, Mat<Scalar>& dbias) {
  const auto rows = dy.rows();
  const auto d = dy.cols();
  dgain.row(0) += dy.cwiseProduct(cache.xhat).colwise().sum();
  dbias.row(0) += dy.colwise().sum();
  Mat<Scalar> dx(rows, d);
  const auto inv_d = static_cast<Scalar>(1.0 / static_cast<double>(d));
  for (std::int64_t r = 0; r < rows; ++r) {
    Scalar m1 = 0;  // mean of dxhat
    Scalar m2 = 0;  // mean of dxhat .* xhat
    for (std::int64_t c = 0; c < d; ++c) {
      const Scalar dxhat = dy(r, c) * gain(0, c);
      m1 += dxhat;
      m2 += dxhat * cache.xhat(r, c);
    }
    m1 *= inv_d;
    m2 *= inv_d;
    const Scalar inv = cache.inv_std[static_cast<std::size_t>(r)];
    for (std::int64_t c = 0; c < d; ++c) {
      const Scalar dxhat = dy(r, c) * gain(0, c);
      dx(r, c) = inv * (dxhat - m1 - cache.xhat(r, c) * m2);
    }
  }
  return dx;
}

// dL/dscores for p = softmax_rows(scores): dS = P .* (dP - rowsum(dP .* P))
template <typename Scalar>
Mat<Scalar> softmax_rows_backward(const Mat<Scalar>& dp, const Mat<Scalar>& p) {
  Mat<Scalar> ds(p.rows(), p.cols());
  for (std::int64_t r = 0; r < p.rows(); ++r) {
    const Scalar dot = dp.row(r).cwiseProduct(p.row(r)).sum();
    ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
  }
  return ds;
}

// Backprop through one example's trace, accumulating parameter gradients
// scaled by `weight` (1/batch for a mean-loss batch).
template <typename Scalar>
void accumulate_example_gradients(const TransformerModel<Scalar>& model,
                                  const EncodedExample& ex, const ForwardTrace<Scalar>& trace,
                                  bool dropout_used, Scalar weight, Gradients<Scalar>& g) {
  const auto& cfg = model.cfg;
  const auto n_heads = cfg.n_heads;
  const auto d = static_cast<std::int64_t>(cfg.d_model);
  const auto len = static_cast<std::int64_t>(ex.ids.size());

  // d(mean CE)/dlogits = weight * (softmax(logits) - onehot(label))
  const auto probs = softmax2(trace.logits(0, 0), trace.logits(0, 1));
  Mat<Scalar> dz(1, 2);
  dz(0, 0) = weight * (probs.first - (ex.label == 0 ? Scalar(1) : Scalar(0)));
  dz(0, 1) = weight * (probs.second - (ex.label == 1 ? Scalar(1) : Scalar(0)));

  // classifier head, last layer has no relu
  for (std::size_t l = model.head.size(); l-- > 0;) {
    Mat<Scalar> dpre;
    if (l + 1 == model.head.size()) {
      dpre = dz;
    } else {
      dpre = dz;
      const auto& pre = trace.head.pre[l];
      for (std::int64_t c = 0; c < dpre.cols(); ++c) {
        if (pre(0, c) <= Scalar(0)) dpre(0, c) = Scalar(0);
      }
    }
    g.head[l].w += trace.head.inputs[l].transpose() * dpre;
    g.head[l].b += dpre;
    dz = dpre * model.head[l].w.transpose();
  }

  // only the CLS row feeds the head
  Mat<Scalar> dh = Mat<Scalar>::Zero(len, d);
  dh.row(0) = dz;

  for (std::size_t l = model.blocks.size(); l-- > 0;) {
    const auto& w = model.blocks[l];
    const auto& cb = trace.blocks[l];
    auto& gb = g.blocks[l];

    // out = LN2(r2), r2 = a + ffn_out
    Mat<Scalar> dr2 = layer_norm_backward(dh, cb.ln2, w.ln2_gain, gb.ln2_gain, gb.ln2_bias);
    Mat<Scalar> dffn = dr2;
    if (dropout_used) dffn = dffn.cwiseProduct(cb.ffn_dropout);

    // ffn_out = relu(a W1 + b1) W2 + b2
    gb.ff_w2 += cb.ff_act.transpose() * dffn;
    gb.ff_b2.row(0) += dffn.colwise().sum();
    Mat<Scalar> dact = dffn * w.ff_w2.transpose();
    Mat<Scalar> dpre = dact;
    for (std::int64_t r = 0; r < dpre.rows(); ++r) {
      for (std::int64_t c = 0; c < dpre.cols(); ++c) {
        if (cb.ff_pre(r, c) <= Scalar(0)) dpre(r, c) = Scalar(0);
      }
    }
    gb.ff_w1 += cb.a.transpose() * dpre;
    gb.ff_b1.row(0) += dpre.colwise().sum();
    Mat<Scalar> da = dr2 + dpre * w.ff_w1.transpose();

    // a = LN1(r1), r1 = input + attn_out
    Mat<Scalar> dr1 = layer_norm_backward(da, cb.ln1, w.ln1_gain, gb.ln1_gain, gb.ln1_bias);
    Mat<Scalar> dattn = dr1;
    if (dropout_used) dattn = dattn.cwiseProduct(cb.attn_dropout);

    // attn_out = concat(heads) W_O
    gb.w_o += cb.mha.concat.transpose() * dattn;
    Mat<Scalar> dconcat = dattn * w.w_o.transpose();

    const auto dk = d / n_heads;
    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dk)));
    Mat<Scalar> dq(len, d), dkm(len, d), dv(len, d);
    for (std::int32_t h = 0; h < n_heads; ++h) {
      const auto off = h * dk;
      const Mat<Scalar>& p = cb.mha.probs[static_cast<std::size_t>(h)];
      const Mat<Scalar> dout = dconcat.middleCols(off, dk);
      const Mat<Scalar> vh = cb.mha.v.middleCols(off, dk);
      dv.middleCols(off, dk) = p.transpose() * dout;
      Mat<Scalar> dp = dout * vh.transpose();
      Mat<Scalar> ds = softmax_rows_backward(dp, p);
      dq.middleCols(off, dk) = ds * cb.mha.k.middleCols(off, dk) * scale;
      dkm.middleCols(off, dk) = ds.transpose() * cb.mha.q.middleCols(off, dk) * scale;
    }

    // Q = E W_Q etc., E = block input
    gb.w_q += cb.input.transpose() * dq;
    gb.w_k += cb.input.transpose() * dkm;
    gb.w_v += cb.input.transpose() * dv;
    dh = dr1 + dq * w.w_q.transpose() + dkm * w.w_k.transpose() + dv * w.w_v.transpose();
  }

  // embedding scatter-add; the positional encoding is constant
  for (std::int64_t t = 0; t < len; ++t) {
    g.embedding.row(ex.ids[static_cast<std::size_t>(t)]) += dh.row(t);
  }
}

template <typename Scalar>
bool gradients_finite(Gradients<Scalar>& g) {
  bool ok = true;
  for_each_gradient(g, [&ok](const std::string&, const Mat<Scalar>& t) {
    if (!t.allFinite()) ok = false;
  });
  return ok;
}

}  // namespace detail

template <typename Scalar>
struct BatchResult {
  Gradients<Scalar> grads;
  Scalar mean_loss = 0;
  std::vector<Scalar> probs;  // p(Y=1) per example
};

// Exact analytic gradient of mean batch cross-entropy. With dropout_rate > 0
// each example draws its masks from its own seeded generator so the batch is
// reproducible.
template <typename Scalar>
BatchResult<Scalar> backward(const TransformerModel<Scalar>& model,
                             const std::vector<EncodedExample>& batch, double dropout_rate = 0.0,
                             const std::vector<std::uint64_t>* dropout_seeds = nullptr) {
  if (batch.empty()) throw ShapeMismatch("backward: empty batch");
  if (dropout_seeds && dropout_seeds->size() != batch.size()) {
    throw ShapeMismatch("backward: dropout seed count does not match batch size");
  }
  const bool use_dropout = dropout_rate > 0.0 && dropout_seeds != nullptr;

  BatchResult<Scalar> result;
  result.grads = zero_gradients(model);
  result.probs.reserve(batch.size());
  const auto weight = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));

  Scalar loss_sum = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    ForwardTrace<Scalar> trace;
    Rng dropout_rng(use_dropout ? (*dropout_seeds)[i] : 0);
    DropoutCtx ctx;
    if (use_dropout) {
      ctx.rate = dropout_rate;
      ctx.rng = &dropout_rng;
    }
    const auto fwd = forward(ex.ids, ex.mask, model, &trace, ctx);
    loss_sum += cross_entropy(fwd.logits, ex.label);
    result.probs.push_back(fwd.prob);
    detail::accumulate_example_gradients(model, ex, trace, use_dropout, weight, result.grads);
  }
  result.mean_loss = loss_sum * weight;

  if (!std::isfinite(static_cast<double>(result.mean_loss)) ||
      !detail::gradients_finite(result.grads)) {
    throw NonFiniteGradient("backward: non-finite loss or gradient");
  }
  return result;
}

// p <- p - lr * grad for every tensor, plain SGD
template <typename Scalar>
void sgd_step(TransformerModel<Scalar>& model, const Gradients<Scalar>& grads,
              double learning_rate) {
  if (grads.blocks.size() != model.blocks.size() || grads.head.size() != model.head.size()) {
    throw ShapeMismatch("sgd_step: gradient structure does not match model");
  }
  const auto lr = static_cast<Scalar>(learning_rate);
  auto step = [lr](Mat<Scalar>& p, const Mat<Scalar>& g) {
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeMismatch("sgd_step: tensor shape mismatch");
    }
    p -= lr * g;
  };
  step(model.embedding, grads.embedding);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    auto& b = model.blocks[l];
    const auto& gb = grads.blocks[l];
    step(b.w_q, gb.w_q);
    step(b.w_k, gb.w_k);
    step(b.w_v, gb.w_v);
    step(b.w_o, gb.w_o);
    step(b.ff_w1, gb.ff_w1);
    step(b.ff_b1, gb.ff_b1);
    step(b.ff_w2, gb.ff_w2);
    step(b.ff_b2, gb.ff_b2);
    step(b.ln1_gain, gb.ln1_gain);
    step(b.ln1_bias, gb.ln1_bias);
    step(b.ln2_gain, gb.ln2_gain);
    step(b.ln2_bias, gb.ln2_bias);
  }
  for (std::size_t l = 0; l < model.head.size(); ++l) {
    step(model.head[l].w, grads.head[l].w);
    step(model.head[l].b, grads.head[l].b);
  }
}

// Equal-count subset, uniform without replacement. When a class has fewer
// than per_class_samples members, both classes clamp to the minority count.
inline std::vector<std::size_t> balanced_sample_indices(const std::vector<IrProgram>& dataset,
                                                        std::int32_t per_class_samples,
                                                        std::uint64_t seed) {
  if (per_class_samples < 1) throw ConfigError("balanced_sample: per_class_samples must be >= 1");
  std::vector<std::size_t> benign, vulnerable;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (dataset[i].label == 1 ? vulnerable : benign).push_back(i);
  }
  if (benign.empty()) throw EmptyClass("balanced_sample: no benign programs");
  if (vulnerable.empty()) throw EmptyClass("balanced_sample: no vulnerable programs");
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(per_class_samples),
                                       std::min(benign.size(), vulnerable.size()));
  Rng benign_rng(derive_seed(seed, 0));
  Rng vuln_rng(derive_seed(seed, 1));
  benign_rng.shuffle(benign);
  vuln_rng.shuffle(vulnerable);
  std::vector<std::size_t> out;
  out.reserve(2 * k);
  out.insert(out.end(), benign.begin(), benign.begin() + static_cast<std::ptrdiff_t>(k));
  out.insert(out.end(), vulnerable.begin(), vulnerable.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

inline std::vector<IrProgram> balanced_sample(const std::vector<IrProgram>& dataset,
                                              std::int32_t per_class_samples, std::uint64_t seed) {
  std::vector<IrProgram> out;
  for (const auto idx : balanced_sample_indices(dataset, per_class_samples, seed)) {
    out.push_back(dataset[idx]);
  }
  return out;
}

struct TrainReport {
  std::vector<double> epoch_losses;
  double final_train_accuracy = 0.0;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  TrainConfig train_config;
  ModelConfig model_config;
};

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"epoch_losses", r.epoch_losses},
                     {"final_train_accuracy", r.final_train_accuracy},
                     {"wall_time_s", r.wall_time_s},
                     {"seed", r.seed},
                     {"train_config", r.train_config},
                     {"model_config", r.model_config}};
}

// One training run: balanced subset drawn once, then epochs of shuffled
// mini-batch SGD. Fully determined by (seed, config, data, precision).
template <typename Scalar>
TrainReport train(TransformerModel<Scalar>& model, const std::vector<IrProgram>& dataset,
                  const TrainConfig& cfg, const Vocabulary& vocab) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const auto subset_idx =
      balanced_sample_indices(dataset, cfg.per_class_samples, derive_seed(cfg.seed, 0));
  std::vector<EncodedExample> examples;
  examples.reserve(subset_idx.size());
  for (const auto idx : subset_idx) {
    examples.push_back(encode_example(dataset[idx], vocab, model.cfg.max_len));
  }

  const bool use_dropout = model.cfg.dropout_rate > 0.0;
  Rng order_rng(derive_seed(cfg.seed, 1));
  Rng dropout_seed_rng(derive_seed(cfg.seed, 2));

  TrainReport report;
  report.seed = cfg.seed;
  report.train_config = cfg;
  report.model_config = model.cfg;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<EncodedExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(examples[order[i]]);
      std::vector<std::uint64_t> dropout_seeds;
      if (use_dropout) {
        dropout_seeds.resize(batch.size());
        for (auto& s : dropout_seeds) s = dropout_seed_rng.next_u64();
      }
      try {
        const auto res = backward(model, batch, model.cfg.dropout_rate,
                                  use_dropout ? &dropout_seeds : nullptr);
        sgd_step(model, res.grads, cfg.learning_rate);
        loss_sum += static_cast<double>(res.mean_loss) * static_cast<double>(batch.size());
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient("epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(start / static_cast<std::size_t>(cfg.batch_size)) +
                                ": " + e.what());
      }
    }
    report.epoch_losses.push_back(examples.empty() ? 0.0
                                                   : loss_sum / static_cast<double>(examples.size()));
  }

  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const auto fwd = forward(ex.ids, ex.mask, model);
    const std::int32_t predicted = fwd.prob >= Scalar(0.5) ? 1 : 0;
    if (predicted == ex.label) ++correct;
  }
  report.final_train_accuracy =
      examples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(examples.size());

  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Max relative error between analytic gradients and central finite
// differences over every parameter. The 1e-3 denominator floor keeps
// finite-difference round-off on near-zero entries from registering as
// error.
inline double grad_check(TransformerModel<double>& model,
                         const std::vector<EncodedExample>& batch, double epsilon = 1e-5) {
  auto analytic = backward(model, batch);

  std::map<std::string, const Mat<double>*> grad_by_name;
  for_each_gradient(analytic.grads, [&grad_by_name](const std::string& name, Mat<double>& t) {
    grad_by_name[name] = &t;
  });

  auto batch_loss = [&model, &batch]() {
    double sum = 0.0;
    for (const auto& ex : batch) {
      const auto fwd = forward(ex.ids, ex.mask, model);
      sum += cross_entropy(fwd.logits, ex.label);
    }
    return sum / static_cast<double>(batch.size());
  };

  double max_rel_err = 0.0;
  for_each_parameter(model, [&](const std::string& name, Mat<double>& param) {
    const auto* grad = grad_by_name.at(name);
    for (std::int64_t r = 0; r < param.rows(); ++r) {
      for (std::int64_t c = 0; c < param.cols(); ++c) {
        const double saved = param(r, c);
        param(r, c) = saved + epsilon;
        const double loss_plus = batch_loss();
        param(r, c) = saved - epsilon;
        const double loss_minus = batch_loss();
        param(r, c) = saved;
        const double fd = (loss_plus - loss_minus) / (2.0 * epsilon);
        const double an = (*grad)(r, c);
        const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
        max_rel_err = std::max(max_rel_err, std::abs(an - fd) / denom);
      }
    }
  });
  return max_rel_err;
}

}  // namespace vulnir
