#pragma once

// Minimal transformer forward passes used to score candidate checkpoints on
// few-shot examples. Architecture (fixed, so checkpoints are well defined):
//
//   x[p] = tok_emb[id_p] + pos_emb[p]
//   per block:  x += attn(ln1(x)) ; x += mlp(ln2(x))
//     attn: multi-head scaled dot product, causal for decoders
//     mlp:  w2 * gelu(w1 * h + b1) + b2, exact (erf) gelu
//   y = ln_f(x)
//   decoder: logits[p] = y[p] @ head.w + head.b (untied head)
//   encoder: embedding = l2_normalize(mean_p y[p])
//
// All matrices are stored row-major [in, out] and applied as y = x @ W.
// Layer norm uses eps = 1e-5. Math runs in double, so losses are exactly
// reproducible whatever dtype the checkpoint stores.
//
// Tensor names (the contract between checkpoint fixtures and this file):
//   tok_emb, pos_emb, blocks.{i}.ln1.{g,b}, blocks.{i}.attn.{wq,wk,wv,wo},
//   blocks.{i}.ln2.{g,b}, blocks.{i}.mlp.{w1,b1,w2,b2}, ln_f.{g,b},
//   and for decoders head.w, head.b.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cocktail/errors.hpp"
#include "cocktail/few_shot.hpp"
#include "cocktail/loss_report.hpp"
#include "cocktail/tensor_map.hpp"

namespace cocktail {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kContrastiveTemperature = 0.02;

struct ToyArchConfig {
  std::int64_t vocab_size = 0;
  std::int64_t d_model = 0;
  std::int64_t n_layers = 0;
  std::int64_t n_heads = 0;
  std::int64_t d_ff = 0;
  std::int64_t max_seq_len = 0;
  ExampleKind kind = ExampleKind::Decoder;

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 ||
        max_seq_len < 1) {
      throw validation_error("architecture dims must all be >= 1");
    }
    if (d_model % n_heads != 0) {
      throw validation_error("d_model must be divisible by n_heads");
    }
  }

  // (name, shape) of every tensor a checkpoint for this architecture holds
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> expected_tensors() const {
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
    out.push_back({"tok_emb", {vocab_size, d_model}});
    out.push_back({"pos_emb", {max_seq_len, d_model}});
    for (std::int64_t i = 0; i < n_layers; ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      out.push_back({p + "ln1.g", {d_model}});
      out.push_back({p + "ln1.b", {d_model}});
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        out.push_back({p + "attn." + w, {d_model, d_model}});
      }
      out.push_back({p + "ln2.g", {d_model}});
      out.push_back({p + "ln2.b", {d_model}});
      out.push_back({p + "mlp.w1", {d_model, d_ff}});
      out.push_back({p + "mlp.b1", {d_ff}});
      out.push_back({p + "mlp.w2", {d_ff, d_model}});
      out.push_back({p + "mlp.b2", {d_model}});
    }
    out.push_back({"ln_f.g", {d_model}});
    out.push_back({"ln_f.b", {d_model}});
    if (kind == ExampleKind::Decoder) {
      out.push_back({"head.w", {d_model, vocab_size}});
      out.push_back({"head.b", {vocab_size}});
    }
    return out;
  }
};

inline ToyArchConfig load_arch_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open \"" + path.string() + "\"");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path.string() + ": " + e.what());
  }
  ToyArchConfig cfg;
  try {
    cfg.vocab_size = doc.at("vocab_size").get<std::int64_t>();
    cfg.d_model = doc.at("d_model").get<std::int64_t>();
    cfg.n_layers = doc.at("n_layers").get<std::int64_t>();
    cfg.n_heads = doc.at("n_heads").get<std::int64_t>();
    cfg.d_ff = doc.at("d_ff").get<std::int64_t>();
    cfg.max_seq_len = doc.at("max_seq_len").get<std::int64_t>();
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind == "decoder") {
      cfg.kind = ExampleKind::Decoder;
    } else if (kind == "encoder") {
      cfg.kind = ExampleKind::Encoder;
    } else {
      throw validation_error(path.string() + ": kind must be \"decoder\" or \"encoder\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(path.string() + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

struct TokenizedExample {
  ExampleKind kind = ExampleKind::Decoder;
  // decoder form
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  // encoder form
  std::vector<int> query_ids;
  std::vector<std::vector<int>> positive_ids;
  std::vector<std::vector<int>> negative_ids;
};

inline TokenizedExample tokenize_example(const DecoderExample& e) {
  TokenizedExample t;
  t.kind = ExampleKind::Decoder;
  t.input_ids = byte_tokenize(e.input);
  t.target_ids = byte_tokenize(e.target);
  return t;
}

inline TokenizedExample tokenize_example(const EncoderExample& e) {
  TokenizedExample t;
  t.kind = ExampleKind::Encoder;
  t.query_ids = byte_tokenize(e.query);
  for (const std::string& p : e.positives) t.positive_ids.push_back(byte_tokenize(p));
  for (const std::string& n : e.negatives) t.negative_ids.push_back(byte_tokenize(n));
  return t;
}

inline std::vector<TokenizedExample> tokenize_set(const FewShotSet& set) {
  std::vector<TokenizedExample> out;
  if (set.kind == ExampleKind::Decoder) {
    for (const DecoderExample& e : set.decoder_examples) out.push_back(tokenize_example(e));
  } else {
    for (const EncoderExample& e : set.encoder_examples) out.push_back(tokenize_example(e));
  }
  return out;
}

namespace detail {

// Dense row-major matrix of doubles.
struct Mat {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> v;
  double& at(std::int64_t r, std::int64_t c) { return v[r * cols + c]; }
  double at(std::int64_t r, std::int64_t c) const { return v[r * cols + c]; }
};

struct BlockParams {
  std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;
  Mat wq, wk, wv, wo, w1, w2;
  std::vector<double> b1, b2;
};

struct ToyParams {
  ToyArchConfig cfg;
  Mat tok_emb, pos_emb;
  std::vector<BlockParams> blocks;
  std::vector<double> lnf_g, lnf_b;
  Mat head_w;
  std::vector<double> head_b;
};

inline ToyParams load_toy_params(const TensorMap& map, const ToyArchConfig& cfg) {
  cfg.validate();
  const auto expected = cfg.expected_tensors();
  std::string problems;
  for (const auto& [name, shape] : expected) {
    if (!map.contains(name)) {
      problems += "  missing tensor \"" + name + "\"\n";
    } else if (map.meta(name).shape != shape) {
      problems += "  tensor \"" + name + "\" has the wrong shape\n";
    }
  }
  if (map.size() != expected.size()) {
    for (const std::string& name : map.names()) {
      bool known = false;
      for (const auto& [ename, eshape] : expected) {
        if (ename == name) {
          known = true;
          break;
        }
      }
      if (!known) problems += "  unexpected tensor \"" + name + "\"\n";
    }
  }
  if (!problems.empty()) {
    throw validation_error("checkpoint does not match the architecture config:\n" + problems);
  }

  auto mat = [&](const std::string& name, std::int64_t rows, std::int64_t cols) {
    return Mat{rows, cols, map.tensor_values(name)};
  };
  auto vec = [&](const std::string& name) { return map.tensor_values(name); };

  ToyParams p;
  p.cfg = cfg;
  p.tok_emb = mat("tok_emb", cfg.vocab_size, cfg.d_model);
  p.pos_emb = mat("pos_emb", cfg.max_seq_len, cfg.d_model);
  for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    BlockParams b;
    b.ln1_g = vec(pre + "ln1.g");
    b.ln1_b = vec(pre + "ln1.b");
    b.wq = mat(pre + "attn.wq", cfg.d_model, cfg.d_model);
    b.wk = mat(pre + "attn.wk", cfg.d_model, cfg.d_model);
    b.wv = mat(pre + "attn.wv", cfg.d_model, cfg.d_model);
    b.wo = mat(pre + "attn.wo", cfg.d_model, cfg.d_model);
    b.ln2_g = vec(pre + "ln2.g");
    b.ln2_b = vec(pre + "ln2.b");
    b.w1 = mat(pre + "mlp.w1", cfg.d_model, cfg.d_ff);
    b.b1 = vec(pre + "mlp.b1");
    b.w2 = mat(pre + "mlp.w2", cfg.d_ff, cfg.d_model);
    b.b2 = vec(pre + "mlp.b2");
    p.blocks.push_back(std::move(b));
  }
  p.lnf_g = vec("ln_f.g");
  p.lnf_b = vec("ln_f.b");
  if (cfg.kind == ExampleKind::Decoder) {
    p.head_w = mat("head.w", cfg.d_model, cfg.vocab_size);
    p.head_b = vec("head.b");
  }
  return p;
}

inline void layer_norm_row(const double* x, double* out, const std::vector<double>& g,
                           const std::vector<double>& b, std::int64_t d) {
  double mean = 0.0;
  for (std::int64_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (std::int64_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::int64_t i = 0; i < d; ++i) out[i] = g[i] * (x[i] - mean) * rstd + b[i];
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// y[T, out] = x[T, in] @ w[in, out]
inline Mat matmul(const Mat& x, const Mat& w) {
  Mat y{x.rows, w.cols, std::vector<double>(static_cast<std::size_t>(x.rows * w.cols), 0.0)};
  for (std::int64_t t = 0; t < x.rows; ++t) {
    for (std::int64_t i = 0; i < x.cols; ++i) {
      const double xi = x.at(t, i);
      if (xi == 0.0) continue;
      for (std::int64_t j = 0; j < w.cols; ++j) {
        y.at(t, j) += xi * w.at(i, j);
      }
    }
  }
  return y;
}

// Final hidden states for one token sequence.
inline Mat forward_hidden(const ToyParams& p, const std::vector<int>& ids) {
  const ToyArchConfig& cfg = p.cfg;
  const std::int64_t T = static_cast<std::int64_t>(ids.size());
  const std::int64_t d = cfg.d_model;
  if (T == 0) throw validation_error("cannot run the model on an empty sequence");
  if (T > cfg.max_seq_len) {
    throw validation_error("sequence of length " + std::to_string(T) + " exceeds max_seq_len " +
                           std::to_string(cfg.max_seq_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw validation_error("token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
  const bool causal = cfg.kind == ExampleKind::Decoder;
  const std::int64_t heads = cfg.n_heads;
  const std::int64_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat x{T, d, std::vector<double>(static_cast<std::size_t>(T * d))};
  for (std::int64_t t = 0; t < T; ++t) {
    for (std::int64_t i = 0; i < d; ++i) {
      x.at(t, i) = p.tok_emb.at(ids[t], i) + p.pos_emb.at(t, i);
    }
  }

  Mat normed{T, d, std::vector<double>(static_cast<std::size_t>(T * d))};
  for (const BlockParams& blk : p.blocks) {
    // attention
    for (std::int64_t t = 0; t < T; ++t) {
      layer_norm_row(&x.v[t * d], &normed.v[t * d], blk.ln1_g, blk.ln1_b, d);
    }
    const Mat q = matmul(normed, blk.wq);
    const Mat k = matmul(normed, blk.wk);
    const Mat v = matmul(normed, blk.wv);
    Mat ctx{T, d, std::vector<double>(static_cast<std::size_t>(T * d), 0.0)};
    std::vector<double> scores(static_cast<std::size_t>(T));
    for (std::int64_t h = 0; h < heads; ++h) {
      const std::int64_t off = h * dh;
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t span = causal ? t + 1 : T;
        double max_score = -HUGE_VAL;
        for (std::int64_t s = 0; s < span; ++s) {
          double dot = 0.0;
          for (std::int64_t i = 0; i < dh; ++i) dot += q.at(t, off + i) * k.at(s, off + i);
          scores[s] = dot * scale;
          max_score = std::max(max_score, scores[s]);
        }
        double denom = 0.0;
        for (std::int64_t s = 0; s < span; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          denom += scores[s];
        }
        for (std::int64_t s = 0; s < span; ++s) {
          const double a = scores[s] / denom;
          for (std::int64_t i = 0; i < dh; ++i) ctx.at(t, off + i) += a * v.at(s, off + i);
        }
      }
    }
    const Mat attn_out = matmul(ctx, blk.wo);
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn_out.v[i];

    // mlp
    for (std::int64_t t = 0; t < T; ++t) {
      layer_norm_row(&x.v[t * d], &normed.v[t * d], blk.ln2_g, blk.ln2_b, d);
    }
    Mat h1 = matmul(normed, blk.w1);
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t j = 0; j < cfg.d_ff; ++j) {
        h1.at(t, j) = gelu(h1.at(t, j) + blk.b1[j]);
      }
    }
    Mat mlp_out = matmul(h1, blk.w2);
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t j = 0; j < d; ++j) x.at(t, j) += mlp_out.at(t, j) + blk.b2[j];
    }
  }

  Mat y{T, d, std::vector<double>(static_cast<std::size_t>(T * d))};
  for (std::int64_t t = 0; t < T; ++t) {
    layer_norm_row(&x.v[t * d], &y.v[t * d], p.lnf_g, p.lnf_b, d);
  }
  return y;
}

inline double log_softmax_at(const std::vector<double>& logits, std::size_t index) {
  double max_logit = -HUGE_VAL;
  for (double l : logits) max_logit = std::max(max_logit, l);
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - max_logit);
  return logits[index] - max_logit - std::log(denom);
}

inline std::vector<double> pooled_embedding(const ToyParams& p, const std::vector<int>& ids) {
  const Mat y = forward_hidden(p, ids);
  std::vector<double> emb(static_cast<std::size_t>(p.cfg.d_model), 0.0);
  for (std::int64_t t = 0; t < y.rows; ++t) {
    for (std::int64_t i = 0; i < p.cfg.d_model; ++i) emb[i] += y.at(t, i);
  }
  double norm = 0.0;
  for (double& e : emb) {
    e /= static_cast<double>(y.rows);
    norm += e * e;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) throw validation_error("embedding collapsed to the zero vector");
  for (double& e : emb) e /= norm;
  return emb;
}

}  // namespace detail

// Next-token logits for every position of the sequence, [T, vocab].
inline std::vector<std::vector<double>> decoder_logits(const TensorMap& weights,
                                                       const ToyArchConfig& cfg,
                                                       const std::vector<int>& ids) {
  if (cfg.kind != ExampleKind::Decoder) throw validation_error("config is not a decoder");
  const detail::ToyParams p = detail::load_toy_params(weights, cfg);
  const detail::Mat y = detail::forward_hidden(p, ids);
  std::vector<std::vector<double>> logits(static_cast<std::size_t>(y.rows));
  for (std::int64_t t = 0; t < y.rows; ++t) {
    std::vector<double> row(static_cast<std::size_t>(cfg.vocab_size));
    for (std::int64_t j = 0; j < cfg.vocab_size; ++j) {
      double acc = p.head_b[j];
      for (std::int64_t i = 0; i < cfg.d_model; ++i) acc += y.at(t, i) * p.head_w.at(i, j);
      row[j] = acc;
    }
    logits[t] = std::move(row);
  }
  return logits;
}

// Mean-pooled, L2-normalized embedding of one token sequence.
inline std::vector<double> encoder_embedding(const TensorMap& weights, const ToyArchConfig& cfg,
                                             const std::vector<int>& ids) {
  if (cfg.kind != ExampleKind::Encoder) throw validation_error("config is not an encoder");
  const detail::ToyParams p = detail::load_toy_params(weights, cfg);
  return detail::pooled_embedding(p, ids);
}

namespace detail {

inline double decoder_example_loss(const ToyParams& p, const TokenizedExample& ex) {
  if (ex.kind != ExampleKind::Decoder) throw validation_error("expected a decoder example");
  if (ex.target_ids.empty()) throw validation_error("decoder example has an empty target");
  std::vector<int> ids = ex.input_ids;
  ids.insert(ids.end(), ex.target_ids.begin(), ex.target_ids.end());
  const Mat y = forward_hidden(p, ids);

  const std::int64_t n_in = static_cast<std::int64_t>(ex.input_ids.size());
  const std::int64_t T = static_cast<std::int64_t>(ids.size());
  double total = 0.0;
  std::int64_t count = 0;
  std::vector<double> logits(static_cast<std::size_t>(p.cfg.vocab_size));
  for (std::int64_t t = std::max<std::int64_t>(n_in, 1); t < T; ++t) {
    // logits at t-1 predict token t; loss covers target tokens only
    const std::int64_t src = t - 1;
    for (std::int64_t j = 0; j < p.cfg.vocab_size; ++j) {
      double acc = p.head_b[j];
      for (std::int64_t i = 0; i < p.cfg.d_model; ++i) acc += y.at(src, i) * p.head_w.at(i, j);
      logits[j] = acc;
    }
    total -= log_softmax_at(logits, static_cast<std::size_t>(ids[t]));
    ++count;
  }
  if (count == 0) {
    throw validation_error("decoder example has no scoreable target position");
  }
  return total / static_cast<double>(count);
}

inline double encoder_example_loss(const ToyParams& p, const TokenizedExample& ex) {
  if (ex.kind != ExampleKind::Encoder) throw validation_error("expected an encoder example");
  if (ex.positive_ids.empty()) throw validation_error("encoder example has no positives");
  const std::vector<double> q = pooled_embedding(p, ex.query_ids);
  const auto cosine = [&](const std::vector<int>& ids) {
    const std::vector<double> d = pooled_embedding(p, ids);
    double dot = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) dot += q[i] * d[i];
    return dot;
  };

  // InfoNCE over {first positive} + negatives at temperature 0.02
  std::vector<double> sims;
  sims.push_back(cosine(ex.positive_ids.front()) / kContrastiveTemperature);
  for (const std::vector<int>& n : ex.negative_ids) {
    sims.push_back(cosine(n) / kContrastiveTemperature);
  }
  return -log_softmax_at(sims, 0);
}

}  // namespace detail

// Mean next-token cross-entropy per example (nats, target tokens only).
inline CandidateLosses decoder_loss(const TensorMap& weights, const ToyArchConfig& cfg,
                                    const std::vector<TokenizedExample>& examples,
                                    const std::string& id = "") {
  if (cfg.kind != ExampleKind::Decoder) throw validation_error("config is not a decoder");
  if (examples.empty()) throw validation_error("no examples to evaluate");
  const detail::ToyParams p = detail::load_toy_params(weights, cfg);
  CandidateLosses out;
  out.id = id;
  for (const TokenizedExample& ex : examples) {
    out.losses.push_back(detail::decoder_example_loss(p, ex));
  }
  double sum = 0.0;
  for (double l : out.losses) sum += l;
  out.aggregate = sum / static_cast<double>(out.losses.size());
  return out;
}

// Contrastive loss per example (nats, first positive vs negatives).
inline CandidateLosses encoder_loss(const TensorMap& weights, const ToyArchConfig& cfg,
                                    const std::vector<TokenizedExample>& examples,
                                    const std::string& id = "") {
  if (cfg.kind != ExampleKind::Encoder) throw validation_error("config is not an encoder");
  if (examples.empty()) throw validation_error("no examples to evaluate");
  const detail::ToyParams p = detail::load_toy_params(weights, cfg);
  CandidateLosses out;
  out.id = id;
  for (const TokenizedExample& ex : examples) {
    out.losses.push_back(detail::encoder_example_loss(p, ex));
  }
  double sum = 0.0;
  for (double l : out.losses) sum += l;
  out.aggregate = sum / static_cast<double>(out.losses.size());
  return out;
}

// Dispatches on the config kind.
inline CandidateLosses evaluate_loss(const TensorMap& weights, const ToyArchConfig& cfg,
                                     const FewShotSet& set, const std::string& id = "") {
  if (set.kind != cfg.kind) {
    throw validation_error("example kind does not match the architecture kind");
  }
  const std::vector<TokenizedExample> toks = tokenize_set(set);
  return cfg.kind == ExampleKind::Decoder ? decoder_loss(weights, cfg, toks, id)
                                          : encoder_loss(weights, cfg, toks, id);
}

}  // namespace cocktail
