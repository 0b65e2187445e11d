#include "trunclab/decode.hpp"

#include <algorithm>
#include <cmath>

#include "trunclab/errors.hpp"

namespace trunclab {

namespace {

constexpr double kLnEps = 1e-5;  // must match the tape layer_norm epsilon

// y[n] = x[m] applied to w[m, n] from the left, plus bias.
std::vector<double> vec_linear(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  const std::size_t m = w.rows(), n = w.cols();
  std::vector<double> y(b.data(), b.data() + n);
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    const double* wr = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xi * wr[j];
  }
  return y;
}

Tensor mat_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* yr = y.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) yr[j] = b[j];
    for (std::size_t t = 0; t < k; ++t) {
      const double xv = x.at(i, t);
      const double* wr = w.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

void layer_norm_row(double* x, std::size_t d, const Tensor& g, const Tensor& b) {
  double mu = 0.0;
  for (std::size_t i = 0; i < d; ++i) mu += x[i];
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (std::size_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t i = 0; i < d; ++i) x[i] = (x[i] - mu) * inv * g[i] + b[i];
}

std::vector<double> layer_norm_vec(std::vector<double> x, const Tensor& g, const Tensor& b) {
  layer_norm_row(x.data(), x.size(), g, b);
  return x;
}

Tensor layer_norm_mat(Tensor x, const Tensor& g, const Tensor& b) {
  for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_row(x.data() + r * x.cols(), x.cols(), g, b);
  return x;
}

double gelu_exact(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

void softmax_inplace(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

std::vector<double> log_softmax_vec(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

void add_positional_row(std::vector<double>& x, std::size_t pos, std::size_t d) {
  for (std::size_t i = 0; i < d; i += 2) {
    const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(pos) / rate;
    x[i] += std::sin(angle);
    if (i + 1 < d) x[i + 1] += std::cos(angle);
  }
}

}  // namespace

Tensor Seq2SeqModel::encode_plain(const Tokens& src) const {
  if (src.empty()) throw config_error("model: empty source");
  if (src.size() > cfg_.max_src_len) throw config_error("model: source exceeds max_src_len");
  const std::size_t d = cfg_.d_model;
  const std::size_t dh = d / cfg_.n_heads;
  const double emb_scale = std::sqrt(static_cast<double>(d));

  Tensor x({src.size(), d});
  const Tensor& emb = param("embed.tok");
  for (std::size_t r = 0; r < src.size(); ++r) {
    if (src[r] >= cfg_.vocab_size) throw config_error("model: token id outside the vocabulary");
    for (std::size_t c = 0; c < d; ++c) x.at(r, c) = emb.at(src[r], c) * emb_scale;
  }
  const Tensor pe = positional_encoding(src.size(), d);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += pe[i];

  for (std::size_t layer = 0; layer < cfg_.n_enc_layers; ++layer) {
    const std::string p = "enc." + std::to_string(layer);
    const Tensor h = layer_norm_mat(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
    const Tensor q = mat_linear(h, param(p + ".attn.wq"), param(p + ".attn.bq"));
    const Tensor k = mat_linear(h, param(p + ".attn.wk"), param(p + ".attn.bk"));
    const Tensor v = mat_linear(h, param(p + ".attn.wv"), param(p + ".attn.bv"));
    Tensor merged({src.size(), d});
    std::vector<double> scores(src.size());
    for (std::size_t head = 0; head < cfg_.n_heads; ++head) {
      const std::size_t c0 = head * dh;
      for (std::size_t i = 0; i < src.size(); ++i) {
        for (std::size_t j = 0; j < src.size(); ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q.at(i, c0 + c) * k.at(j, c0 + c);
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax_inplace(scores.data(), src.size());
        for (std::size_t j = 0; j < src.size(); ++j)
          for (std::size_t c = 0; c < dh; ++c)
            merged.at(i, c0 + c) += scores[j] * v.at(j, c0 + c);
      }
    }
    const Tensor attn_out = mat_linear(merged, param(p + ".attn.wo"), param(p + ".attn.bo"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];

    Tensor f = layer_norm_mat(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
    Tensor hidden = mat_linear(f, param(p + ".ffn.w1"), param(p + ".ffn.b1"));
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = gelu_exact(hidden[i]);
    const Tensor ffn_out = mat_linear(hidden, param(p + ".ffn.w2"), param(p + ".ffn.b2"));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += ffn_out[i];
  }
  return layer_norm_mat(x, param("enc.final_ln.g"), param("enc.final_ln.b"));
}

IncrementalDecoder::IncrementalDecoder(const Seq2SeqModel& model, const Tokens& src)
    : model_(&model), enc_out_(model.encode_plain(src)) {
  const ModelConfig& cfg = model.config();
  layers_.resize(cfg.n_dec_layers);
  for (std::size_t layer = 0; layer < cfg.n_dec_layers; ++layer) {
    const std::string p = "dec." + std::to_string(layer) + ".cross_attn";
    layers_[layer].cross_k = mat_linear(enc_out_, model.param(p + ".wk"), model.param(p + ".bk"));
    layers_[layer].cross_v = mat_linear(enc_out_, model.param(p + ".wv"), model.param(p + ".bv"));
  }
}

const std::vector<double>& IncrementalDecoder::step(std::uint32_t token) {
  const ModelConfig& cfg = model_->config();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = d / cfg.n_heads;
  const std::size_t src_len = enc_out_.rows();
  if (token >= cfg.vocab_size) throw config_error("decode: token id outside the vocabulary");
  if (pos_ + 1 >= cfg.max_tgt_len)
    throw config_error("decode: position exceeds max_tgt_len");

  std::vector<double> x(d);
  const Tensor& emb = model_->param("embed.tok");
  const double emb_scale = std::sqrt(static_cast<double>(d));
  for (std::size_t c = 0; c < d; ++c) x[c] = emb.at(token, c) * emb_scale;
  add_positional_row(x, pos_, d);

  std::vector<double> scores;
  for (std::size_t layer = 0; layer < cfg.n_dec_layers; ++layer) {
    LayerCache& cache = layers_[layer];
    const std::string p = "dec." + std::to_string(layer);

    // masked self-attention over the cached prefix plus this token
    {
      const std::vector<double> h =
          layer_norm_vec(x, model_->param(p + ".ln1.g"), model_->param(p + ".ln1.b"));
      const std::vector<double> q = vec_linear(h, model_->param(p + ".self_attn.wq"),
                                               model_->param(p + ".self_attn.bq"));
      const std::vector<double> k = vec_linear(h, model_->param(p + ".self_attn.wk"),
                                               model_->param(p + ".self_attn.bk"));
      const std::vector<double> v = vec_linear(h, model_->param(p + ".self_attn.wv"),
                                               model_->param(p + ".self_attn.bv"));
      cache.self_k.insert(cache.self_k.end(), k.begin(), k.end());
      cache.self_v.insert(cache.self_v.end(), v.begin(), v.end());
      const std::size_t t = pos_ + 1;
      std::vector<double> merged(d, 0.0);
      scores.resize(t);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t c0 = head * dh;
        for (std::size_t j = 0; j < t; ++j) {
          double s = 0.0;
          const double* kr = cache.self_k.data() + j * d + c0;
          for (std::size_t c = 0; c < dh; ++c) s += q[c0 + c] * kr[c];
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax_inplace(scores.data(), t);
        for (std::size_t j = 0; j < t; ++j) {
          const double* vr = cache.self_v.data() + j * d + c0;
          for (std::size_t c = 0; c < dh; ++c) merged[c0 + c] += scores[j] * vr[c];
        }
      }
      const std::vector<double> out = vec_linear(merged, model_->param(p + ".self_attn.wo"),
                                                 model_->param(p + ".self_attn.bo"));
      for (std::size_t c = 0; c < d; ++c) x[c] += out[c];
    }

    // cross-attention against the precomputed encoder keys and values
    {
      const std::vector<double> h =
          layer_norm_vec(x, model_->param(p + ".ln2.g"), model_->param(p + ".ln2.b"));
      const std::vector<double> q = vec_linear(h, model_->param(p + ".cross_attn.wq"),
                                               model_->param(p + ".cross_attn.bq"));
      std::vector<double> merged(d, 0.0);
      scores.resize(src_len);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t c0 = head * dh;
        for (std::size_t j = 0; j < src_len; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[c0 + c] * cache.cross_k.at(j, c0 + c);
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        softmax_inplace(scores.data(), src_len);
        for (std::size_t j = 0; j < src_len; ++j)
          for (std::size_t c = 0; c < dh; ++c)
            merged[c0 + c] += scores[j] * cache.cross_v.at(j, c0 + c);
      }
      const std::vector<double> out = vec_linear(merged, model_->param(p + ".cross_attn.wo"),
                                                 model_->param(p + ".cross_attn.bo"));
      for (std::size_t c = 0; c < d; ++c) x[c] += out[c];
    }

    // feed-forward
    {
      const std::vector<double> h =
          layer_norm_vec(x, model_->param(p + ".ln3.g"), model_->param(p + ".ln3.b"));
      std::vector<double> hidden =
          vec_linear(h, model_->param(p + ".ffn.w1"), model_->param(p + ".ffn.b1"));
      for (double& u : hidden) u = gelu_exact(u);
      const std::vector<double> out =
          vec_linear(hidden, model_->param(p + ".ffn.w2"), model_->param(p + ".ffn.b2"));
      for (std::size_t c = 0; c < d; ++c) x[c] += out[c];
    }
  }

  const std::vector<double> top =
      layer_norm_vec(x, model_->param("dec.final_ln.g"), model_->param("dec.final_ln.b"));
  const std::vector<double> logits = vec_linear(top, model_->param("out.w"), model_->param("out.b"));
  last_logprobs_ = log_softmax_vec(logits);
  ++pos_;
  return last_logprobs_;
}

void validate_decode_config(const DecodeConfig& cfg, const ModelConfig& model_cfg) {
  if (cfg.max_len == 0) throw config_error("decode: max_len must be >= 1");
  if (cfg.min_len > cfg.max_len) throw config_error("decode: min_len exceeds max_len");
  if (cfg.beam_size == 0) throw config_error("decode: beam_size must be >= 1");
  if (!(cfg.length_penalty >= 0.0)) throw config_error("decode: length_penalty must be >= 0");
  if (model_cfg.max_tgt_len < 3)
    throw config_error("decode: the model cannot fit BOS, a token and EOS");
}

std::vector<std::uint8_t> banned_next_tokens(const Tokens& seq, std::size_t n,
                                             std::size_t vocab_size) {
  std::vector<std::uint8_t> banned(vocab_size, 0);
  if (n == 0 || seq.size() + 1 < n) return banned;
  const std::size_t ctx = n - 1;
  // ban x whenever (last ctx tokens, x) already occurs in seq
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < ctx && match; ++k)
      match = seq[i + k] == seq[seq.size() - ctx + k];
    if (match && seq[i + ctx] < vocab_size) banned[seq[i + ctx]] = 1;
  }
  return banned;
}

namespace {

// content budget after reserving room for BOS and EOS inside max_tgt_len
std::size_t content_cap(const DecodeConfig& cfg, const ModelConfig& model_cfg) {
  return std::min(cfg.max_len, model_cfg.max_tgt_len - 2);
}

std::vector<std::uint8_t> allowed_mask(const Tokens& with_bos, const DecodeConfig& cfg,
                                       std::size_t vocab) {
  const Tokens tail(with_bos.begin() + 1, with_bos.end());
  std::vector<std::uint8_t> banned = banned_next_tokens(tail, cfg.no_repeat_ngram, vocab);
  banned[kPadId] = 1;
  banned[kBosId] = 1;
  if (tail.size() < cfg.min_len) banned[kEosId] = 1;
  return banned;
}

}  // namespace

Decoded greedy_decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg) {
  validate_decode_config(cfg, model.config());
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t cap = content_cap(cfg, model.config());

  IncrementalDecoder dec(model, src);
  Decoded out;
  out.tokens = {kBosId};
  const std::vector<double>* lp = &dec.step(kBosId);
  double sum_lp = 0.0;
  while (true) {
    const std::vector<std::uint8_t> banned = allowed_mask(out.tokens, cfg, vocab);
    std::uint32_t best = 0;
    bool any = false;
    for (std::uint32_t t = 0; t < vocab; ++t) {
      if (banned[t]) continue;
      if (!any || (*lp)[t] > (*lp)[best]) {  // strict: ties keep the lowest id
        best = t;
        any = true;
      }
    }
    if (!any) break;  // fully constrained; give up unfinished
    sum_lp += (*lp)[best];
    out.tokens.push_back(best);
    if (best == kEosId) {
      out.finished = true;
      break;
    }
    if (out.tokens.size() - 1 >= cap) break;
    lp = &dec.step(best);
  }
  const double len = static_cast<double>(out.tokens.size() - 1);
  out.score = len > 0 ? sum_lp / std::pow(len, cfg.length_penalty) : sum_lp;
  return out;
}

Decoded beam_decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg) {
  validate_decode_config(cfg, model.config());
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t cap = content_cap(cfg, model.config());

  struct Hyp {
    Tokens tokens;  // includes BOS
    double sum_lp = 0.0;
    IncrementalDecoder dec;
    std::vector<double> next_lp;  // log-probs for the next position
  };
  auto normalized = [&](double sum_lp, std::size_t n_tokens) {
    const double len = static_cast<double>(n_tokens - 1);  // scored tokens
    return len > 0 ? sum_lp / std::pow(len, cfg.length_penalty) : sum_lp;
  };
  auto better = [](const Decoded& a, const Decoded& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  };

  std::vector<Hyp> alive;
  {
    Hyp root{{kBosId}, 0.0, IncrementalDecoder(model, src), {}};
    root.next_lp = root.dec.step(kBosId);
    alive.push_back(std::move(root));
  }

  std::vector<Decoded> finished;
  while (!alive.empty() && finished.size() < cfg.beam_size) {
    struct Cand {
      std::size_t hyp;
      std::uint32_t token;
      double sum_lp;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const std::vector<std::uint8_t> banned = allowed_mask(alive[h].tokens, cfg, vocab);
      for (std::uint32_t t = 0; t < vocab; ++t)
        if (!banned[t]) cands.push_back({h, t, alive[h].sum_lp + alive[h].next_lp[t]});
    }
    // candidates were generated in (hypothesis, token id) order; a stable
    // sort therefore breaks score ties toward earlier hypotheses and then
    // lower token ids, which keeps beam_size 1 identical to greedy
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.sum_lp > b.sum_lp; });

    const bool at_cap = alive[0].tokens.size() >= cap + 1;  // content tokens == cap
    std::vector<Hyp> next;
    for (const Cand& c : cands) {
      if (c.token == kEosId) {
        if (finished.size() < cfg.beam_size) {
          Decoded d;
          d.tokens = alive[c.hyp].tokens;
          d.tokens.push_back(kEosId);
          d.finished = true;
          d.score = normalized(c.sum_lp, d.tokens.size());
          finished.push_back(std::move(d));
        }
        continue;
      }
      if (at_cap || next.size() >= cfg.beam_size) continue;
      Hyp h{alive[c.hyp].tokens, c.sum_lp, alive[c.hyp].dec, {}};
      h.tokens.push_back(c.token);
      h.next_lp = h.dec.step(c.token);
      next.push_back(std::move(h));
    }
    if (at_cap) break;
    alive = std::move(next);
  }

  Decoded best;
  bool have = false;
  for (const Decoded& d : finished) {
    if (!have || better(d, best)) {
      best = d;
      have = true;
    }
  }
  if (!have) {
    // nothing reached EOS inside the budget; surface the best live prefix
    for (const Hyp& h : alive) {
      Decoded d;
      d.tokens = h.tokens;
      d.finished = false;
      d.score = normalized(h.sum_lp, h.tokens.size());
      if (!have || better(d, best)) {
        best = std::move(d);
        have = true;
      }
    }
  }
  if (!have) throw runtime_failure("beam decode produced no hypothesis");
  return best;
}

Decoded decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg) {
  if (cfg.beam_size == 1 && cfg.length_penalty == 0.0) return greedy_decode(model, src, cfg);
  return beam_decode(model, src, cfg);
}

}  // namespace trunclab
