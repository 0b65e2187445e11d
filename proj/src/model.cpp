#include "trunclab/model.hpp"

#include <cmath>

#include "trunclab/errors.hpp"
#include "trunclab/rng.hpp"

namespace trunclab {

namespace {

constexpr double kMaskNegative = -1e30;

}  // namespace

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.vocab_size <= kNumSpecials)
    throw config_error("model: vocab_size must exceed the special tokens");
  if (cfg.d_model == 0 || cfg.n_heads == 0 || cfg.d_ff == 0)
    throw config_error("model: d_model, n_heads and d_ff must be >= 1");
  if (cfg.d_model % cfg.n_heads != 0)
    throw config_error("model: d_model must be divisible by n_heads");
  if (cfg.n_enc_layers == 0 || cfg.n_dec_layers == 0)
    throw config_error("model: encoder and decoder need at least one layer");
  if (cfg.max_src_len == 0 || cfg.max_tgt_len < 2)
    throw config_error("model: max_src_len >= 1 and max_tgt_len >= 2 required");
}

Tensor positional_encoding(std::size_t len, std::size_t d_model) {
  Tensor pe({len, d_model});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      const double angle = static_cast<double>(pos) / rate;
      pe.at(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe.at(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor causal_mask(std::size_t len) {
  Tensor m({len, len});
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) m.at(i, j) = kMaskNegative;
  return m;
}

Seq2SeqModel::Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate_model_config(cfg);
  const std::size_t d = cfg.d_model;
  const std::size_t v = cfg.vocab_size;
  const std::size_t ff = cfg.d_ff;

  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    index_[name] = slots_.size();
    manifest_.push_back(name);
    slots_.push_back(Slot{name, Tensor({rows, cols})});
  };
  auto add_vec = [&](const std::string& name, std::size_t n) {
    index_[name] = slots_.size();
    manifest_.push_back(name);
    slots_.push_back(Slot{name, Tensor({n})});
  };
  auto add_ln = [&](const std::string& prefix) {
    add_vec(prefix + ".g", d);
    add_vec(prefix + ".b", d);
  };
  auto add_attn = [&](const std::string& prefix) {
    add(prefix + ".wq", d, d);
    add_vec(prefix + ".bq", d);
    add(prefix + ".wk", d, d);
    add_vec(prefix + ".bk", d);
    add(prefix + ".wv", d, d);
    add_vec(prefix + ".bv", d);
    add(prefix + ".wo", d, d);
    add_vec(prefix + ".bo", d);
  };
  auto add_ffn = [&](const std::string& prefix) {
    add(prefix + ".w1", d, ff);
    add_vec(prefix + ".b1", ff);
    add(prefix + ".w2", ff, d);
    add_vec(prefix + ".b2", d);
  };

  add("embed.tok", v, d);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    add_ln(p + ".ln1");
    add_attn(p + ".attn");
    add_ln(p + ".ln2");
    add_ffn(p + ".ffn");
  }
  add_ln("enc.final_ln");
  for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    add_ln(p + ".ln1");
    add_attn(p + ".self_attn");
    add_ln(p + ".ln2");
    add_attn(p + ".cross_attn");
    add_ln(p + ".ln3");
    add_ffn(p + ".ffn");
  }
  add_ln("dec.final_ln");
  add("out.w", d, v);
  add_vec("out.b", v);

  // Name-keyed init streams: parameter values do not depend on the order the
  // slots were registered in. Matrices draw uniform +-1/sqrt(fan_in) with
  // fan_in = rows (inputs hit them from the left); the embedding uses
  // d_model since its rows are later scaled by sqrt(d_model). Layer norm
  // gains start at one; every other vector starts at zero.
  const Rng init_root = Rng(seed).split("init");
  for (Slot& s : slots_) {
    const bool is_ln_gain = s.name.size() > 2 && s.name.rfind(".g") == s.name.size() - 2;
    if (s.value.rank() == 1) {
      if (is_ln_gain) s.value.fill(1.0);
      continue;
    }
    Rng stream = init_root.split(s.name);
    const std::size_t fan_in = s.name == "embed.tok" ? d : s.value.rows();
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < s.value.size(); ++i)
      s.value[i] = stream.uniform(-bound, bound);
  }
}

std::size_t Seq2SeqModel::n_params() const {
  std::size_t n = 0;
  for (const Slot& s : slots_) n += s.value.size();
  return n;
}

std::size_t Seq2SeqModel::idx(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw config_error("model: unknown parameter \"" + name + "\"");
  return it->second;
}

Tensor& Seq2SeqModel::param(const std::string& name) { return slots_[idx(name)].value; }

const Tensor& Seq2SeqModel::param(const std::string& name) const {
  return slots_[idx(name)].value;
}

Seq2SeqModel::Bound Seq2SeqModel::bind(Tape& tape, bool requires_grad) const {
  Bound b;
  b.vars.reserve(slots_.size());
  for (const Slot& s : slots_) b.vars.push_back(tape.leaf(s.value, requires_grad));
  return b;
}

Var Seq2SeqModel::embed(Tape& tape, const Bound& b, const Tokens& ids) const {
  for (std::uint32_t t : ids)
    if (t >= cfg_.vocab_size) throw config_error("model: token id outside the vocabulary");
  Var x = tape.embed_rows(b.at(idx("embed.tok")), ids);
  x = tape.scale(x, std::sqrt(static_cast<double>(cfg_.d_model)));
  return tape.add_const(x, positional_encoding(ids.size(), cfg_.d_model));
}

Var Seq2SeqModel::attention(Tape& tape, const Bound& b, const std::string& prefix,
                            Var queries_in, Var keys_in, bool causal) const {
  const std::size_t dh = cfg_.d_model / cfg_.n_heads;
  auto p = [&](const char* stem) { return b.at(idx(prefix + stem)); };
  Var q = tape.add_row(tape.matmul(queries_in, p(".wq")), p(".bq"));
  Var k = tape.add_row(tape.matmul(keys_in, p(".wk")), p(".bk"));
  Var v = tape.add_row(tape.matmul(keys_in, p(".wv")), p(".bv"));
  const std::size_t qlen = tape.value(q).rows();
  Tensor mask;
  if (causal) mask = causal_mask(qlen);
  Var merged;
  for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    Var scores = tape.matmul_nt(tape.slice_cols(q, c0, c1), tape.slice_cols(k, c0, c1));
    scores = tape.scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
    if (causal) scores = tape.add_const(scores, mask);
    Var ctx = tape.matmul(tape.softmax(scores), tape.slice_cols(v, c0, c1));
    merged = h == 0 ? ctx : tape.concat_cols(merged, ctx);
  }
  return tape.add_row(tape.matmul(merged, p(".wo")), p(".bo"));
}

Var Seq2SeqModel::feed_forward(Tape& tape, const Bound& b, const std::string& prefix,
                               Var x) const {
  auto p = [&](const char* stem) { return b.at(idx(prefix + stem)); };
  Var h = tape.gelu(tape.add_row(tape.matmul(x, p(".w1")), p(".b1")));
  return tape.add_row(tape.matmul(h, p(".w2")), p(".b2"));
}

Var Seq2SeqModel::encode(Tape& tape, const Bound& b, const Tokens& src) const {
  if (src.empty()) throw config_error("model: empty source");
  if (src.size() > cfg_.max_src_len) throw config_error("model: source exceeds max_src_len");
  auto ln = [&](const std::string& prefix, Var x) {
    return tape.layer_norm(x, b.at(idx(prefix + ".g")), b.at(idx(prefix + ".b")));
  };
  Var x = embed(tape, b, src);
  for (std::size_t i = 0; i < cfg_.n_enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    Var n1 = ln(p + ".ln1", x);
    x = tape.add(x, attention(tape, b, p + ".attn", n1, n1, false));
    x = tape.add(x, feed_forward(tape, b, p + ".ffn", ln(p + ".ln2", x)));
  }
  return ln("enc.final_ln", x);
}

Seq2SeqModel::ForwardResult Seq2SeqModel::forward_teacher_forced(Tape& tape, const Bound& b,
                                                                 const Tokens& src,
                                                                 const Tokens& tgt) const {
  if (tgt.size() < 2) throw config_error("model: target needs at least two tokens");
  if (tgt.size() > cfg_.max_tgt_len) throw config_error("model: target exceeds max_tgt_len");
  for (std::uint32_t t : tgt)
    if (t >= cfg_.vocab_size) throw config_error("model: token id outside the vocabulary");

  auto ln = [&](const std::string& prefix, Var x) {
    return tape.layer_norm(x, b.at(idx(prefix + ".g")), b.at(idx(prefix + ".b")));
  };
  Var enc_out = encode(tape, b, src);

  const Tokens dec_in(tgt.begin(), tgt.end() - 1);
  const std::vector<std::uint32_t> targets(tgt.begin() + 1, tgt.end());
  Var x = embed(tape, b, dec_in);
  for (std::size_t i = 0; i < cfg_.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    Var n1 = ln(p + ".ln1", x);
    x = tape.add(x, attention(tape, b, p + ".self_attn", n1, n1, true));
    x = tape.add(x, attention(tape, b, p + ".cross_attn", ln(p + ".ln2", x), enc_out, false));
    x = tape.add(x, feed_forward(tape, b, p + ".ffn", ln(p + ".ln3", x)));
  }
  x = ln("dec.final_ln", x);
  Var logits = tape.add_row(tape.matmul(x, b.at(idx("out.w"))), b.at(idx("out.b")));
  const std::vector<std::uint8_t> pads(targets.size(), 0);
  ForwardResult r;
  r.logits = logits;
  r.losses = tape.per_token_nll(logits, targets, pads);
  return r;
}

Seq2SeqModel::BatchForward Seq2SeqModel::forward_batch(
    Tape& tape, const Bound& b, const std::vector<const Example*>& batch) const {
  if (batch.empty()) throw config_error("model: empty batch");
  std::size_t cols = 0;
  for (const Example* e : batch) cols = std::max(cols, e->reference.size() - 1);

  BatchForward out;
  out.rows = batch.size();
  out.cols = cols;
  out.pad_mask.reserve(batch.size() * cols);
  Var flat;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Example& e = *batch[i];
    ForwardResult fr = forward_teacher_forced(tape, b, e.article, e.reference);
    const std::size_t len = e.reference.size() - 1;
    Var row = fr.losses;
    if (len < cols) {
      // filler keeps rows rectangular; it carries no loss and no gradient
      row = tape.concat_vec(row, tape.leaf(Tensor({cols - len}), false));
    }
    flat = i == 0 ? row : tape.concat_vec(flat, row);
    for (std::size_t j = 0; j < cols; ++j) out.pad_mask.push_back(j < len ? 0 : 1);
  }
  out.flat_losses = flat;
  return out;
}

}  // namespace trunclab
