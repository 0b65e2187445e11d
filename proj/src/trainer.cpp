#include "trunclab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "trunclab/config.hpp"
#include "trunclab/errors.hpp"
#include "trunclab/rng.hpp"

namespace trunclab {

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.total_steps < 1) throw config_error("train.total_steps must be >= 1");
  if (cfg.batch_size < 1) throw config_error("train.batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw config_error("train.learning_rate must be > 0");
  if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0))
    throw config_error("train.adam_beta1 must be in [0, 1)");
  if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0))
    throw config_error("train.adam_beta2 must be in [0, 1)");
  if (!(cfg.adam_eps > 0.0)) throw config_error("train.adam_eps must be > 0");
  if (!(cfg.max_grad_norm > 0.0)) throw config_error("train.max_grad_norm must be > 0");
  if (cfg.checkpoint_every > cfg.total_steps)
    throw config_error("train.checkpoint_every exceeds total_steps");
  validate_truncation_config(cfg.truncation);
  if (cfg.truncation.mode != TruncationMode::off &&
      cfg.truncation.warmup_steps >= cfg.total_steps)
    throw config_error("train.truncation.warmup_steps must be < total_steps when filtering");
}

void adam_step(double* p, double* m, double* v, const double* g, std::size_t n, std::uint64_t t,
               const AdamParams& ap) {
  const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = ap.beta1 * m[i] + (1.0 - ap.beta1) * g[i];
    v[i] = ap.beta2 * v[i] + (1.0 - ap.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= ap.lr * m_hat / (std::sqrt(v_hat) + ap.eps);
  }
}

double global_grad_norm(const std::vector<std::vector<double>>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw config_error("clip: max_norm must be > 0");
  const double norm = global_grad_norm(grads);
  if (!std::isfinite(norm)) throw numeric_error("non-finite gradient norm");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= scale;
  }
  return norm;
}

std::vector<std::uint64_t> checkpoint_steps(std::uint64_t total_steps,
                                            std::uint64_t checkpoint_every) {
  std::vector<std::uint64_t> steps;
  if (checkpoint_every > 0)
    for (std::uint64_t s = checkpoint_every; s <= total_steps; s += checkpoint_every)
      steps.push_back(s);
  if (steps.empty() || steps.back() != total_steps) steps.push_back(total_steps);
  return steps;
}

namespace {

void blob_put_u64(std::vector<std::uint8_t>& blob, std::uint64_t v) {
  const auto* b = reinterpret_cast<const std::uint8_t*>(&v);
  blob.insert(blob.end(), b, b + sizeof(v));
}

void blob_put_f64s(std::vector<std::uint8_t>& blob, const std::vector<double>& v) {
  blob_put_u64(blob, v.size());
  const auto* b = reinterpret_cast<const std::uint8_t*>(v.data());
  blob.insert(blob.end(), b, b + v.size() * sizeof(double));
}

std::uint64_t blob_get_u64(const std::vector<std::uint8_t>& blob, std::size_t& off) {
  if (off + sizeof(std::uint64_t) > blob.size())
    throw format_error("checkpoint: truncated trainer state");
  std::uint64_t v;
  std::memcpy(&v, blob.data() + off, sizeof(v));
  off += sizeof(v);
  return v;
}

std::vector<double> blob_get_f64s(const std::vector<std::uint8_t>& blob, std::size_t& off) {
  const std::uint64_t n = blob_get_u64(blob, off);
  if (off + n * sizeof(double) > blob.size())
    throw format_error("checkpoint: truncated trainer state");
  std::vector<double> v(n);
  std::memcpy(v.data(), blob.data() + off, n * sizeof(double));
  off += n * sizeof(double);
  return v;
}

}  // namespace

Trainer::Trainer(Seq2SeqModel& model, const std::vector<Example>& corpus, const TrainConfig& cfg)
    : model_(model),
      corpus_(corpus),
      cfg_(cfg),
      token_window_(cfg.truncation.window),
      sentence_window_(cfg.truncation.window) {
  validate_train_config(cfg_);
  if (corpus_.empty()) throw config_error("trainer: corpus is empty");
  digest_ = trunclab::config_digest(model_.config(), cfg_);
  const auto& manifest = model_.manifest();
  adam_m_.resize(manifest.size());
  adam_v_.resize(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const std::size_t n = model_.param(manifest[i]).size();
    adam_m_[i].assign(n, 0.0);
    adam_v_[i].assign(n, 0.0);
  }
}

void Trainer::ensure_permutation() {
  if (perm_valid_ && perm_.size() == corpus_.size()) return;
  perm_.resize(corpus_.size());
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  Rng rng = Rng(cfg_.seed).split("shuffle").split(epoch_);
  rng.shuffle(perm_);
  perm_valid_ = true;
}

std::vector<const Example*> Trainer::next_batch(std::vector<std::size_t>& indices_out) {
  ensure_permutation();
  const std::size_t n_take = std::min(cfg_.batch_size, perm_.size() - pos_);
  std::vector<const Example*> batch;
  batch.reserve(n_take);
  indices_out.clear();
  for (std::size_t i = 0; i < n_take; ++i) {
    const std::size_t idx = perm_[pos_ + i];
    indices_out.push_back(idx);
    batch.push_back(&corpus_[idx]);
  }
  pos_ += n_take;
  if (pos_ >= perm_.size()) {
    pos_ = 0;
    ++epoch_;
    perm_valid_ = false;  // reshuffled lazily for the new epoch
  }
  return batch;
}

StepInfo Trainer::step() {
  const std::uint64_t t = step_ + 1;
  std::vector<std::size_t> batch_indices;
  const std::vector<const Example*> batch = next_batch(batch_indices);

  StepInfo info;
  info.step = t;

  std::vector<std::vector<double>> grads(model_.manifest().size());
  try {
    Tape tape;
    const Seq2SeqModel::Bound bound = model_.bind(tape, true);
    const Seq2SeqModel::BatchForward fwd = model_.forward_batch(tape, bound, batch);

    const Tensor& loss_t = tape.value(fwd.flat_losses);
    const std::vector<double> losses(loss_t.data(), loss_t.data() + loss_t.size());
    const std::vector<std::uint8_t>& pad = fwd.pad_mask;

    // All modes feed the token window so the threshold telemetry is defined
    // everywhere; only the filtering decision depends on the mode.
    const double token_q =
        update_threshold_estimate(token_window_, losses, pad, cfg_.truncation.percentile);

    std::vector<std::uint8_t> mask;
    if (cfg_.truncation.mode == TruncationMode::sentence_factuality) {
      std::vector<double> scores(fwd.rows, 0.0);
      for (std::size_t r = 0; r < fwd.rows; ++r) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t c = 0; c < fwd.cols; ++c) {
          const std::size_t j = r * fwd.cols + c;
          if (!pad[j]) {
            sum += losses[j];
            ++cnt;
          }
        }
        scores[r] = sum / static_cast<double>(cnt);  // every row has >= 1 real token
      }
      const std::vector<std::uint8_t> keep_row = sentence_level_mask(
          sentence_window_, scores, cfg_.truncation.percentile, t, cfg_.truncation.warmup_steps);
      mask.assign(losses.size(), 0);
      for (std::size_t r = 0; r < fwd.rows; ++r)
        for (std::size_t c = 0; c < fwd.cols; ++c) {
          const std::size_t j = r * fwd.cols + c;
          mask[j] = (keep_row[r] && !pad[j]) ? 1 : 0;
        }
      info.q = sentence_window_.percentile(cfg_.truncation.percentile);
    } else {
      mask = truncation_mask(losses, pad, token_q, cfg_.truncation.mode, t,
                             cfg_.truncation.warmup_steps);
      info.q = token_q;
    }

    std::size_t real = 0, kept = 0;
    for (std::size_t j = 0; j < losses.size(); ++j) {
      if (!pad[j]) ++real;
      if (mask[j]) ++kept;
    }
    info.tokens = real;
    info.tokens_kept = kept;
    info.fraction_masked =
        real == 0 ? 0.0 : static_cast<double>(real - kept) / static_cast<double>(real);

    std::vector<double> weights(losses.size(), 0.0);
    double loss_value = 0.0;
    if (kept > 0) {
      const double w = 1.0 / static_cast<double>(kept);
      for (std::size_t j = 0; j < losses.size(); ++j)
        if (mask[j]) {
          weights[j] = w;
          loss_value += losses[j];
        }
      loss_value /= static_cast<double>(kept);
    }
    info.loss = loss_value;

    const Var step_loss = tape.dot_const(fwd.flat_losses, weights);
    tape.backward(step_loss);

    for (std::size_t i = 0; i < model_.manifest().size(); ++i) {
      const Var v = bound.at(i);
      if (tape.has_grad(v)) {
        const Tensor& g = tape.grad(v);
        grads[i].assign(g.data(), g.data() + g.size());
      } else {
        grads[i].assign(tape.value(v).size(), 0.0);
      }
    }

    clip_grad_norm(grads, cfg_.max_grad_norm);
  } catch (const numeric_error& e) {
    std::ostringstream os;
    os << "training step " << t << " (corpus indices";
    for (std::size_t idx : batch_indices) os << " " << idx;
    os << "): " << e.what();
    throw numeric_error(os.str());
  }

  double lr = cfg_.learning_rate;
  if (cfg_.lr_linear_decay) {
    const double frac =
        1.0 - static_cast<double>(t - 1) / static_cast<double>(cfg_.total_steps);
    lr *= std::max(0.0, frac);
  }
  ++adam_t_;
  const AdamParams ap{lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
  const auto& manifest = model_.manifest();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Tensor& p = model_.param(manifest[i]);
    adam_step(p.data(), adam_m_[i].data(), adam_v_[i].data(), grads[i].data(), p.size(), adam_t_,
              ap);
  }

  step_ = t;
  return info;
}

void load_model_params(Seq2SeqModel& model, const Checkpoint& ck) {
  const auto& manifest = model.manifest();
  if (ck.names != manifest) throw format_error("checkpoint parameter manifest mismatch");
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (ck.params[i].size() != model.param(manifest[i]).size())
      throw format_error("checkpoint size mismatch for " + manifest[i]);
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Tensor& p = model.param(manifest[i]);
    std::copy(ck.params[i].begin(), ck.params[i].end(), p.data());
  }
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.step = step_;
  ck.digest = digest_;
  ck.names = model_.manifest();
  ck.params.reserve(ck.names.size());
  for (const auto& name : ck.names) {
    const Tensor& p = model_.param(name);
    ck.params.emplace_back(p.data(), p.data() + p.size());
  }
  ck.adam_m = adam_m_;
  ck.adam_v = adam_v_;
  ck.adam_t = adam_t_;
  blob_put_u64(ck.state_blob, epoch_);
  blob_put_u64(ck.state_blob, pos_);
  blob_put_f64s(ck.state_blob, token_window_.values());
  blob_put_f64s(ck.state_blob, sentence_window_.values());
  return ck;
}

void Trainer::save(const std::string& path) const { write_checkpoint(path, snapshot()); }

void Trainer::load(const Checkpoint& ck) {
  if (ck.digest != digest_)
    throw format_error("checkpoint config digest mismatch: refusing to resume");
  const auto& manifest = model_.manifest();
  if (ck.names != manifest) throw format_error("checkpoint parameter manifest mismatch");
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (ck.params[i].size() != model_.param(manifest[i]).size())
      throw format_error("checkpoint size mismatch for " + manifest[i]);

  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Tensor& p = model_.param(manifest[i]);
    std::copy(ck.params[i].begin(), ck.params[i].end(), p.data());
  }
  adam_m_ = ck.adam_m;
  adam_v_ = ck.adam_v;
  adam_t_ = ck.adam_t;
  step_ = ck.step;

  std::size_t off = 0;
  const std::uint64_t epoch = blob_get_u64(ck.state_blob, off);
  const std::uint64_t pos = blob_get_u64(ck.state_blob, off);
  const std::vector<double> tok = blob_get_f64s(ck.state_blob, off);
  const std::vector<double> sent = blob_get_f64s(ck.state_blob, off);
  if (off != ck.state_blob.size()) throw format_error("checkpoint: trailing trainer state");
  epoch_ = epoch;
  pos_ = static_cast<std::size_t>(pos);
  perm_valid_ = false;
  token_window_ = LossWindow(cfg_.truncation.window);
  for (double x : tok) token_window_.push(x);
  sentence_window_ = LossWindow(cfg_.truncation.window);
  for (double x : sent) sentence_window_.push(x);
}

void Trainer::warm_start(const Checkpoint& ck) {
  const auto& manifest = model_.manifest();
  if (ck.names != manifest)
    throw config_error("warm start: checkpoint parameters do not match the model manifest");
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (ck.params[i].size() != model_.param(manifest[i]).size())
      throw config_error("warm start: size mismatch for " + manifest[i]);

  for (std::size_t i = 0; i < manifest.size(); ++i) {
    Tensor& p = model_.param(manifest[i]);
    std::copy(ck.params[i].begin(), ck.params[i].end(), p.data());
  }
  for (auto& m : adam_m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : adam_v_) std::fill(v.begin(), v.end(), 0.0);
  adam_t_ = 0;
  step_ = 0;
  epoch_ = 0;
  pos_ = 0;
  perm_valid_ = false;
  token_window_ = LossWindow(cfg_.truncation.window);
  sentence_window_ = LossWindow(cfg_.truncation.window);
}

}  // namespace trunclab
