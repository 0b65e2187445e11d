#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trunclab/checkpoint.hpp"
#include "trunclab/corpus.hpp"
#include "trunclab/model.hpp"
#include "trunclab/truncation.hpp"

namespace trunclab {

struct TrainConfig {
  std::uint64_t total_steps = 1000;
  std::size_t batch_size = 4;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double max_grad_norm = 1.0;
  // false: constant learning rate. true: linear decay toward zero, step t of T
  // running at learning_rate * (1 - (t - 1) / T).
  bool lr_linear_decay = false;
  std::uint64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::uint64_t seed = 1;
  TruncationConfig truncation;
  std::string init_from;  // optional checkpoint path for a warm start
};

void validate_train_config(const TrainConfig& cfg);

struct AdamParams {
  double lr;
  double beta1;
  double beta2;
  double eps;
};

// One bias-corrected Adam update, in place. t is the 1-based update count
// including this one. Moment buffers must match the parameter length.
void adam_step(double* p, double* m, double* v, const double* g, std::size_t n, std::uint64_t t,
               const AdamParams& ap);

double global_grad_norm(const std::vector<std::vector<double>>& grads);

// Scales every buffer by max_norm / norm when the global L2 norm exceeds
// max_norm, exactly; otherwise leaves them untouched. Returns the pre-clip
// norm.
double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm);

// Ascending steps at which a run snapshots: every multiple of
// checkpoint_every, plus the final step when it is not already one. A zero
// interval keeps only the final step.
std::vector<std::uint64_t> checkpoint_steps(std::uint64_t total_steps,
                                            std::uint64_t checkpoint_every);

// Copies checkpoint parameters into the model, ignoring optimizer and
// trainer state; for probing and analysis of saved checkpoints. Throws
// format_error when the entry names or sizes do not match the manifest.
void load_model_params(Seq2SeqModel& model, const Checkpoint& ck);

struct StepInfo {
  std::uint64_t step = 0;       // 1-based
  double loss = 0.0;            // sum of kept losses / count of kept tokens
  double q = 0.0;               // active threshold after this step's update
  double fraction_masked = 0.0; // dropped real tokens / real tokens
  std::size_t tokens = 0;       // real (non filler) tokens in the batch
  std::size_t tokens_kept = 0;
};

// Deterministic teacher-forced training loop: seeded epoch shuffling, loss
// truncation, global-norm clipping and Adam. The model is borrowed and
// mutated in place; the corpus is borrowed read-only and must outlive the
// trainer.
class Trainer {
 public:
  Trainer(Seq2SeqModel& model, const std::vector<Example>& corpus, const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  std::uint64_t completed_steps() const { return step_; }
  const Digest256& config_digest() const { return digest_; }

  StepInfo step();

  Checkpoint snapshot() const;
  void save(const std::string& path) const;

  // Resume: restores parameters, optimizer state, the data cursor and both
  // loss windows, so the continuation is bit-identical to an uninterrupted
  // run. The checkpoint digest must match this trainer's config digest.
  void load(const Checkpoint& ck);

  // Warm start: parameters only, after verifying that every entry matches the
  // model's manifest in name, order and size. Optimizer state, step count,
  // data cursor and windows reset to a fresh run. Note that attention head
  // count is not visible in parameter shapes, so the caller is trusted on it.
  void warm_start(const Checkpoint& ck);

 private:
  void ensure_permutation();
  std::vector<const Example*> next_batch(std::vector<std::size_t>& indices_out);

  Seq2SeqModel& model_;
  const std::vector<Example>& corpus_;
  TrainConfig cfg_;
  Digest256 digest_;

  std::vector<std::vector<double>> adam_m_;
  std::vector<std::vector<double>> adam_v_;
  std::uint64_t adam_t_ = 0;
  std::uint64_t step_ = 0;

  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> perm_;
  bool perm_valid_ = false;

  LossWindow token_window_;
  LossWindow sentence_window_;
};

}  // namespace trunclab
