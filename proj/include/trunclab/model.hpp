#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "trunclab/corpus.hpp"
#include "trunclab/tensor.hpp"

namespace trunclab {

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_ff = 128;
  std::size_t max_src_len = 64;
  std::size_t max_tgt_len = 24;
};

void validate_model_config(const ModelConfig& cfg);

// Sinusoidal table, rows are positions. Frozen constants, never trained.
Tensor positional_encoding(std::size_t len, std::size_t d_model);

// Additive attention mask: 0 on and below the diagonal, a large negative
// number above it.
Tensor causal_mask(std::size_t len);

// Pre-norm transformer encoder-decoder over f64. Parameters live here as
// plain tensors; each forward binds them onto a tape as leaves so the same
// weights can serve any number of tapes.
class Seq2SeqModel {
 public:
  Seq2SeqModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t n_params() const;
  const std::vector<std::string>& manifest() const { return manifest_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  // Parameter leaves registered on one tape, aligned with the manifest.
  struct Bound {
    std::vector<Var> vars;
    Var at(std::size_t manifest_index) const { return vars.at(manifest_index); }
  };
  Bound bind(Tape& tape, bool requires_grad = true) const;

  struct ForwardResult {
    Var losses;  // rank-1, length |tgt| - 1; position j scores tgt[j + 1]
    Var logits;  // [|tgt| - 1, vocab]
  };
  // Teacher forcing at natural length: the decoder consumes tgt[0 .. n-2]
  // and is scored against tgt[1 .. n-1]. No pads are involved.
  ForwardResult forward_teacher_forced(Tape& tape, const Bound& bound, const Tokens& src,
                                       const Tokens& tgt) const;

  struct BatchForward {
    Var flat_losses;                    // rank-1, rows * cols, example-major
    std::vector<std::uint8_t> pad_mask; // 1 marks filler behind short examples
    std::size_t rows = 0;               // batch size
    std::size_t cols = 0;               // longest reference length - 1
  };
  // Each example runs at its own length; rows are right-padded with
  // zero-valued filler so the flattened losses form a rectangle.
  BatchForward forward_batch(Tape& tape, const Bound& bound,
                             const std::vector<const Example*>& batch) const;

  // Encoder output [|src|, d_model] for the no-tape inference path.
  Tensor encode_plain(const Tokens& src) const;

 private:
  struct Slot {
    std::string name;
    Tensor value;
  };

  std::size_t idx(const std::string& name) const;
  Var attention(Tape& tape, const Bound& b, const std::string& prefix, Var queries_in,
                Var keys_in, bool causal) const;
  Var feed_forward(Tape& tape, const Bound& b, const std::string& prefix, Var x) const;
  Var encode(Tape& tape, const Bound& b, const Tokens& src) const;
  Var embed(Tape& tape, const Bound& b, const Tokens& ids) const;

  ModelConfig cfg_;
  std::vector<Slot> slots_;
  std::vector<std::string> manifest_;
  std::unordered_map<std::string, std::size_t> index_;

  friend class IncrementalDecoder;
};

}  // namespace trunclab
