#pragma once

#include <cstdint>
#include <vector>

#include "trunclab/model.hpp"

namespace trunclab {

// Tape-free decoder that feeds one target token at a time against cached
// keys and values. Copyable, so beam search can branch a hypothesis by
// copying the cache instead of replaying the prefix.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Seq2SeqModel& model, const Tokens& src);

  // Consumes one token and returns log-probabilities for the next position.
  // The first call must feed BOS.
  const std::vector<double>& step(std::uint32_t token);

  std::size_t position() const { return pos_; }  // tokens consumed so far

 private:
  struct LayerCache {
    std::vector<double> self_k, self_v;  // [t, d_model], grown per step
    Tensor cross_k, cross_v;             // [src_len, d_model], fixed
  };

  const Seq2SeqModel* model_;
  Tensor enc_out_;
  std::vector<LayerCache> layers_;
  std::vector<double> last_logprobs_;
  std::size_t pos_ = 0;
};

struct DecodeConfig {
  std::size_t max_len = 16;  // content tokens, BOS and EOS not counted
  std::size_t min_len = 0;   // EOS is banned before this many content tokens
  std::size_t beam_size = 1;
  double length_penalty = 0.0;     // scores divide by len^penalty, len = scored tokens
  std::size_t no_repeat_ngram = 0; // 0 disables the constraint
};

void validate_decode_config(const DecodeConfig& cfg, const ModelConfig& model_cfg);

struct Decoded {
  Tokens tokens;        // BOS ... [EOS when finished]
  double score = 0.0;   // length-normalized sum of token log-probs
  bool finished = false;
};

// Tokens that may not follow seq (the emitted sequence after BOS) without
// recreating an n-gram already present in it. PAD and BOS are not handled
// here; decoding bans them unconditionally.
std::vector<std::uint8_t> banned_next_tokens(const Tokens& seq, std::size_t n,
                                             std::size_t vocab_size);

// Argmax rollout; ties go to the lowest token id. Equivalent to beam search
// with beam_size 1 and length_penalty 0.
Decoded greedy_decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg);

// Standard beam search. Each step expands every live hypothesis over the
// allowed vocabulary, keeps the beam_size best continuations, and moves
// EOS continuations to a finished pool (capped at beam_size). Search stops
// when the pool is full, nothing is live, or the length cap is reached.
// The winner maximizes score / len^length_penalty with ties broken by
// earlier finish and then lexicographically smaller tokens. If nothing
// finished, the best live hypothesis is returned with finished = false.
Decoded beam_decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg);

Decoded decode(const Seq2SeqModel& model, const Tokens& src, const DecodeConfig& cfg);

}  // namespace trunclab
