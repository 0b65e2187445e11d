#include "trunclab/decode.hpp"

#include <cmath>
#include <functional>

#include "doctest.h"
#include "trunclab/errors.hpp"

using namespace trunclab;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.vocab_size = 8;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 2;
  cfg.d_ff = 8;
  cfg.max_src_len = 10;
  cfg.max_tgt_len = 10;
  return cfg;
}

const Tokens kSrc = {4, 5, 6};

// Reference scoring: replay the whole sequence through a fresh decoder.
double replay_score(const Seq2SeqModel& model, const Tokens& seq) {
  IncrementalDecoder dec(model, kSrc);
  double sum = 0.0;
  const std::vector<double>* lp = &dec.step(seq[0]);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    sum += (*lp)[seq[i]];
    if (i + 1 < seq.size()) lp = &dec.step(seq[i]);
  }
  return sum;
}

}  // namespace

TEST_CASE("incremental decoder reproduces teacher-forced log-probs") {
  const Seq2SeqModel model(tiny_cfg(), 41);
  const Tokens tgt = {kBosId, 5, 6, 7, 4, kEosId};

  Tape tape;
  auto bound = model.bind(tape, false);
  auto fr = model.forward_teacher_forced(tape, bound, kSrc, tgt);
  const Tensor& logits = tape.value(fr.logits);

  IncrementalDecoder dec(model, kSrc);
  for (std::size_t pos = 0; pos + 1 < tgt.size(); ++pos) {
    const std::vector<double>& lp = dec.step(tgt[pos]);
    // row pos of the tape logits, log-softmaxed by hand
    double mx = logits.at(pos, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(pos, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) sum += std::exp(logits.at(pos, c) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < logits.cols(); ++c)
      CHECK(lp[c] == doctest::Approx(logits.at(pos, c) - lse).epsilon(1e-9));
  }
  CHECK(dec.position() == tgt.size() - 1);
}

TEST_CASE("incremental decoder enforces its limits") {
  const Seq2SeqModel model(tiny_cfg(), 41);
  IncrementalDecoder dec(model, kSrc);
  CHECK_THROWS_AS(dec.step(99), config_error);
  // teacher forcing scores max_tgt_len - 1 positions; the decoder accepts
  // exactly that many steps and rejects the next one
  for (std::size_t i = 0; i + 1 < tiny_cfg().max_tgt_len; ++i) dec.step(4);
  CHECK_THROWS_AS(dec.step(4), config_error);
  CHECK_THROWS_AS(IncrementalDecoder(model, {}), config_error);
}

TEST_CASE("a uniform model makes greedy pick the lowest allowed id") {
  Seq2SeqModel model(tiny_cfg(), 1);
  for (const std::string& name : model.manifest()) model.param(name).fill(0.0);
  DecodeConfig cfg;
  cfg.max_len = 4;

  // every token ties, PAD and BOS are banned, so EOS (id 2) wins instantly
  Decoded d = greedy_decode(model, kSrc, cfg);
  CHECK(d.tokens == Tokens{kBosId, kEosId});
  CHECK(d.finished);

  cfg.min_len = 1;  // now EOS is banned for one step and SEP (id 3) wins
  d = greedy_decode(model, kSrc, cfg);
  CHECK(d.tokens == Tokens{kBosId, kSepId, kEosId});
  CHECK(d.finished);
}

TEST_CASE("no-repeat constraint walks the uniform model up the id range") {
  Seq2SeqModel model(tiny_cfg(), 1);
  for (const std::string& name : model.manifest()) model.param(name).fill(0.0);
  DecodeConfig cfg;
  cfg.max_len = 3;
  cfg.min_len = 3;
  cfg.no_repeat_ngram = 1;
  Decoded d = greedy_decode(model, kSrc, cfg);
  // unigram bans forbid reuse: 3, then 4, then 5; the cap leaves it open
  CHECK(d.tokens == Tokens{kBosId, 3, 4, 5});
  CHECK_FALSE(d.finished);

  // beam search may still close with EOS at the cap
  cfg.beam_size = 2;
  Decoded b = beam_decode(model, kSrc, cfg);
  CHECK(b.finished);
  CHECK(b.tokens.back() == kEosId);
  CHECK(b.tokens.size() == 5);  // BOS + three content + EOS
}

TEST_CASE("greedy matches a hand-rolled argmax rollout") {
  const Seq2SeqModel model(tiny_cfg(), 57);
  DecodeConfig cfg;
  cfg.max_len = 5;
  cfg.min_len = 2;
  cfg.no_repeat_ngram = 2;
  const Decoded d = greedy_decode(model, kSrc, cfg);

  Tokens seq = {kBosId};
  IncrementalDecoder dec(model, kSrc);
  const std::vector<double>* lp = &dec.step(kBosId);
  bool finished = false;
  while (true) {
    const Tokens tail(seq.begin() + 1, seq.end());
    std::vector<std::uint8_t> banned =
        banned_next_tokens(tail, cfg.no_repeat_ngram, tiny_cfg().vocab_size);
    banned[kPadId] = banned[kBosId] = 1;
    if (tail.size() < cfg.min_len) banned[kEosId] = 1;
    int best = -1;
    for (std::uint32_t t = 0; t < tiny_cfg().vocab_size; ++t)
      if (!banned[t] && (best < 0 || (*lp)[t] > (*lp)[best])) best = static_cast<int>(t);
    REQUIRE(best >= 0);
    seq.push_back(static_cast<std::uint32_t>(best));
    if (best == static_cast<int>(kEosId)) {
      finished = true;
      break;
    }
    if (seq.size() - 1 >= cfg.max_len) break;
    lp = &dec.step(static_cast<std::uint32_t>(best));
  }
  CHECK(d.tokens == seq);
  CHECK(d.finished == finished);
}

TEST_CASE("beam with width one equals greedy when decoding finishes") {
  ModelConfig mc = tiny_cfg();
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    Seq2SeqModel model(mc, seed);
    model.param("out.b")[kEosId] += 2.0;  // encourage natural finishes
    DecodeConfig cfg;
    cfg.max_len = 6;
    cfg.min_len = 1;
    const Decoded g = greedy_decode(model, kSrc, cfg);
    DecodeConfig bc = cfg;
    bc.beam_size = 1;
    const Decoded b = beam_decode(model, kSrc, bc);
    REQUIRE(g.finished);
    CHECK(b.finished);
    CHECK(b.tokens == g.tokens);
    CHECK(b.score == doctest::Approx(g.score).epsilon(1e-12));
  }
}

TEST_CASE("banned continuations reproduce known n-gram bans") {
  const Tokens seq = {4, 5, 4};
  auto b2 = banned_next_tokens(seq, 2, 8);
  CHECK(b2 == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 0, 0});  // 4 -> 5 seen
  auto b1 = banned_next_tokens(seq, 1, 8);
  CHECK(b1 == std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 0, 0});  // any reuse
  CHECK(banned_next_tokens(seq, 0, 8) == std::vector<std::uint8_t>(8, 0));
  CHECK(banned_next_tokens(seq, 4, 8) == std::vector<std::uint8_t>(8, 0));  // too short
  auto b3 = banned_next_tokens({4, 5, 6, 4, 5}, 3, 8);
  CHECK(b3 == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 0, 1, 0});  // 4 5 -> 6 seen
}

TEST_CASE("beam search agrees with exhaustive enumeration") {
  const Seq2SeqModel model(tiny_cfg(), 71);
  for (double penalty : {0.0, 1.0}) {
    for (std::size_t no_repeat : {std::size_t{0}, std::size_t{2}}) {
      DecodeConfig cfg;
      cfg.max_len = 3;
      cfg.min_len = 1;
      cfg.beam_size = 200;  // wider than the whole search tree: no pruning
      cfg.length_penalty = penalty;
      cfg.no_repeat_ngram = no_repeat;

      // enumerate every legal complete sequence and take the best
      Decoded best;
      bool have = false;
      std::function<void(Tokens&)> walk = [&](Tokens& seq) {
        const Tokens tail(seq.begin() + 1, seq.end());
        std::vector<std::uint8_t> banned =
            banned_next_tokens(tail, cfg.no_repeat_ngram, tiny_cfg().vocab_size);
        banned[kPadId] = banned[kBosId] = 1;
        if (tail.size() < cfg.min_len) banned[kEosId] = 1;
        const bool at_cap = tail.size() >= cfg.max_len;  // only EOS still fits
        for (std::uint32_t t = 2; t < tiny_cfg().vocab_size; ++t) {
          if (banned[t] || (at_cap && t != kEosId)) continue;
          seq.push_back(t);
          if (t == kEosId) {
            const double sum = replay_score(model, seq);
            const double len = static_cast<double>(seq.size() - 1);
            Decoded d;
            d.tokens = seq;
            d.finished = true;
            d.score = sum / std::pow(len, cfg.length_penalty);
            const bool wins = !have || d.score > best.score ||
                              (d.score == best.score &&
                               (d.tokens.size() < best.tokens.size() ||
                                (d.tokens.size() == best.tokens.size() && d.tokens < best.tokens)));
            if (wins) {
              best = d;
              have = true;
            }
          } else {
            walk(seq);
          }
          seq.pop_back();
        }
      };
      Tokens seq = {kBosId};
      walk(seq);
      REQUIRE(have);

      const Decoded b = beam_decode(model, kSrc, cfg);
      CHECK(b.finished);
      CHECK(b.tokens == best.tokens);
      CHECK(b.score == doctest::Approx(best.score).epsilon(1e-12));
    }
  }
}

TEST_CASE("decode dispatch and config validation") {
  const Seq2SeqModel model(tiny_cfg(), 5);
  DecodeConfig cfg;
  cfg.max_len = 3;
  const Decoded g = decode(model, kSrc, cfg);  // beam 1, penalty 0: greedy path
  cfg.beam_size = 3;
  const Decoded b = decode(model, kSrc, cfg);
  CHECK(g.tokens.size() >= 2);
  CHECK(b.tokens.size() >= 2);

  DecodeConfig bad = cfg;
  bad.max_len = 0;
  CHECK_THROWS_AS(validate_decode_config(bad, model.config()), config_error);
  bad = cfg;
  bad.min_len = 9;
  CHECK_THROWS_AS(validate_decode_config(bad, model.config()), config_error);
  bad = cfg;
  bad.beam_size = 0;
  CHECK_THROWS_AS(validate_decode_config(bad, model.config()), config_error);
  bad = cfg;
  bad.length_penalty = -1.0;
  CHECK_THROWS_AS(validate_decode_config(bad, model.config()), config_error);
}

TEST_CASE("beam search is deterministic") {
  const Seq2SeqModel model(tiny_cfg(), 90);
  DecodeConfig cfg;
  cfg.max_len = 4;
  cfg.min_len = 1;
  cfg.beam_size = 4;
  cfg.length_penalty = 0.7;
  const Decoded a = beam_decode(model, kSrc, cfg);
  const Decoded d = beam_decode(model, kSrc, cfg);
  CHECK(a.tokens == d.tokens);
  CHECK(a.score == d.score);
  CHECK(a.finished == d.finished);
}
