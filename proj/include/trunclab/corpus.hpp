#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trunclab/rng.hpp"

namespace trunclab {

using Tokens = std::vector<std::uint32_t>;

inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kBosId = 1;
inline constexpr std::uint32_t kEosId = 2;
inline constexpr std::uint32_t kSepId = 3;
inline constexpr std::uint32_t kNumSpecials = 4;

// Token id layout, fixed and contiguous:
//   [0,4)                           specials (PAD, BOS, EOS, SEP)
//   [4, 4+n_content)                article pool; articles sample only here
//   [4+n_content, 4+2*n_content)    paraphrase range, bijective image of the pool
//   [4+2*n_content, ...+n_halluc)   hallucination ids; never appear in articles
// The paraphrase map sends pool id a to a + n_content, so its range is
// disjoint from the article-sampling pool by construction.
class Vocabulary {
 public:
  Vocabulary(std::size_t n_content, std::size_t n_halluc);

  std::uint32_t size() const { return total_; }
  std::size_t n_content() const { return n_content_; }
  std::size_t n_halluc() const { return n_halluc_; }

  bool is_special(std::uint32_t id) const { return id < kNumSpecials; }
  bool is_article_pool(std::uint32_t id) const {
    return id >= kNumSpecials && id < kNumSpecials + n_content_;
  }
  bool is_paraphrase(std::uint32_t id) const {
    return id >= kNumSpecials + n_content_ && id < kNumSpecials + 2 * n_content_;
  }
  bool is_halluc(std::uint32_t id) const {
    return id >= kNumSpecials + 2 * n_content_ && id < total_;
  }

  std::uint32_t pool_id(std::size_t index) const;    // index in [0, n_content)
  std::uint32_t halluc_id(std::size_t index) const;  // index in [0, n_halluc)

  std::uint32_t paraphrase_of(std::uint32_t pool) const;
  std::optional<std::uint32_t> paraphrase_inverse(std::uint32_t id) const;

 private:
  std::size_t n_content_;
  std::size_t n_halluc_;
  std::uint32_t total_;
};

enum class TokenLabel : std::uint8_t {
  copied = 0,
  paraphrased = 1,
  hallucinated = 2,
  special = 3,
};

const char* token_label_name(TokenLabel l);

struct SynthConfig {
  std::size_t n_examples = 2000;
  std::size_t article_sentences = 5;
  std::size_t sentence_len = 5;
  std::size_t summary_sentences = 1;
  double extractive_prob = 0.5;  // per-sentence probability of a verbatim copy
  double halluc_rate = 0.0;      // per-token probability of a hallucination swap
  std::uint64_t seed = 1;
};

struct Example {
  Tokens article;                  // sentences joined by SEP, no BOS/EOS
  Tokens reference;                // BOS <sent> SEP <sent> ... EOS
  std::vector<TokenLabel> labels;  // aligned with reference
  double bigram_overlap = 0.0;     // ngram_overlap(reference, article, 2)
};

// Deterministic: identical (vocab, cfg) pairs produce bit-identical corpora.
// References summarize a contiguous window of article sentences, chosen
// uniformly; each window sentence is copied verbatim with prob
// extractive_prob, otherwise mapped token-wise through the paraphrase map;
// afterwards every content token is independently replaced by a uniformly
// random hallucination id with prob halluc_rate.
std::vector<Example> synthesize_corpus(const Vocabulary& vocab, const SynthConfig& cfg);

// True iff the token is a special, occurs in the article, or is the
// paraphrase of a token occurring in the article.
bool support_oracle(std::uint32_t token, const Tokens& article, const Vocabulary& vocab);

// Precomputed per-article support table for repeated queries.
class SupportSet {
 public:
  SupportSet(const Tokens& article, const Vocabulary& vocab);
  bool supported(std::uint32_t token) const {
    return token < table_.size() && table_[token] != 0;
  }

 private:
  std::vector<std::uint8_t> table_;
};

struct QuartileSplit {
  std::vector<std::size_t> top;     // indices, highest bigram overlap first
  std::vector<std::size_t> bottom;  // indices, lowest bigram overlap last
};

// Top and bottom ceil(n/4) example indices by cached bigram overlap.
// Sorting is stable: ties keep original corpus order, so an all-equal corpus
// puts the first ceil(n/4) examples on top and the last ceil(n/4) on the
// bottom.
QuartileSplit overlap_quartiles(const std::vector<Example>& corpus);

struct Triple {
  Tokens article;
  Tokens reference;
  std::optional<Tokens> generated;
  std::optional<std::uint64_t> step;
};

struct IngestResult {
  std::vector<Triple> triples;
  std::vector<std::string> token_table;  // dynamic ids start at kNumSpecials
};

// Line-delimited JSON objects with string fields "article" and "reference",
// optional string "generated", optional non-negative integer "step".
// Whitespace tokenization; ids are assigned in first-seen order starting at
// kNumSpecials so metric special-stripping never eats real words.
IngestResult ingest_triples(std::istream& in);
IngestResult ingest_triples_file(const std::string& path);

std::string detokenize(const Tokens& tokens, const std::vector<std::string>& table);

// Corpus cache (synthetic splits). Little-endian; magic "TLCX", u32 version,
// vocab sizes, synth config, then length-prefixed token arrays (u32 ids) and
// label arrays (u8).
void write_corpus_cache(const std::string& path, const Vocabulary& vocab,
                        const SynthConfig& cfg, const std::vector<Example>& examples);

struct CorpusCache {
  Vocabulary vocab;
  SynthConfig cfg;
  std::vector<Example> examples;
};

CorpusCache read_corpus_cache(const std::string& path);

}  // namespace trunclab
