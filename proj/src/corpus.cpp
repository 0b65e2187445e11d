#include "trunclab/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "trunclab/errors.hpp"
#include "trunclab/metrics.hpp"

namespace trunclab {

namespace {

constexpr char kCacheMagic[4] = {'T', 'L', 'C', 'X'};
constexpr std::uint32_t kCacheVersion = 1;

void validate_synth_config(const Vocabulary& vocab, const SynthConfig& cfg) {
  if (cfg.article_sentences == 0) throw config_error("synth: article_sentences must be >= 1");
  if (cfg.sentence_len == 0) throw config_error("synth: sentence_len must be >= 1");
  if (cfg.sentence_len > vocab.n_content())
    throw config_error("synth: sentence_len exceeds the content pool; sentences hold distinct tokens");
  if (cfg.summary_sentences == 0 || cfg.summary_sentences > cfg.article_sentences)
    throw config_error("synth: summary_sentences must be in [1, article_sentences]");
  if (!(cfg.extractive_prob >= 0.0 && cfg.extractive_prob <= 1.0))
    throw config_error("synth: extractive_prob must be in [0, 1]");
  if (!(cfg.halluc_rate >= 0.0 && cfg.halluc_rate <= 1.0))
    throw config_error("synth: halluc_rate must be in [0, 1]");
  if (cfg.summary_sentences * cfg.sentence_len < 2)
    throw config_error("synth: summaries need at least two content tokens");
}

}  // namespace

Vocabulary::Vocabulary(std::size_t n_content, std::size_t n_halluc)
    : n_content_(n_content), n_halluc_(n_halluc) {
  if (n_content == 0) throw config_error("vocab: n_content must be >= 1");
  const std::size_t total = kNumSpecials + 2 * n_content + n_halluc;
  if (total > std::numeric_limits<std::uint32_t>::max())
    throw config_error("vocab: id space overflow");
  total_ = static_cast<std::uint32_t>(total);
}

std::uint32_t Vocabulary::pool_id(std::size_t index) const {
  if (index >= n_content_) throw std::out_of_range("pool_id index");
  return kNumSpecials + static_cast<std::uint32_t>(index);
}

std::uint32_t Vocabulary::halluc_id(std::size_t index) const {
  if (index >= n_halluc_) throw std::out_of_range("halluc_id index");
  return kNumSpecials + static_cast<std::uint32_t>(2 * n_content_ + index);
}

std::uint32_t Vocabulary::paraphrase_of(std::uint32_t pool) const {
  if (!is_article_pool(pool)) throw std::out_of_range("paraphrase_of: not a pool id");
  return pool + static_cast<std::uint32_t>(n_content_);
}

std::optional<std::uint32_t> Vocabulary::paraphrase_inverse(std::uint32_t id) const {
  if (!is_paraphrase(id)) return std::nullopt;
  return id - static_cast<std::uint32_t>(n_content_);
}

const char* token_label_name(TokenLabel l) {
  switch (l) {
    case TokenLabel::copied: return "copied";
    case TokenLabel::paraphrased: return "paraphrased";
    case TokenLabel::hallucinated: return "hallucinated";
    case TokenLabel::special: return "special";
  }
  return "?";
}

std::vector<Example> synthesize_corpus(const Vocabulary& vocab, const SynthConfig& cfg) {
  validate_synth_config(vocab, cfg);
  Rng rng(cfg.seed);
  std::vector<Example> out;
  out.reserve(cfg.n_examples);

  std::vector<std::uint8_t> used(vocab.n_content(), 0);
  for (std::size_t ex = 0; ex < cfg.n_examples; ++ex) {
    Example e;
    std::vector<Tokens> sentences(cfg.article_sentences);
    for (std::size_t s = 0; s < cfg.article_sentences; ++s) {
      std::fill(used.begin(), used.end(), 0);
      Tokens& sent = sentences[s];
      sent.reserve(cfg.sentence_len);
      while (sent.size() < cfg.sentence_len) {
        const std::uint64_t pick = rng.uniform_int(vocab.n_content());
        if (used[pick]) continue;  // tokens within a sentence are distinct
        used[pick] = 1;
        sent.push_back(vocab.pool_id(pick));
      }
      if (s > 0) e.article.push_back(kSepId);
      e.article.insert(e.article.end(), sent.begin(), sent.end());
    }

    const std::size_t span = cfg.article_sentences - cfg.summary_sentences + 1;
    const std::size_t start = static_cast<std::size_t>(rng.uniform_int(span));

    e.reference.push_back(kBosId);
    e.labels.push_back(TokenLabel::special);
    for (std::size_t k = 0; k < cfg.summary_sentences; ++k) {
      if (k > 0) {
        e.reference.push_back(kSepId);
        e.labels.push_back(TokenLabel::special);
      }
      const Tokens& src = sentences[start + k];
      const bool copy = rng.uniform() < cfg.extractive_prob;
      for (std::uint32_t tok : src) {
        std::uint32_t emit = copy ? tok : vocab.paraphrase_of(tok);
        TokenLabel label = copy ? TokenLabel::copied : TokenLabel::paraphrased;
        if (vocab.n_halluc() > 0 && rng.uniform() < cfg.halluc_rate) {
          emit = vocab.halluc_id(rng.uniform_int(vocab.n_halluc()));
          label = TokenLabel::hallucinated;
        }
        e.reference.push_back(emit);
        e.labels.push_back(label);
      }
    }
    e.reference.push_back(kEosId);
    e.labels.push_back(TokenLabel::special);

    e.bigram_overlap = ngram_overlap(e.reference, e.article, 2).value();
    out.push_back(std::move(e));
  }
  return out;
}

bool support_oracle(std::uint32_t token, const Tokens& article, const Vocabulary& vocab) {
  if (vocab.is_special(token)) return true;
  for (std::uint32_t a : article)
    if (a == token) return true;
  if (auto inv = vocab.paraphrase_inverse(token)) {
    for (std::uint32_t a : article)
      if (a == *inv) return true;
  }
  return false;
}

SupportSet::SupportSet(const Tokens& article, const Vocabulary& vocab)
    : table_(vocab.size(), 0) {
  for (std::uint32_t id = 0; id < kNumSpecials; ++id) table_[id] = 1;
  for (std::uint32_t a : article) {
    if (a >= table_.size()) throw format_error("support set: token outside vocabulary");
    table_[a] = 1;
    if (vocab.is_article_pool(a)) table_[vocab.paraphrase_of(a)] = 1;
  }
}

QuartileSplit overlap_quartiles(const std::vector<Example>& corpus) {
  const std::size_t n = corpus.size();
  if (n == 0) throw config_error("overlap_quartiles: empty corpus");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].bigram_overlap > corpus[b].bigram_overlap;
  });
  const std::size_t q = (n + 3) / 4;  // ceil(n/4)
  QuartileSplit split;
  split.top.assign(order.begin(), order.begin() + q);
  split.bottom.assign(order.end() - q, order.end());
  return split;
}

namespace {

Tokens tokenize_dynamic(const std::string& text, std::vector<std::string>& table,
                        std::unordered_map<std::string, std::uint32_t>& index) {
  Tokens out;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) {
    auto it = index.find(word);
    if (it == index.end()) {
      const std::uint32_t id = kNumSpecials + static_cast<std::uint32_t>(table.size());
      it = index.emplace(word, id).first;
      table.push_back(word);
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

IngestResult ingest_triples(std::istream& in) {
  IngestResult result;
  std::unordered_map<std::string, std::uint32_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw format_error("ingest line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object())
      throw format_error("ingest line " + std::to_string(lineno) + ": expected an object");
    auto need_string = [&](const char* key) -> std::string {
      if (!j.contains(key) || !j[key].is_string())
        throw format_error("ingest line " + std::to_string(lineno) + ": missing string field \"" +
                           key + "\"");
      return j[key].get<std::string>();
    };
    Triple t;
    t.article = tokenize_dynamic(need_string("article"), result.token_table, index);
    t.reference = tokenize_dynamic(need_string("reference"), result.token_table, index);
    if (t.article.empty() || t.reference.empty())
      throw format_error("ingest line " + std::to_string(lineno) +
                         ": article and reference must be non-empty");
    if (j.contains("generated")) {
      if (!j["generated"].is_string())
        throw format_error("ingest line " + std::to_string(lineno) + ": \"generated\" must be a string");
      t.generated = tokenize_dynamic(j["generated"].get<std::string>(), result.token_table, index);
    }
    if (j.contains("step")) {
      if (!j["step"].is_number_unsigned())
        throw format_error("ingest line " + std::to_string(lineno) +
                           ": \"step\" must be a non-negative integer");
      t.step = j["step"].get<std::uint64_t>();
    }
    result.triples.push_back(std::move(t));
  }
  return result;
}

IngestResult ingest_triples_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw format_error("cannot open " + path);
  return ingest_triples(in);
}

std::string detokenize(const Tokens& tokens, const std::vector<std::string>& table) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::uint32_t id = tokens[i];
    if (id < kNumSpecials || id - kNumSpecials >= table.size())
      throw format_error("detokenize: id " + std::to_string(id) + " not in the token table");
    if (i > 0) out += ' ';
    out += table[id - kNumSpecials];
  }
  return out;
}

namespace {

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));  // little-endian hosts only, asserted below
  put_bytes(os, buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw format_error("corpus cache: truncated file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

static_assert(std::endian::native == std::endian::little,
              "cache codec assumes a little-endian host");

void put_tokens(std::ostream& os, const Tokens& t) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.size()));
  for (std::uint32_t v : t) put_le<std::uint32_t>(os, v);
}

Tokens get_tokens(std::istream& is) {
  const std::uint32_t n = get_le<std::uint32_t>(is);
  Tokens t(n);
  for (std::uint32_t i = 0; i < n; ++i) t[i] = get_le<std::uint32_t>(is);
  return t;
}

}  // namespace

void write_corpus_cache(const std::string& path, const Vocabulary& vocab,
                        const SynthConfig& cfg, const std::vector<Example>& examples) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw format_error("cannot write " + tmp);
    put_bytes(os, kCacheMagic, 4);
    put_le<std::uint32_t>(os, kCacheVersion);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(vocab.n_content()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(vocab.n_halluc()));
    put_le<std::uint64_t>(os, cfg.n_examples);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.article_sentences));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.sentence_len));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.summary_sentences));
    put_le<double>(os, cfg.extractive_prob);
    put_le<double>(os, cfg.halluc_rate);
    put_le<std::uint64_t>(os, cfg.seed);
    put_le<std::uint64_t>(os, examples.size());
    for (const Example& e : examples) {
      put_tokens(os, e.article);
      put_tokens(os, e.reference);
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.labels.size()));
      for (TokenLabel l : e.labels) put_le<std::uint8_t>(os, static_cast<std::uint8_t>(l));
      put_le<double>(os, e.bigram_overlap);
    }
    if (!os) throw format_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw format_error("cannot move " + tmp + " into place");
}

CorpusCache read_corpus_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw format_error(path + ": not a corpus cache (bad magic)");
  const std::uint32_t version = get_le<std::uint32_t>(is);
  if (version != kCacheVersion)
    throw format_error(path + ": unsupported cache version " + std::to_string(version));
  const std::uint32_t n_content = get_le<std::uint32_t>(is);
  const std::uint32_t n_halluc = get_le<std::uint32_t>(is);
  SynthConfig cfg;
  cfg.n_examples = get_le<std::uint64_t>(is);
  cfg.article_sentences = get_le<std::uint32_t>(is);
  cfg.sentence_len = get_le<std::uint32_t>(is);
  cfg.summary_sentences = get_le<std::uint32_t>(is);
  cfg.extractive_prob = get_le<double>(is);
  cfg.halluc_rate = get_le<double>(is);
  cfg.seed = get_le<std::uint64_t>(is);
  CorpusCache cache{Vocabulary(n_content, n_halluc), cfg, {}};
  const std::uint64_t n = get_le<std::uint64_t>(is);
  cache.examples.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Example e;
    e.article = get_tokens(is);
    e.reference = get_tokens(is);
    const std::uint32_t nl = get_le<std::uint32_t>(is);
    e.labels.resize(nl);
    for (std::uint32_t k = 0; k < nl; ++k)
      e.labels[k] = static_cast<TokenLabel>(get_le<std::uint8_t>(is));
    e.bigram_overlap = get_le<double>(is);
    if (e.labels.size() != e.reference.size())
      throw format_error(path + ": label/reference length mismatch");
    cache.examples.push_back(std::move(e));
  }
  return cache;
}

}  // namespace trunclab
