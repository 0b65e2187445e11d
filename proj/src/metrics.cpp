#include "trunclab/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "trunclab/errors.hpp"
#include "trunclab/truncation.hpp"

namespace trunclab {

namespace {

constexpr std::size_t kMaxNgram = 8;

struct Ngram {
  std::array<std::uint32_t, kMaxNgram> ids;
  std::size_t n;
  bool operator==(const Ngram& o) const { return n == o.n && ids == o.ids; }
};

struct NgramHash {
  std::size_t operator()(const Ngram& g) const {
    std::uint64_t h = 0x9E3779B97F4A7C15ull ^ g.n;
    for (std::size_t i = 0; i < g.n; ++i) {
      h ^= g.ids[i];
      h *= 0x100000001B3ull;
      h ^= h >> 29;
    }
    return static_cast<std::size_t>(h);
  }
};

using NgramCounts = std::unordered_map<Ngram, std::size_t, NgramHash>;

void check_n(std::size_t n) {
  if (n == 0 || n > kMaxNgram) throw config_error("ngram order must be in [1, 8]");
}

NgramCounts count_ngrams(const Tokens& stripped, std::size_t n) {
  NgramCounts counts;
  if (stripped.size() < n) return counts;
  for (std::size_t i = 0; i + n <= stripped.size(); ++i) {
    Ngram g{};
    g.n = n;
    for (std::size_t k = 0; k < n; ++k) g.ids[k] = stripped[i + k];
    ++counts[g];
  }
  return counts;
}

}  // namespace

Tokens strip_specials(const Tokens& tokens) {
  Tokens out;
  out.reserve(tokens.size());
  for (std::uint32_t t : tokens)
    if (t >= kNumSpecials) out.push_back(t);
  return out;
}

std::optional<double> ngram_overlap(const Tokens& summary, const Tokens& article, std::size_t n) {
  check_n(n);
  const Tokens s = strip_specials(summary);
  if (s.size() < n) return std::nullopt;
  const NgramCounts sum_grams = count_ngrams(s, n);
  const NgramCounts art_grams = count_ngrams(strip_specials(article), n);
  std::size_t hit = 0;
  for (const auto& [gram, cnt] : sum_grams) {
    (void)cnt;
    if (art_grams.count(gram)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(sum_grams.size());
}

std::optional<RougeScore> rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  check_n(n);
  const Tokens c = strip_specials(candidate);
  const Tokens r = strip_specials(reference);
  if (c.size() < n || r.size() < n) return std::nullopt;
  const NgramCounts cand = count_ngrams(c, n);
  const NgramCounts ref = count_ngrams(r, n);
  std::size_t clipped = 0, cand_total = 0, ref_total = 0;
  for (const auto& [gram, cnt] : cand) {
    cand_total += cnt;
    auto it = ref.find(gram);
    if (it != ref.end()) clipped += std::min(cnt, it->second);
  }
  for (const auto& [gram, cnt] : ref) {
    (void)gram;
    ref_total += cnt;
  }
  RougeScore score;
  score.precision = static_cast<double>(clipped) / static_cast<double>(cand_total);
  score.recall = static_cast<double>(clipped) / static_cast<double>(ref_total);
  score.f1 = (score.precision + score.recall) > 0.0
                 ? 2.0 * score.precision * score.recall / (score.precision + score.recall)
                 : 0.0;
  return score;
}

std::optional<double> sentence_error_rate(const Tokens& generated, const Tokens& article,
                                          const Vocabulary& vocab) {
  const SupportSet support(article, vocab);
  std::size_t sentences = 0, bad = 0;
  bool in_sentence = false, sentence_bad = false;
  auto close_sentence = [&] {
    if (in_sentence) {
      ++sentences;
      if (sentence_bad) ++bad;
    }
    in_sentence = false;
    sentence_bad = false;
  };
  for (std::uint32_t t : generated) {
    if (vocab.is_special(t)) {
      close_sentence();  // any special ends the current run; empty runs vanish
      continue;
    }
    in_sentence = true;
    if (!support.supported(t)) sentence_bad = true;
  }
  close_sentence();
  if (sentences == 0) return std::nullopt;
  return static_cast<double>(bad) / static_cast<double>(sentences);
}

std::optional<double> unsupported_rate(const Tokens& generated, const Tokens& article,
                                       const Vocabulary& vocab) {
  const SupportSet support(article, vocab);
  std::size_t total = 0, bad = 0;
  for (std::uint32_t t : generated) {
    if (vocab.is_special(t)) continue;
    ++total;
    if (!support.supported(t)) ++bad;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(bad) / static_cast<double>(total);
}

SummaryProbStats summary_probability_stats(const std::vector<double>& per_example_probs) {
  if (per_example_probs.empty()) throw config_error("summary_probability_stats: empty input");
  SummaryProbStats s;
  s.n = per_example_probs.size();
  s.min = nearest_rank_percentile(per_example_probs, 0.0);
  s.q1 = nearest_rank_percentile(per_example_probs, 25.0);
  s.median = nearest_rank_percentile(per_example_probs, 50.0);
  s.q3 = nearest_rank_percentile(per_example_probs, 75.0);
  s.max = nearest_rank_percentile(per_example_probs, 100.0);
  double sum = 0.0;
  for (double v : per_example_probs) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  return s;
}

LabelMeanProbs label_mean_probabilities(const std::vector<TokenProbRecord>& records) {
  double sums[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (const TokenProbRecord& rec : records) {
    if (rec.probs.size() != rec.labels.size())
      throw config_error("label_mean_probabilities: prob/label length mismatch");
    for (std::size_t i = 0; i < rec.probs.size(); ++i) {
      const TokenLabel l = rec.labels[i];
      if (l == TokenLabel::special) continue;
      const auto idx = static_cast<std::size_t>(l);
      sums[idx] += rec.probs[i];
      ++counts[idx];
    }
  }
  LabelMeanProbs out;
  if (counts[0]) out.copied = sums[0] / static_cast<double>(counts[0]);
  if (counts[1]) out.paraphrased = sums[1] / static_cast<double>(counts[1]);
  if (counts[2]) out.hallucinated = sums[2] / static_cast<double>(counts[2]);
  if (counts[0] + counts[1])
    out.factual = (sums[0] + sums[1]) / static_cast<double>(counts[0] + counts[1]);
  return out;
}

const char* phase_name(Phase p) { return p == Phase::train ? "train" : "probe"; }

const std::vector<std::string>& metric_registry() {
  static const std::vector<std::string> names = {
      // train telemetry, one row each per logged step
      "loss",
      "trunc_q",
      "trunc_fraction_masked",
      "trunc_mode",
      // probe: generation quality on the probe split
      "gen_ngram_overlap_1",
      "gen_ngram_overlap_2",
      "gen_ngram_overlap_3",
      "gen_ngram_overlap_4",
      "gen_rouge1_f1",
      "gen_rouge2_f1",
      "gen_ser",
      "gen_unsupported_rate",
      "gen_len_mean",
      // probe: the same overlap lens applied to the reference summaries
      "ref_ngram_overlap_1",
      "ref_ngram_overlap_2",
      "ref_ngram_overlap_3",
      "ref_ngram_overlap_4",
      // probe: reference-token probability trajectories by label
      "ref_prob_copied_mean",
      "ref_prob_paraphrased_mean",
      "ref_prob_hallucinated_mean",
      "ref_prob_factual_mean",
      // probe: summary-probability quartile boxes
      "summary_prob_top_min",
      "summary_prob_top_q1",
      "summary_prob_top_median",
      "summary_prob_top_q3",
      "summary_prob_top_max",
      "summary_prob_top_mean",
      "summary_prob_bottom_min",
      "summary_prob_bottom_q1",
      "summary_prob_bottom_median",
      "summary_prob_bottom_q3",
      "summary_prob_bottom_max",
      "summary_prob_bottom_mean",
  };
  return names;
}

bool is_registered_metric(std::string_view name) {
  for (const std::string& m : metric_registry())
    if (m == name) return true;
  return false;
}

void validate_metric_record(const MetricRecord& rec) {
  if (!is_registered_metric(rec.metric))
    throw config_error("metric record: unknown metric \"" + rec.metric + "\"");
  if (rec.split != "train" && rec.split != "dev")
    throw config_error("metric record: split must be train or dev, got \"" + rec.split + "\"");
  if (!std::isfinite(rec.value))
    throw numeric_error("metric record: non-finite value for " + rec.metric);
}

const char kTrajectoryCsvHeader[] = "step,phase,metric,split,value";

std::string metric_csv_row(const MetricRecord& rec) {
  validate_metric_record(rec);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", rec.value);
  std::string row = std::to_string(rec.step);
  row += ',';
  row += phase_name(rec.phase);
  row += ',';
  row += rec.metric;
  row += ',';
  row += rec.split;
  row += ',';
  row += buf;
  return row;
}

}  // namespace trunclab
