#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trunclab/corpus.hpp"

namespace trunclab {

class Seq2SeqModel;

// Removes PAD/BOS/EOS/SEP before any n-gram bookkeeping.
Tokens strip_specials(const Tokens& tokens);

// Fraction of distinct summary n-grams that also occur in the article,
// computed after stripping specials from both sides. Empty after stripping
// (or summary shorter than n) has no defined value.
std::optional<double> ngram_overlap(const Tokens& summary, const Tokens& article, std::size_t n);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Clipped-count n-gram F1. Counts are multiset counts; each candidate n-gram
// is credited at most as many times as it appears in the reference.
std::optional<RougeScore> rouge_n(const Tokens& candidate, const Tokens& reference, std::size_t n);

// Fraction of generated sentences containing at least one unsupported token.
// Sentences are the maximal runs of non-special tokens between separators;
// empty runs are skipped. No sentences -> no defined value.
std::optional<double> sentence_error_rate(const Tokens& generated, const Tokens& article,
                                          const Vocabulary& vocab);

// Fraction of non-special generated tokens that fail the support oracle.
std::optional<double> unsupported_rate(const Tokens& generated, const Tokens& article,
                                       const Vocabulary& vocab);

// Per-reference-token model probabilities, aligned with the label vector.
// Record i covers example i's reference positions 1..len-1 (every position
// the model scores; BOS is conditioning only and is never scored).
struct TokenProbRecord {
  std::vector<double> probs;
  std::vector<TokenLabel> labels;
};

std::vector<TokenProbRecord> reference_token_probabilities(const Seq2SeqModel& model,
                                                           const std::vector<Example>& examples);

// Geometric mean of the scored reference-token probabilities of one example:
// exp(mean log p). Probabilities of zero would map to -inf logs and are a
// numeric error upstream, so the result is always in (0, 1].
double summary_probability(const Seq2SeqModel& model, const Example& example);

struct SummaryProbStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t n = 0;
};

// Quartiles use the same nearest-rank convention as the truncation threshold.
SummaryProbStats summary_probability_stats(const std::vector<double>& per_example_probs);

// Mean probability per label class across records; classes absent from every
// record are left unset. "factual" pools copied and paraphrased tokens.
struct LabelMeanProbs {
  std::optional<double> copied;
  std::optional<double> paraphrased;
  std::optional<double> hallucinated;
  std::optional<double> factual;
};

LabelMeanProbs label_mean_probabilities(const std::vector<TokenProbRecord>& records);

enum class Phase : std::uint8_t { train = 0, probe = 1 };

const char* phase_name(Phase p);

struct MetricRecord {
  std::uint64_t step = 0;
  Phase phase = Phase::train;
  std::string metric;
  std::string split;  // "train" or "dev"
  double value = 0.0;
};

// Closed registry: every record written to a trajectory must use one of
// these names, a known split, and a finite value.
const std::vector<std::string>& metric_registry();
bool is_registered_metric(std::string_view name);
void validate_metric_record(const MetricRecord& rec);

// One CSV row "step,phase,metric,split,value" with the value printed at
// full round-trip precision (%.17g).
std::string metric_csv_row(const MetricRecord& rec);
extern const char kTrajectoryCsvHeader[];  // "step,phase,metric,split,value"

}  // namespace trunclab
