#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trunclab/config.hpp"
#include "trunclab/decode.hpp"
#include "trunclab/metrics.hpp"
#include "trunclab/model.hpp"

namespace trunclab {

// Seeded shuffle of [0, corpus_size), first probe_size indices kept and
// returned ascending. probe_size >= corpus_size selects everything.
std::vector<std::size_t> probe_subset(std::size_t corpus_size, std::size_t probe_size, Rng rng);

struct GenerationRow {
  Tokens generated;  // BOS ... [EOS when finished]
  bool finished = false;
  std::size_t content_len = 0;                       // after stripping specials
  std::array<std::optional<double>, 4> gen_overlap;  // generated vs article, n = slot + 1
  std::array<std::optional<double>, 4> ref_overlap;  // reference vs article, n = slot + 1
  std::optional<double> rouge1_f1;
  std::optional<double> rouge2_f1;
  std::optional<double> ser;
  std::optional<double> unsupported;
};

struct ProbeReport {
  std::uint64_t step = 0;
  DecodeConfig decode;

  // Generation quality over the dev probe subset; rows align with dev_indices.
  std::vector<std::size_t> dev_indices;
  std::vector<GenerationRow> generation;

  // Reference-token probabilities over the train probe subset; rows align
  // with train_indices.
  std::vector<std::size_t> train_indices;
  std::vector<TokenProbRecord> ref_probs;
  std::vector<double> summary_probs;  // geometric mean per example
  LabelMeanProbs label_means;
  SummaryProbStats top_stats;     // top bigram-overlap quartile of the subset
  SummaryProbStats bottom_stats;  // bottom quartile

  // Aggregate trajectory rows (phase probe), each validated against the
  // metric registry. Every value equals a recomputation from the rows above.
  std::vector<MetricRecord> records;
};

// Fixed probe harness. Subsets and quartile membership are chosen once from
// the seed, so every checkpoint of a run is probed on identical examples and
// trajectories are comparable across stages. The corpora must outlive the
// prober; use_beam off forces greedy decoding (beam 1, no length penalty)
// while keeping the configured length window and repetition constraint.
// n_threads > 1 evaluates examples on a small worker pool; results land in
// per-example slots and aggregation stays sequential, so reports are
// bit-identical at any thread count.
class Prober {
 public:
  Prober(const std::vector<Example>& train_corpus, const std::vector<Example>& dev_corpus,
         const Vocabulary& vocab, const ProbeConfig& probe_cfg, const DecodeConfig& decode_cfg,
         std::uint64_t seed, std::size_t n_threads = 1);

  const std::vector<std::size_t>& train_indices() const { return train_indices_; }
  const std::vector<std::size_t>& dev_indices() const { return dev_indices_; }
  const DecodeConfig& decode_config() const { return decode_; }

  ProbeReport probe(const Seq2SeqModel& model, std::uint64_t step) const;

 private:
  const std::vector<Example>* train_corpus_;
  const std::vector<Example>* dev_corpus_;
  Vocabulary vocab_;
  DecodeConfig decode_;
  std::size_t n_threads_;
  std::vector<std::size_t> train_indices_;
  std::vector<std::size_t> dev_indices_;
  std::vector<Example> train_probe_;  // materialized subset, quartiles index into it
  QuartileSplit quartiles_;
};

// One JSON document per probed checkpoint (step, rows, aggregates, records).
std::string probe_report_json(const ProbeReport& report);

}  // namespace trunclab
