#include "trunclab/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "json.hpp"
#include "trunclab/errors.hpp"

namespace trunclab {

namespace {

using nlohmann::json;

// Runs fn(0..n-1) on up to n_threads workers pulling indices from a shared
// counter. The caller thread works too; the first exception wins and is
// rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t n_threads,
                  const std::function<void(std::size_t)>& fn) {
  if (n_threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t spawned = std::min(n_threads, n) - 1;
  pool.reserve(spawned);
  for (std::size_t i = 0; i < spawned; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// One teacher-forced forward on a gradient-free tape; losses are the
// per-position NLLs for reference positions 1..len-1.
std::vector<double> scored_reference_losses(const Seq2SeqModel& model, const Example& ex) {
  Tape tape;
  Seq2SeqModel::Bound bound = model.bind(tape, /*requires_grad=*/false);
  Seq2SeqModel::ForwardResult fwd =
      model.forward_teacher_forced(tape, bound, ex.article, ex.reference);
  const Tensor& losses = tape.value(fwd.losses);
  return std::vector<double>(losses.data(), losses.data() + losses.size());
}

TokenProbRecord record_from_losses(const Example& ex, const std::vector<double>& losses) {
  TokenProbRecord rec;
  rec.probs.reserve(losses.size());
  for (double l : losses) rec.probs.push_back(std::exp(-l));
  rec.labels.assign(ex.labels.begin() + 1, ex.labels.end());
  return rec;
}

double geometric_mean_prob(const std::vector<double>& losses) {
  double sum = 0.0;
  for (double l : losses) sum += l;
  return std::exp(-sum / static_cast<double>(losses.size()));
}

void push_record(ProbeReport& rep, const std::string& name, const char* split, double value) {
  MetricRecord rec;
  rec.step = rep.step;
  rec.phase = Phase::probe;
  rec.metric = name;
  rec.split = split;
  rec.value = value;
  validate_metric_record(rec);
  rep.records.push_back(std::move(rec));
}

// Mean over the rows where the getter is defined; no defined rows, no record.
template <typename Get>
void push_row_mean(ProbeReport& rep, const std::string& name, Get get) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const GenerationRow& row : rep.generation) {
    if (std::optional<double> v = get(row)) {
      sum += *v;
      ++n;
    }
  }
  if (n > 0) push_record(rep, name, "dev", sum / static_cast<double>(n));
}

void push_stats(ProbeReport& rep, const std::string& prefix, const SummaryProbStats& s) {
  push_record(rep, prefix + "_min", "train", s.min);
  push_record(rep, prefix + "_q1", "train", s.q1);
  push_record(rep, prefix + "_median", "train", s.median);
  push_record(rep, prefix + "_q3", "train", s.q3);
  push_record(rep, prefix + "_max", "train", s.max);
  push_record(rep, prefix + "_mean", "train", s.mean);
}

void build_records(ProbeReport& rep) {
  for (std::size_t n = 1; n <= 4; ++n) {
    std::string name = "gen_ngram_overlap_" + std::to_string(n);
    push_row_mean(rep, name, [n](const GenerationRow& r) { return r.gen_overlap[n - 1]; });
  }
  push_row_mean(rep, "gen_rouge1_f1", [](const GenerationRow& r) { return r.rouge1_f1; });
  push_row_mean(rep, "gen_rouge2_f1", [](const GenerationRow& r) { return r.rouge2_f1; });
  push_row_mean(rep, "gen_ser", [](const GenerationRow& r) { return r.ser; });
  push_row_mean(rep, "gen_unsupported_rate",
                [](const GenerationRow& r) { return r.unsupported; });
  push_row_mean(rep, "gen_len_mean", [](const GenerationRow& r) {
    return std::optional<double>(static_cast<double>(r.content_len));
  });
  for (std::size_t n = 1; n <= 4; ++n) {
    std::string name = "ref_ngram_overlap_" + std::to_string(n);
    push_row_mean(rep, name, [n](const GenerationRow& r) { return r.ref_overlap[n - 1]; });
  }

  if (rep.label_means.copied) push_record(rep, "ref_prob_copied_mean", "train", *rep.label_means.copied);
  if (rep.label_means.paraphrased)
    push_record(rep, "ref_prob_paraphrased_mean", "train", *rep.label_means.paraphrased);
  if (rep.label_means.hallucinated)
    push_record(rep, "ref_prob_hallucinated_mean", "train", *rep.label_means.hallucinated);
  if (rep.label_means.factual)
    push_record(rep, "ref_prob_factual_mean", "train", *rep.label_means.factual);

  push_stats(rep, "summary_prob_top", rep.top_stats);
  push_stats(rep, "summary_prob_bottom", rep.bottom_stats);
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stats_json(const SummaryProbStats& s) {
  return json{{"min", s.min}, {"q1", s.q1},   {"median", s.median}, {"q3", s.q3},
              {"max", s.max}, {"mean", s.mean}, {"n", s.n}};
}

}  // namespace

std::vector<TokenProbRecord> reference_token_probabilities(const Seq2SeqModel& model,
                                                           const std::vector<Example>& examples) {
  std::vector<TokenProbRecord> out;
  out.reserve(examples.size());
  for (const Example& ex : examples)
    out.push_back(record_from_losses(ex, scored_reference_losses(model, ex)));
  return out;
}

double summary_probability(const Seq2SeqModel& model, const Example& example) {
  return geometric_mean_prob(scored_reference_losses(model, example));
}

std::vector<std::size_t> probe_subset(std::size_t corpus_size, std::size_t probe_size, Rng rng) {
  std::vector<std::size_t> idx(corpus_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  if (probe_size < idx.size()) idx.resize(probe_size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Prober::Prober(const std::vector<Example>& train_corpus, const std::vector<Example>& dev_corpus,
               const Vocabulary& vocab, const ProbeConfig& probe_cfg,
               const DecodeConfig& decode_cfg, std::uint64_t seed, std::size_t n_threads)
    : train_corpus_(&train_corpus),
      dev_corpus_(&dev_corpus),
      vocab_(vocab),
      decode_(decode_cfg),
      n_threads_(n_threads > 0 ? n_threads : 1) {
  if (train_corpus.empty() || dev_corpus.empty())
    throw config_error("probe: corpora must be non-empty");
  if (probe_cfg.probe_size == 0) throw config_error("probe: probe_size must be >= 1");
  if (!probe_cfg.use_beam) {
    decode_.beam_size = 1;
    decode_.length_penalty = 0.0;
  }
  Rng rng = Rng(seed).split("probe");
  train_indices_ = probe_subset(train_corpus.size(), probe_cfg.probe_size, rng.split("train"));
  dev_indices_ = probe_subset(dev_corpus.size(), probe_cfg.probe_size, rng.split("dev"));
  train_probe_.reserve(train_indices_.size());
  for (std::size_t i : train_indices_) train_probe_.push_back(train_corpus[i]);
  quartiles_ = overlap_quartiles(train_probe_);
}

ProbeReport Prober::probe(const Seq2SeqModel& model, std::uint64_t step) const {
  ProbeReport rep;
  rep.step = step;
  rep.decode = decode_;
  rep.dev_indices = dev_indices_;
  rep.train_indices = train_indices_;

  rep.generation.resize(dev_indices_.size());
  parallel_for(dev_indices_.size(), n_threads_, [&](std::size_t r) {
    const Example& ex = (*dev_corpus_)[dev_indices_[r]];
    Decoded dec = decode(model, ex.article, decode_);
    GenerationRow row;
    row.generated = dec.tokens;
    row.finished = dec.finished;
    row.content_len = strip_specials(dec.tokens).size();
    for (std::size_t n = 1; n <= 4; ++n) {
      row.gen_overlap[n - 1] = ngram_overlap(dec.tokens, ex.article, n);
      row.ref_overlap[n - 1] = ngram_overlap(ex.reference, ex.article, n);
    }
    if (std::optional<RougeScore> r1 = rouge_n(dec.tokens, ex.reference, 1))
      row.rouge1_f1 = r1->f1;
    if (std::optional<RougeScore> r2 = rouge_n(dec.tokens, ex.reference, 2))
      row.rouge2_f1 = r2->f1;
    row.ser = sentence_error_rate(dec.tokens, ex.article, vocab_);
    row.unsupported = unsupported_rate(dec.tokens, ex.article, vocab_);
    rep.generation[r] = std::move(row);
  });

  rep.ref_probs.resize(train_indices_.size());
  rep.summary_probs.resize(train_indices_.size());
  parallel_for(train_indices_.size(), n_threads_, [&](std::size_t r) {
    const Example& ex = (*train_corpus_)[train_indices_[r]];
    std::vector<double> losses = scored_reference_losses(model, ex);
    rep.ref_probs[r] = record_from_losses(ex, losses);
    rep.summary_probs[r] = geometric_mean_prob(losses);
  });
  rep.label_means = label_mean_probabilities(rep.ref_probs);

  std::vector<double> top, bottom;
  top.reserve(quartiles_.top.size());
  bottom.reserve(quartiles_.bottom.size());
  for (std::size_t i : quartiles_.top) top.push_back(rep.summary_probs[i]);
  for (std::size_t i : quartiles_.bottom) bottom.push_back(rep.summary_probs[i]);
  rep.top_stats = summary_probability_stats(top);
  rep.bottom_stats = summary_probability_stats(bottom);

  build_records(rep);
  return rep;
}

std::string probe_report_json(const ProbeReport& rep) {
  json j;
  j["step"] = rep.step;
  j["decode"] = json{{"max_len", rep.decode.max_len},
                     {"min_len", rep.decode.min_len},
                     {"beam_size", rep.decode.beam_size},
                     {"length_penalty", rep.decode.length_penalty},
                     {"no_repeat_ngram", rep.decode.no_repeat_ngram}};

  json dev_rows = json::array();
  for (std::size_t r = 0; r < rep.generation.size(); ++r) {
    const GenerationRow& row = rep.generation[r];
    json gen_ov = json::array();
    json ref_ov = json::array();
    for (std::size_t s = 0; s < 4; ++s) {
      gen_ov.push_back(opt_json(row.gen_overlap[s]));
      ref_ov.push_back(opt_json(row.ref_overlap[s]));
    }
    dev_rows.push_back(json{{"index", rep.dev_indices[r]},
                            {"generated", row.generated},
                            {"finished", row.finished},
                            {"content_len", row.content_len},
                            {"gen_overlap", gen_ov},
                            {"ref_overlap", ref_ov},
                            {"rouge1_f1", opt_json(row.rouge1_f1)},
                            {"rouge2_f1", opt_json(row.rouge2_f1)},
                            {"ser", opt_json(row.ser)},
                            {"unsupported_rate", opt_json(row.unsupported)}});
  }
  j["dev"] = json{{"rows", dev_rows}};

  json train_rows = json::array();
  for (std::size_t r = 0; r < rep.ref_probs.size(); ++r) {
    const TokenProbRecord& rec = rep.ref_probs[r];
    json labels = json::array();
    for (TokenLabel l : rec.labels) labels.push_back(token_label_name(l));
    train_rows.push_back(json{{"index", rep.train_indices[r]},
                              {"probs", rec.probs},
                              {"labels", labels},
                              {"summary_prob", rep.summary_probs[r]}});
  }
  j["train"] = json{{"rows", train_rows},
                    {"label_mean_probs", json{{"copied", opt_json(rep.label_means.copied)},
                                              {"paraphrased", opt_json(rep.label_means.paraphrased)},
                                              {"hallucinated", opt_json(rep.label_means.hallucinated)},
                                              {"factual", opt_json(rep.label_means.factual)}}},
                    {"top_quartile", stats_json(rep.top_stats)},
                    {"bottom_quartile", stats_json(rep.bottom_stats)}};

  json metrics = json::array();
  for (const MetricRecord& rec : rep.records)
    metrics.push_back(json{{"step", rec.step},
                           {"phase", phase_name(rec.phase)},
                           {"metric", rec.metric},
                           {"split", rec.split},
                           {"value", rec.value}});
  j["metrics"] = metrics;
  return j.dump() + "\n";
}

}  // namespace trunclab
