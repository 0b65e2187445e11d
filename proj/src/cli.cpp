#include "trunclab/cli.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "trunclab/checkpoint.hpp"
#include "trunclab/config.hpp"
#include "trunclab/corpus.hpp"
#include "trunclab/errors.hpp"
#include "trunclab/metrics.hpp"
#include "trunclab/model.hpp"
#include "trunclab/probe.hpp"
#include "trunclab/sha256.hpp"
#include "trunclab/trainer.hpp"

namespace trunclab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Exit-code policy: config/usage problems are 1, everything else that throws
// is 2 (numeric aborts, IO, corrupt artifacts).
template <typename Fn>
int run_cli(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw runtime_failure("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw runtime_failure("cannot read " + p.string());
  return os.str();
}

void write_text_file_atomic(const fs::path& p, const std::string& content) {
  const std::string tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw runtime_failure("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out.good()) throw runtime_failure("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), p.string().c_str()) != 0)
    throw runtime_failure("cannot rename " + tmp + " to " + p.string());
}

std::string file_sha256_hex(const fs::path& p) { return digest_hex(sha256(read_text_file(p))); }

ExperimentConfig load_cli_config(const CliCommon& c) {
  if (c.config_path.empty()) throw config_error("--config is required for this command");
  ExperimentConfig cfg = load_experiment_config(c.config_path);
  if (c.seed_override) {
    cfg.synth.seed = *c.seed_override;
    cfg.train.seed = *c.seed_override;
  }
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  validate_experiment_config(cfg);
  return cfg;
}

void require_cache_matches(const CorpusCache& cache, const Vocabulary& vocab,
                           const SynthConfig& expect, const char* which) {
  const SynthConfig& got = cache.cfg;
  const bool ok = cache.vocab.n_content() == vocab.n_content() &&
                  cache.vocab.n_halluc() == vocab.n_halluc() &&
                  got.n_examples == expect.n_examples &&
                  got.article_sentences == expect.article_sentences &&
                  got.sentence_len == expect.sentence_len &&
                  got.summary_sentences == expect.summary_sentences &&
                  got.extractive_prob == expect.extractive_prob &&
                  got.halluc_rate == expect.halluc_rate && got.seed == expect.seed;
  if (!ok)
    throw config_error(std::string(which) +
                       " corpus cache does not match this config; re-run synth");
}

void append_train_row(std::string& csv, std::uint64_t step, const char* metric, double value) {
  MetricRecord rec;
  rec.step = step;
  rec.phase = Phase::train;
  rec.metric = metric;
  rec.split = "train";
  rec.value = value;
  csv += metric_csv_row(rec);
  csv += '\n';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::uint64_t parse_u64_field(const std::string& s, const std::string& context) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw format_error(context + ": bad step field '" + s + "'");
  return std::stoull(s);
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_text_file(p));
  } catch (const json::parse_error& e) {
    throw format_error(p.string() + ": " + e.what());
  }
}

// Caches are read from <run>/corpus and checked against the config so a
// digest in a checkpoint always describes the data it was trained on.
struct LoadedCorpora {
  CorpusCache train;
  CorpusCache dev;
  Vocabulary vocab;
};

LoadedCorpora load_corpora(const fs::path& run, const ExperimentConfig& cfg) {
  const fs::path dir = run / "corpus";
  if (!fs::exists(dir / "train.tlcx") || !fs::exists(dir / "dev.tlcx"))
    throw runtime_failure("corpus cache missing under " + dir.string() +
                          "; run the synth subcommand first");
  LoadedCorpora lc{read_corpus_cache((dir / "train.tlcx").string()),
                   read_corpus_cache((dir / "dev.tlcx").string()),
                   Vocabulary(cfg.vocab.n_content, cfg.vocab.n_halluc)};
  require_cache_matches(lc.train, lc.vocab, cfg.synth, "train");
  require_cache_matches(lc.dev, lc.vocab, dev_synth_config(cfg), "dev");
  return lc;
}

Seq2SeqModel model_from_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ck,
                                   const std::string& what) {
  if (ck.digest != config_digest(cfg.model, cfg.train))
    throw format_error(what + " does not match the run config digest");
  Seq2SeqModel model(cfg.model, cfg.train.seed);
  load_model_params(model, ck);
  return model;
}

void analyze_run(const std::string& run_dir, const CliCommon& common) {
  const fs::path run(run_dir);
  ExperimentConfig cfg = parse_experiment_config(read_text_file(run / "config.snapshot"));
  validate_experiment_config(cfg);
  LoadedCorpora lc = load_corpora(run, cfg);
  const json manifest = parse_json_file(run / "manifest.json");

  auto check_sha = [&run](const json& entry) {
    const std::string rel = entry.at("path").get<std::string>();
    if (file_sha256_hex(run / rel) != entry.at("sha256").get<std::string>())
      throw format_error(rel + " does not match its digest recorded in manifest.json");
  };
  for (const json& e : manifest.at("checkpoints")) check_sha(e);
  for (const json& e : manifest.at("probes")) check_sha(e);
  check_sha(manifest.at("trajectory"));
  check_sha(manifest.at("corpus").at("train"));
  check_sha(manifest.at("corpus").at("dev"));

  // Probe rows of trajectory.csv grouped by step, in file order.
  const std::string traj = read_text_file(run / "trajectory.csv");
  std::map<std::uint64_t, std::vector<std::string>> probe_rows;
  {
    std::istringstream lines(traj);
    std::string line;
    if (!std::getline(lines, line) || line != kTrajectoryCsvHeader)
      throw format_error("trajectory.csv: missing or wrong header");
    std::size_t lineno = 1;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::vector<std::string> f = split_csv_line(line);
      if (f.size() != 5)
        throw format_error("trajectory.csv line " + std::to_string(lineno) +
                           ": expected 5 fields");
      if (f[1] == "probe")
        probe_rows[parse_u64_field(f[0], "trajectory.csv")].push_back(line);
    }
  }

  Prober prober(lc.train.examples, lc.dev.examples, lc.vocab, cfg.probe, cfg.decode,
                cfg.train.seed, common.threads);
  const fs::path out_dir =
      common.out_dir.empty() ? fs::path() : fs::path(common.out_dir) / "analysis";
  if (!out_dir.empty()) fs::create_directories(out_dir);

  std::size_t verified = 0;
  std::set<std::uint64_t> ck_steps;
  for (const json& entry : manifest.at("checkpoints")) {
    const std::uint64_t step = entry.at("step").get<std::uint64_t>();
    const std::string rel = entry.at("path").get<std::string>();
    const Checkpoint ck = read_checkpoint((run / rel).string());
    if (ck.step != step) throw format_error(rel + ": step does not match manifest.json");
    Seq2SeqModel model = model_from_checkpoint(cfg, ck, rel);
    const ProbeReport rep = prober.probe(model, step);
    ck_steps.insert(step);

    auto it = probe_rows.find(step);
    if (it == probe_rows.end())
      throw format_error("trajectory.csv has no probe rows for step " + std::to_string(step));
    const std::vector<std::string>& want = it->second;
    if (want.size() != rep.records.size())
      throw format_error("step " + std::to_string(step) + ": trajectory.csv has " +
                         std::to_string(want.size()) + " probe rows, recomputation produced " +
                         std::to_string(rep.records.size()));
    for (std::size_t i = 0; i < want.size(); ++i) {
      const std::string row = metric_csv_row(rep.records[i]);
      if (row != want[i])
        throw format_error("step " + std::to_string(step) + " probe row " + std::to_string(i) +
                           " differs\n  trajectory:    " + want[i] +
                           "\n  recomputation: " + row);
    }
    verified += want.size();
    if (!out_dir.empty())
      write_text_file_atomic(out_dir / ("step-" + std::to_string(step) + ".json"),
                             probe_report_json(rep));
    std::cerr << "analyze: step " << step << " verified (" << want.size() << " rows)\n";
  }
  for (const auto& [step, rows] : probe_rows)
    if (ck_steps.count(step) == 0)
      throw format_error("trajectory.csv has probe rows at step " + std::to_string(step) +
                         " but no such checkpoint");

  std::cout << "analyze: verified " << verified << " probe rows across " << ck_steps.size()
            << " stages against trajectory.csv\n";
}

void analyze_triples(const std::string& path, const CliCommon& common) {
  IngestResult ing = ingest_triples_file(path);
  if (ing.triples.empty()) throw format_error("no triples found in " + path);

  json rows = json::array();
  std::vector<Example> pseudo;
  pseudo.reserve(ing.triples.size());
  bool any_generated = false;

  std::map<std::string, std::pair<double, std::size_t>> agg;
  auto acc = [&agg](const std::string& name, const std::optional<double>& v) {
    if (v) {
      auto& a = agg[name];
      a.first += *v;
      a.second += 1;
    }
  };
  auto opt_field = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };

  for (std::size_t i = 0; i < ing.triples.size(); ++i) {
    const Triple& t = ing.triples[i];
    json row;
    row["index"] = i;
    if (t.step) row["step"] = *t.step;

    json ref_ov = json::array();
    for (std::size_t n = 1; n <= 4; ++n) {
      const std::optional<double> v = ngram_overlap(t.reference, t.article, n);
      ref_ov.push_back(opt_field(v));
      acc("ref_ngram_overlap_" + std::to_string(n), v);
    }
    row["ref_ngram_overlap"] = ref_ov;

    Example pe;
    pe.article = t.article;
    pe.reference = t.reference;
    pe.bigram_overlap = ngram_overlap(t.reference, t.article, 2).value_or(0.0);
    pseudo.push_back(std::move(pe));

    if (t.generated) {
      any_generated = true;
      const Tokens& gen = *t.generated;
      json gen_ov = json::array();
      for (std::size_t n = 1; n <= 4; ++n) {
        const std::optional<double> v = ngram_overlap(gen, t.article, n);
        gen_ov.push_back(opt_field(v));
        acc("gen_ngram_overlap_" + std::to_string(n), v);
      }
      row["gen_ngram_overlap"] = gen_ov;

      std::optional<double> r1, r2;
      if (auto r = rouge_n(gen, t.reference, 1)) r1 = r->f1;
      if (auto r = rouge_n(gen, t.reference, 2)) r2 = r->f1;
      row["gen_rouge1_f1"] = opt_field(r1);
      row["gen_rouge2_f1"] = opt_field(r2);
      acc("gen_rouge1_f1", r1);
      acc("gen_rouge2_f1", r2);

      // Ingested data has no paraphrase structure, so support degrades to
      // literal occurrence in the article; specials are always supported.
      const std::unordered_set<std::uint32_t> article_set(t.article.begin(), t.article.end());
      auto supported = [&article_set](std::uint32_t tok) {
        return tok < kNumSpecials || article_set.count(tok) > 0;
      };
      std::size_t sentences = 0, bad_sentences = 0, content = 0, unsupported = 0;
      bool in_run = false, run_bad = false;
      for (std::uint32_t tok : gen) {
        if (tok < kNumSpecials) {
          if (in_run) {
            ++sentences;
            if (run_bad) ++bad_sentences;
          }
          in_run = run_bad = false;
          continue;
        }
        in_run = true;
        ++content;
        if (!supported(tok)) {
          ++unsupported;
          run_bad = true;
        }
      }
      if (in_run) {
        ++sentences;
        if (run_bad) ++bad_sentences;
      }
      std::optional<double> ser, unsup;
      if (sentences > 0)
        ser = static_cast<double>(bad_sentences) / static_cast<double>(sentences);
      if (content > 0) unsup = static_cast<double>(unsupported) / static_cast<double>(content);
      row["gen_ser"] = opt_field(ser);
      row["gen_unsupported_rate"] = opt_field(unsup);
      row["gen_len"] = content;
      acc("gen_ser", ser);
      acc("gen_unsupported_rate", unsup);
      acc("gen_len_mean", static_cast<double>(content));
    }
    rows.push_back(std::move(row));
  }

  json aggregates = json::object();
  for (const auto& [name, a] : agg)
    aggregates[name] = a.first / static_cast<double>(a.second);

  const QuartileSplit q = overlap_quartiles(pseudo);
  auto subset_mean = [&pseudo](const std::vector<std::size_t>& idx) {
    double sum = 0.0;
    for (std::size_t i : idx) sum += pseudo[i].bigram_overlap;
    return sum / static_cast<double>(idx.size());
  };
  json quartiles{{"top_size", q.top.size()},
                 {"bottom_size", q.bottom.size()},
                 {"top_indices", q.top},
                 {"bottom_indices", q.bottom},
                 {"top_mean_bigram_overlap", subset_mean(q.top)},
                 {"bottom_mean_bigram_overlap", subset_mean(q.bottom)}};

  json notices = json::array();
  if (!any_generated)
    notices.push_back(
        "no generated summaries present: n-gram overlap reported for references only, "
        "sentence error rate skipped");
  else
    notices.push_back(
        "support for ingested data is literal article occurrence; specials always count "
        "as supported");

  json doc{{"source", path},          {"n_triples", ing.triples.size()},
           {"token_table_size", ing.token_table.size()},
           {"rows", rows},            {"aggregates", aggregates},
           {"quartiles", quartiles},  {"notices", notices}};

  if (!common.out_dir.empty()) {
    fs::create_directories(common.out_dir);
    const fs::path out = fs::path(common.out_dir) / "analysis.json";
    write_text_file_atomic(out, doc.dump(2) + "\n");
    std::cout << "analyze: wrote " << out.string() << "\n";
  } else {
    std::cout << doc.dump(2) << "\n";
  }
}

}  // namespace

int cmd_synth(const CliCommon& common) {
  return run_cli([&] {
    const ExperimentConfig cfg = load_cli_config(common);
    const Vocabulary vocab(cfg.vocab.n_content, cfg.vocab.n_halluc);
    const SynthConfig dev_cfg = dev_synth_config(cfg);
    const std::vector<Example> train = synthesize_corpus(vocab, cfg.synth);
    const std::vector<Example> dev = synthesize_corpus(vocab, dev_cfg);

    const fs::path dir = fs::path(cfg.out_dir) / "corpus";
    fs::create_directories(dir);
    write_corpus_cache((dir / "train.tlcx").string(), vocab, cfg.synth, train);
    write_corpus_cache((dir / "dev.tlcx").string(), vocab, dev_cfg, dev);

    json manifest;
    manifest["rng"] = Rng::version();
    manifest["vocab"] = json{{"n_content", vocab.n_content()},
                             {"n_halluc", vocab.n_halluc()},
                             {"size", vocab.size()}};
    manifest["train"] = json{{"path", "train.tlcx"},
                             {"n_examples", train.size()},
                             {"seed", cfg.synth.seed},
                             {"sha256", file_sha256_hex(dir / "train.tlcx")}};
    manifest["dev"] = json{{"path", "dev.tlcx"},
                           {"n_examples", dev.size()},
                           {"seed", dev_cfg.seed},
                           {"sha256", file_sha256_hex(dir / "dev.tlcx")}};
    write_text_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "synth: wrote " << train.size() << " train and " << dev.size()
              << " dev examples to " << dir.string() << "\n";
  });
}

int cmd_train(const CliCommon& common) {
  return run_cli([&] {
    const ExperimentConfig cfg = load_cli_config(common);
    const fs::path run(cfg.out_dir);
    LoadedCorpora lc = load_corpora(run, cfg);

    Seq2SeqModel model(cfg.model, cfg.train.seed);
    Trainer trainer(model, lc.train.examples, cfg.train);
    if (!cfg.train.init_from.empty()) trainer.warm_start(read_checkpoint(cfg.train.init_from));

    const Prober prober(lc.train.examples, lc.dev.examples, lc.vocab, cfg.probe, cfg.decode,
                        cfg.train.seed, common.threads);

    fs::create_directories(run / "checkpoints");
    fs::create_directories(run / "probes");
    write_text_file_atomic(run / "config.snapshot", experiment_config_to_json(cfg));

    const std::vector<std::uint64_t> ckpts =
        checkpoint_steps(cfg.train.total_steps, effective_checkpoint_every(cfg));
    std::string traj(kTrajectoryCsvHeader);
    traj += '\n';
    const double mode_value =
        static_cast<double>(static_cast<unsigned>(cfg.train.truncation.mode));

    json mf_ckpts = json::array();
    json mf_probes = json::array();
    std::size_t next_ck = 0;
    for (std::uint64_t t = 1; t <= cfg.train.total_steps; ++t) {
      const StepInfo info = trainer.step();
      append_train_row(traj, t, "loss", info.loss);
      append_train_row(traj, t, "trunc_q", info.q);
      append_train_row(traj, t, "trunc_fraction_masked", info.fraction_masked);
      append_train_row(traj, t, "trunc_mode", mode_value);

      if (next_ck < ckpts.size() && ckpts[next_ck] == t) {
        ++next_ck;
        const std::string ck_rel = "checkpoints/step-" + std::to_string(t) + ".tlck";
        trainer.save((run / ck_rel).string());
        const ProbeReport rep = prober.probe(model, t);
        const std::string pr_rel = "probes/step-" + std::to_string(t) + ".json";
        write_text_file_atomic(run / pr_rel, probe_report_json(rep));
        for (const MetricRecord& rec : rep.records) {
          traj += metric_csv_row(rec);
          traj += '\n';
        }
        mf_ckpts.push_back(
            json{{"step", t}, {"path", ck_rel}, {"sha256", file_sha256_hex(run / ck_rel)}});
        mf_probes.push_back(
            json{{"step", t}, {"path", pr_rel}, {"sha256", file_sha256_hex(run / pr_rel)}});
        std::cerr << "step " << t << "/" << cfg.train.total_steps << "  loss " << info.loss
                  << "  q " << info.q << "  masked " << info.fraction_masked
                  << "  checkpoint saved\n";
      }
    }
    write_text_file_atomic(run / "trajectory.csv", traj);

    json manifest;
    manifest["config_digest"] = digest_hex(trainer.config_digest());
    manifest["seed"] = cfg.train.seed;
    manifest["rng"] = Rng::version();
    manifest["corpus"] =
        json{{"train", json{{"path", "corpus/train.tlcx"},
                            {"sha256", file_sha256_hex(run / "corpus/train.tlcx")}}},
             {"dev", json{{"path", "corpus/dev.tlcx"},
                          {"sha256", file_sha256_hex(run / "corpus/dev.tlcx")}}}};
    manifest["checkpoints"] = mf_ckpts;
    manifest["probes"] = mf_probes;
    manifest["trajectory"] =
        json{{"path", "trajectory.csv"}, {"sha256", file_sha256_hex(run / "trajectory.csv")}};
    write_text_file_atomic(run / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "train: " << cfg.train.total_steps << " steps, " << ckpts.size()
              << " checkpoints, run directory " << run.string() << "\n";
  });
}

int cmd_probe(const CliCommon& common, std::optional<bool> use_beam) {
  return run_cli([&] {
    if (common.seed_override)
      throw config_error("--seed-override does not apply to probe; the run's seeds are fixed");
    fs::path run;
    ExperimentConfig cfg;
    if (!common.config_path.empty()) {
      cfg = load_cli_config(common);
      run = cfg.out_dir;
    } else {
      if (common.out_dir.empty())
        throw config_error("probe needs --out pointing at a run directory (or --config)");
      run = common.out_dir;
      cfg = parse_experiment_config(read_text_file(run / "config.snapshot"));
      validate_experiment_config(cfg);
    }
    if (use_beam) cfg.probe.use_beam = *use_beam;

    LoadedCorpora lc = load_corpora(run, cfg);
    json manifest = parse_json_file(run / "manifest.json");
    const Prober prober(lc.train.examples, lc.dev.examples, lc.vocab, cfg.probe, cfg.decode,
                        cfg.train.seed, common.threads);

    fs::create_directories(run / "probes");
    json mf_probes = json::array();
    for (const json& entry : manifest.at("checkpoints")) {
      const std::uint64_t step = entry.at("step").get<std::uint64_t>();
      const std::string rel = entry.at("path").get<std::string>();
      const Checkpoint ck = read_checkpoint((run / rel).string());
      if (ck.step != step) throw format_error(rel + ": step does not match manifest.json");
      Seq2SeqModel model = model_from_checkpoint(cfg, ck, rel);
      const ProbeReport rep = prober.probe(model, step);
      const std::string pr_rel = "probes/step-" + std::to_string(step) + ".json";
      write_text_file_atomic(run / pr_rel, probe_report_json(rep));
      mf_probes.push_back(
          json{{"step", step}, {"path", pr_rel}, {"sha256", file_sha256_hex(run / pr_rel)}});
      std::cerr << "probe: step " << step << " rewritten\n";
    }
    manifest["probes"] = mf_probes;
    write_text_file_atomic(run / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "probe: " << mf_probes.size() << " stages probed in " << run.string() << "\n";
  });
}

int cmd_analyze(const CliCommon& common, const std::string& run_dir,
                const std::string& triples_path) {
  return run_cli([&] {
    if (run_dir.empty() == triples_path.empty())
      throw config_error("analyze needs exactly one of --run or --triples");
    if (!common.config_path.empty())
      throw config_error(
          "analyze does not take --config; run mode reads the run's config.snapshot");
    if (common.seed_override) throw config_error("--seed-override does not apply to analyze");
    if (!run_dir.empty())
      analyze_run(run_dir, common);
    else
      analyze_triples(triples_path, common);
  });
}

int cmd_report(const CliCommon& common, const std::vector<std::string>& run_dirs) {
  return run_cli([&] {
    if (common.seed_override) throw config_error("--seed-override does not apply to report");
    if (run_dirs.empty()) throw config_error("report needs at least one run directory");
    const fs::path out(common.out_dir.empty() ? "report" : common.out_dir);

    std::vector<std::string> labels;
    std::map<std::string, int> seen;
    for (const std::string& d : run_dirs) {
      fs::path p(d);
      std::string base = p.filename().string();
      if (base.empty()) base = p.parent_path().filename().string();
      if (base.empty()) base = d;
      int& k = seen[base];
      ++k;
      labels.push_back(k == 1 ? base : base + "-" + std::to_string(k));
    }

    struct RunRows {
      std::string label;
      std::vector<std::array<std::string, 5>> rows;
      std::set<std::string> probe_steps;
    };
    std::vector<RunRows> runs;
    for (std::size_t i = 0; i < run_dirs.size(); ++i) {
      const fs::path tp = fs::path(run_dirs[i]) / "trajectory.csv";
      if (!fs::exists(tp))
        throw runtime_failure("no trajectory.csv in " + run_dirs[i] +
                              " (empty or not a run directory)");
      RunRows rr;
      rr.label = labels[i];
      std::istringstream lines(read_text_file(tp));
      std::string line;
      if (!std::getline(lines, line) || line != kTrajectoryCsvHeader)
        throw format_error(tp.string() + ": missing or wrong header");
      std::size_t lineno = 1;
      while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 5)
          throw format_error(tp.string() + " line " + std::to_string(lineno) +
                             ": expected 5 fields");
        if (f[1] == "probe") rr.probe_steps.insert(f[0]);
        rr.rows.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]),
                           std::move(f[3]), std::move(f[4])});
      }
      runs.push_back(std::move(rr));
    }

    for (std::size_t i = 1; i < runs.size(); ++i)
      if (runs[i].probe_steps != runs[0].probe_steps) {
        std::cerr << "warning: probe schedules differ across runs; "
                     "tables outer-join on steps\n";
        break;
      }

    fs::create_directories(out);
    std::string comp = "run,step,phase,metric,split,value\n";
    for (const RunRows& rr : runs)
      for (const auto& f : rr.rows) {
        comp += rr.label;
        for (const std::string& field : f) {
          comp += ',';
          comp += field;
        }
        comp += '\n';
      }
    write_text_file_atomic(out / "comparison.csv", comp);

    auto write_figure = [&](const char* fname, std::initializer_list<const char*> metrics) {
      const std::set<std::string> want(metrics.begin(), metrics.end());
      std::string csv = "run,step,metric,value\n";
      for (const RunRows& rr : runs)
        for (const auto& f : rr.rows)
          if (f[1] == "probe" && want.count(f[2]))
            csv += rr.label + "," + f[0] + "," + f[2] + "," + f[4] + "\n";
      write_text_file_atomic(out / fname, csv);
    };
    write_figure("figure1_overlap.csv",
                 {"gen_ngram_overlap_1", "gen_ngram_overlap_2", "gen_ngram_overlap_3",
                  "gen_ngram_overlap_4", "ref_ngram_overlap_1", "ref_ngram_overlap_2",
                  "ref_ngram_overlap_3", "ref_ngram_overlap_4"});
    write_figure("figure2_rouge.csv", {"gen_rouge1_f1", "gen_rouge2_f1"});
    write_figure("figure3_quartile_probs.csv",
                 {"summary_prob_top_min", "summary_prob_top_q1", "summary_prob_top_median",
                  "summary_prob_top_q3", "summary_prob_top_max", "summary_prob_top_mean",
                  "summary_prob_bottom_min", "summary_prob_bottom_q1",
                  "summary_prob_bottom_median", "summary_prob_bottom_q3",
                  "summary_prob_bottom_max", "summary_prob_bottom_mean"});
    write_figure("figure4_ser.csv", {"gen_ser", "gen_unsupported_rate"});
    write_figure("figure5_token_probs.csv",
                 {"ref_prob_copied_mean", "ref_prob_paraphrased_mean",
                  "ref_prob_hallucinated_mean", "ref_prob_factual_mean"});
    write_figure("figure7_abstractiveness.csv",
                 {"gen_ngram_overlap_2", "ref_ngram_overlap_2"});
    write_figure("figure8_factuality.csv",
                 {"gen_ser", "gen_unsupported_rate", "gen_ngram_overlap_2", "gen_rouge1_f1"});

    std::cout << "report: " << runs.size() << " run(s) merged into " << out.string()
              << " (comparison.csv + 7 figure tables)\n";
  });
}

}  // namespace trunclab
