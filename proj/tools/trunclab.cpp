// trunclab: a desk-scale laboratory for summarization training dynamics.
// Subcommands cover the whole loop: synthesize corpora, train with loss
// truncation, probe saved checkpoints, verify or score artifacts, and merge
// runs into comparison tables.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trunclab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "trunclab: synthetic summarization lab (train, probe, analyze, report)"};
  app.require_subcommand(1);

  trunclab::CliCommon common;
  std::optional<std::uint64_t> seed_override;
  app.add_option("--config", common.config_path, "Experiment config (JSON)");
  app.add_option("--out", common.out_dir,
                 "Output/run directory; overrides the config's out_dir");
  app.add_option("--seed-override", seed_override,
                 "Replace both the synth and the train seed");
  app.add_option("--threads", common.threads, "Worker threads for probe evaluation")
      ->envname("TRUNCLAB_THREADS")
      ->check(CLI::Range(static_cast<std::size_t>(1), static_cast<std::size_t>(512)));

  CLI::App* synth = app.add_subcommand(
      "synth", "Synthesize the train/dev corpora into <out>/corpus/ with a manifest");
  CLI::App* train = app.add_subcommand(
      "train",
      "Train per config; writes config.snapshot, checkpoints/, probes/, "
      "trajectory.csv and manifest.json into the run directory");
  CLI::App* probe = app.add_subcommand(
      "probe", "Re-probe every checkpoint of an existing run, rewriting probes/");
  bool beam = false;
  bool greedy = false;
  CLI::Option* beam_opt =
      probe->add_flag("--beam", beam, "Probe with the configured beam settings");
  probe->add_flag("--greedy", greedy, "Probe with greedy decoding")->excludes(beam_opt);

  CLI::App* analyze = app.add_subcommand(
      "analyze", "Verify a run directory or score an ingested triples file");
  std::string run_dir;
  std::string triples;
  analyze->add_option(
      "--run", run_dir,
      "Run directory: recompute every probe stage from its checkpoint and "
      "verify the probe rows of trajectory.csv byte for byte");
  analyze->add_option(
      "--triples", triples,
      "JSONL file of {article, reference, generated?, step?} records: "
      "overlap/ROUGE/support metrics plus overlap quartiles, no model needed");

  CLI::App* report = app.add_subcommand(
      "report",
      "Merge run trajectories into long-format tables under <out> "
      "(default ./report):\n"
      "  comparison.csv             every row, keyed (run, step, metric)\n"
      "  figure1_overlap.csv        generated vs reference n-gram overlap\n"
      "  figure2_rouge.csv          ROUGE-1/ROUGE-2 trajectories\n"
      "  figure3_quartile_probs.csv summary probability stats by overlap quartile\n"
      "  figure4_ser.csv            sentence error and unsupported-token rates\n"
      "  figure5_token_probs.csv    mean reference-token probability by label\n"
      "  figure7_abstractiveness.csv bigram overlap, generated vs reference\n"
      "  figure8_factuality.csv     factuality/abstractiveness/ROUGE channels");
  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "Run directories to merge");

  for (CLI::App* sub : {synth, train, probe, analyze, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  common.seed_override = seed_override;

  std::optional<bool> use_beam;
  if (beam) use_beam = true;
  if (greedy) use_beam = false;

  if (app.got_subcommand(synth)) return trunclab::cmd_synth(common);
  if (app.got_subcommand(train)) return trunclab::cmd_train(common);
  if (app.got_subcommand(probe)) return trunclab::cmd_probe(common, use_beam);
  if (app.got_subcommand(analyze)) return trunclab::cmd_analyze(common, run_dir, triples);
  if (app.got_subcommand(report)) return trunclab::cmd_report(common, run_dirs);
  std::cerr << "error: no subcommand\n";
  return 1;
}
