#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace trunclab {

// Globals shared by every subcommand, mirroring the CLI flags.
struct CliCommon {
  std::string config_path;                     // --config
  std::string out_dir;                         // --out, overrides the config's out_dir
  std::optional<std::uint64_t> seed_override;  // --seed-override, sets synth and train seeds
  std::size_t threads = 1;                     // --threads, env TRUNCLAB_THREADS fallback
};

// Each command returns a process exit code: 0 success, 1 usage or config
// error, 2 runtime failure (numeric abort, IO, corrupt artifacts). Progress
// goes to stderr, results to stdout.

// Synthesizes the train and dev splits into <out>/corpus/ with a manifest.
int cmd_synth(const CliCommon& common);

// Trains per config on the synthesized corpus; emits config.snapshot,
// checkpoints/, probes/, trajectory.csv and manifest.json into the run dir.
int cmd_train(const CliCommon& common);

// Re-probes the checkpoints of an existing run, rewriting probes/*.json.
// use_beam overrides the config's probe.use_beam when set.
int cmd_probe(const CliCommon& common, std::optional<bool> use_beam);

// Exactly one of run_dir / triples_path must be non-empty. Run mode
// recomputes every probe stage and verifies it against trajectory.csv
// byte for byte. Triples mode evaluates the metric suite on ingested
// article/reference(/generated) records.
int cmd_analyze(const CliCommon& common, const std::string& run_dir,
                const std::string& triples_path);

// Merges run trajectories into long-format comparison tables plus the named
// figure files documented in the subcommand help.
int cmd_report(const CliCommon& common, const std::vector<std::string>& run_dirs);

}  // namespace trunclab
