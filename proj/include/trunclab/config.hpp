#pragma once

#include <cstdint>
#include <string>

#include "trunclab/corpus.hpp"
#include "trunclab/decode.hpp"
#include "trunclab/model.hpp"
#include "trunclab/sha256.hpp"
#include "trunclab/trainer.hpp"

namespace trunclab {

struct VocabConfig {
  std::size_t n_content = 100;
  std::size_t n_halluc = 52;
};

struct ProbeConfig {
  std::size_t probe_size = 800;
  std::uint64_t stages = 10;  // used when train.checkpoint_every is 0
  bool use_beam = false;      // false: greedy variant of the decode settings
};

// One experiment end to end: corpus synthesis, model, training, decoding and
// probing. Every section and field is optional in the JSON document and falls
// back to the defaults here; unknown keys are rejected with their path.
struct ExperimentConfig {
  VocabConfig vocab;
  SynthConfig synth;               // the train split
  std::size_t dev_examples = 800;  // held-out split, synthesized separately
  ModelConfig model;
  TrainConfig train;
  DecodeConfig decode;
  ProbeConfig probe;
  std::string out_dir = "run";
};

// Cross-section checks: the model must cover the vocabulary id span and the
// synthesized sequence lengths, and the probe set must fit in the dev split.
void validate_experiment_config(const ExperimentConfig& cfg);

// Synthesis settings for the held-out split: same generator shape, the
// configured dev_examples count, and a seed derived from the train-split seed
// so the two splits never share a sample stream.
SynthConfig dev_synth_config(const ExperimentConfig& cfg);

std::uint64_t effective_checkpoint_every(const ExperimentConfig& cfg);

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Pretty document with every field materialized; parses back to an equal
// config.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

// Sorted-key compact serialization of the sections that shape a checkpoint.
// This string is what the checkpoint digest is computed over, so its layout
// is part of the on-disk contract.
std::string canonical_config_json(const ModelConfig& model, const TrainConfig& train);

Digest256 config_digest(const ModelConfig& model, const TrainConfig& train);

}  // namespace trunclab
