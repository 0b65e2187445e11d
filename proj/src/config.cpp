#include "trunclab/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "trunclab/errors.hpp"

namespace trunclab {

namespace {

using nlohmann::json;

std::string join_path(const std::string& path, const char* key) {
  return path.empty() ? std::string(key) : path + "." + key;
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> known) {
  if (!j.is_object())
    throw config_error((path.empty() ? std::string("config") : path) + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw config_error(join_path(path, item.key().c_str()) + ": unknown field");
  }
}

template <typename T>
void read_count(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned())
    throw config_error(join_path(path, key) + ": expected a non-negative integer");
  out = v.get<T>();
}

void read_real(const json& j, const std::string& path, const char* key, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number())
    throw config_error(join_path(path, key) + ": expected a number");
  out = v.get<double>();
}

void read_string(const json& j, const std::string& path, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) throw config_error(join_path(path, key) + ": expected a string");
  out = v.get<std::string>();
}

void read_bool(const json& j, const std::string& path, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw config_error(join_path(path, key) + ": expected a boolean");
  out = v.get<bool>();
}

VocabConfig vocab_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"n_content", "n_halluc"});
  VocabConfig c;
  read_count(j, path, "n_content", c.n_content);
  read_count(j, path, "n_halluc", c.n_halluc);
  return c;
}

json vocab_to_json(const VocabConfig& c) {
  return json{{"n_content", c.n_content}, {"n_halluc", c.n_halluc}};
}

SynthConfig synth_from_json(const json& j, const std::string& path) {
  check_keys(j, path,
             {"n_examples", "article_sentences", "sentence_len", "summary_sentences",
              "extractive_prob", "halluc_rate", "seed"});
  SynthConfig c;
  read_count(j, path, "n_examples", c.n_examples);
  read_count(j, path, "article_sentences", c.article_sentences);
  read_count(j, path, "sentence_len", c.sentence_len);
  read_count(j, path, "summary_sentences", c.summary_sentences);
  read_real(j, path, "extractive_prob", c.extractive_prob);
  read_real(j, path, "halluc_rate", c.halluc_rate);
  read_count(j, path, "seed", c.seed);
  return c;
}

json synth_to_json(const SynthConfig& c) {
  return json{{"n_examples", c.n_examples},
              {"article_sentences", c.article_sentences},
              {"sentence_len", c.sentence_len},
              {"summary_sentences", c.summary_sentences},
              {"extractive_prob", c.extractive_prob},
              {"halluc_rate", c.halluc_rate},
              {"seed", c.seed}};
}

ModelConfig model_from_json(const json& j, const std::string& path) {
  check_keys(j, path,
             {"vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff",
              "max_src_len", "max_tgt_len"});
  ModelConfig c;
  read_count(j, path, "vocab_size", c.vocab_size);
  read_count(j, path, "d_model", c.d_model);
  read_count(j, path, "n_heads", c.n_heads);
  read_count(j, path, "n_enc_layers", c.n_enc_layers);
  read_count(j, path, "n_dec_layers", c.n_dec_layers);
  read_count(j, path, "d_ff", c.d_ff);
  read_count(j, path, "max_src_len", c.max_src_len);
  read_count(j, path, "max_tgt_len", c.max_tgt_len);
  return c;
}

json model_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
              {"n_heads", c.n_heads},         {"n_enc_layers", c.n_enc_layers},
              {"n_dec_layers", c.n_dec_layers}, {"d_ff", c.d_ff},
              {"max_src_len", c.max_src_len}, {"max_tgt_len", c.max_tgt_len}};
}

TruncationConfig truncation_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"mode", "percentile", "warmup_steps", "window"});
  TruncationConfig c;
  if (j.contains("mode")) {
    const json& v = j.at("mode");
    if (!v.is_string()) throw config_error(join_path(path, "mode") + ": expected a string");
    try {
      c.mode = truncation_mode_from_name(v.get<std::string>());
    } catch (const config_error& e) {
      throw config_error(join_path(path, "mode") + ": " + e.what());
    }
  }
  read_real(j, path, "percentile", c.percentile);
  read_count(j, path, "warmup_steps", c.warmup_steps);
  read_count(j, path, "window", c.window);
  return c;
}

json truncation_to_json(const TruncationConfig& c) {
  return json{{"mode", truncation_mode_name(c.mode)},
              {"percentile", c.percentile},
              {"warmup_steps", c.warmup_steps},
              {"window", c.window}};
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  check_keys(j, path,
             {"total_steps", "batch_size", "learning_rate", "adam_beta1", "adam_beta2",
              "adam_eps", "max_grad_norm", "lr_schedule", "checkpoint_every", "seed",
              "truncation", "init_from"});
  TrainConfig c;
  read_count(j, path, "total_steps", c.total_steps);
  read_count(j, path, "batch_size", c.batch_size);
  read_real(j, path, "learning_rate", c.learning_rate);
  read_real(j, path, "adam_beta1", c.adam_beta1);
  read_real(j, path, "adam_beta2", c.adam_beta2);
  read_real(j, path, "adam_eps", c.adam_eps);
  read_real(j, path, "max_grad_norm", c.max_grad_norm);
  if (j.contains("lr_schedule")) {
    const json& v = j.at("lr_schedule");
    if (!v.is_string() || (v != "constant" && v != "linear"))
      throw config_error(join_path(path, "lr_schedule") +
                         ": expected \"constant\" or \"linear\"");
    c.lr_linear_decay = v == "linear";
  }
  read_count(j, path, "checkpoint_every", c.checkpoint_every);
  read_count(j, path, "seed", c.seed);
  if (j.contains("truncation"))
    c.truncation = truncation_from_json(j.at("truncation"), join_path(path, "truncation"));
  read_string(j, path, "init_from", c.init_from);
  return c;
}

json train_to_json(const TrainConfig& c) {
  return json{{"total_steps", c.total_steps},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"max_grad_norm", c.max_grad_norm},
              {"lr_schedule", c.lr_linear_decay ? "linear" : "constant"},
              {"checkpoint_every", c.checkpoint_every},
              {"seed", c.seed},
              {"truncation", truncation_to_json(c.truncation)},
              {"init_from", c.init_from}};
}

DecodeConfig decode_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"max_len", "min_len", "beam_size", "length_penalty", "no_repeat_ngram"});
  DecodeConfig c;
  read_count(j, path, "max_len", c.max_len);
  read_count(j, path, "min_len", c.min_len);
  read_count(j, path, "beam_size", c.beam_size);
  read_real(j, path, "length_penalty", c.length_penalty);
  read_count(j, path, "no_repeat_ngram", c.no_repeat_ngram);
  return c;
}

json decode_to_json(const DecodeConfig& c) {
  return json{{"max_len", c.max_len},
              {"min_len", c.min_len},
              {"beam_size", c.beam_size},
              {"length_penalty", c.length_penalty},
              {"no_repeat_ngram", c.no_repeat_ngram}};
}

ProbeConfig probe_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"probe_size", "stages", "use_beam"});
  ProbeConfig c;
  read_count(j, path, "probe_size", c.probe_size);
  read_count(j, path, "stages", c.stages);
  read_bool(j, path, "use_beam", c.use_beam);
  return c;
}

json probe_to_json(const ProbeConfig& c) {
  return json{{"probe_size", c.probe_size}, {"stages", c.stages}, {"use_beam", c.use_beam}};
}

}  // namespace

void validate_experiment_config(const ExperimentConfig& cfg) {
  const Vocabulary vocab(cfg.vocab.n_content, cfg.vocab.n_halluc);
  validate_model_config(cfg.model);
  validate_train_config(cfg.train);
  validate_decode_config(cfg.decode, cfg.model);
  if (cfg.model.vocab_size < vocab.size())
    throw config_error("model.vocab_size " + std::to_string(cfg.model.vocab_size) +
                       " does not cover the vocabulary id span " + std::to_string(vocab.size()));
  const std::size_t article_len =
      cfg.synth.article_sentences * cfg.synth.sentence_len + (cfg.synth.article_sentences - 1);
  const std::size_t reference_len =
      cfg.synth.summary_sentences * cfg.synth.sentence_len + (cfg.synth.summary_sentences - 1) + 2;
  if (article_len > cfg.model.max_src_len)
    throw config_error("synth: article length " + std::to_string(article_len) +
                       " exceeds model.max_src_len " + std::to_string(cfg.model.max_src_len));
  if (reference_len > cfg.model.max_tgt_len)
    throw config_error("synth: reference length " + std::to_string(reference_len) +
                       " exceeds model.max_tgt_len " + std::to_string(cfg.model.max_tgt_len));
  if (cfg.synth.n_examples == 0) throw config_error("synth.n_examples must be >= 1");
  if (cfg.dev_examples == 0) throw config_error("dev_examples must be >= 1");
  if (cfg.probe.probe_size == 0) throw config_error("probe.probe_size must be >= 1");
  if (cfg.probe.probe_size > cfg.dev_examples)
    throw config_error("probe.probe_size " + std::to_string(cfg.probe.probe_size) +
                       " exceeds dev_examples " + std::to_string(cfg.dev_examples));
  if (cfg.probe.stages == 0) throw config_error("probe.stages must be >= 1");
  if (cfg.out_dir.empty()) throw config_error("out_dir must not be empty");
}

std::uint64_t effective_checkpoint_every(const ExperimentConfig& cfg) {
  if (cfg.train.checkpoint_every > 0) return cfg.train.checkpoint_every;
  const std::uint64_t every = cfg.train.total_steps / cfg.probe.stages;
  return every > 0 ? every : 1;
}

SynthConfig dev_synth_config(const ExperimentConfig& cfg) {
  SynthConfig dev = cfg.synth;
  dev.n_examples = cfg.dev_examples;
  dev.seed = Rng(cfg.synth.seed).split("dev").next_u64();
  return dev;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  check_keys(j, "",
             {"vocab", "synth", "dev_examples", "model", "train", "decode", "probe", "out_dir"});
  ExperimentConfig c;
  if (j.contains("vocab")) c.vocab = vocab_from_json(j.at("vocab"), "vocab");
  if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"), "synth");
  read_count(j, "", "dev_examples", c.dev_examples);
  if (j.contains("model")) c.model = model_from_json(j.at("model"), "model");
  if (j.contains("train")) c.train = train_from_json(j.at("train"), "train");
  if (j.contains("decode")) c.decode = decode_from_json(j.at("decode"), "decode");
  if (j.contains("probe")) c.probe = probe_from_json(j.at("probe"), "probe");
  read_string(j, "", "out_dir", c.out_dir);
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  const json j{{"vocab", vocab_to_json(cfg.vocab)},
               {"synth", synth_to_json(cfg.synth)},
               {"dev_examples", cfg.dev_examples},
               {"model", model_to_json(cfg.model)},
               {"train", train_to_json(cfg.train)},
               {"decode", decode_to_json(cfg.decode)},
               {"probe", probe_to_json(cfg.probe)},
               {"out_dir", cfg.out_dir}};
  return j.dump(2) + "\n";
}

std::string canonical_config_json(const ModelConfig& model, const TrainConfig& train) {
  const json j{{"model", model_to_json(model)}, {"train", train_to_json(train)}};
  return j.dump();  // nlohmann objects iterate in sorted key order
}

Digest256 config_digest(const ModelConfig& model, const TrainConfig& train) {
  return sha256(canonical_config_json(model, train));
}

}  // namespace trunclab
