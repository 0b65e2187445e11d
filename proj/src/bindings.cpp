// Python bindings for the main operations: corpus synthesis, metrics, the
// truncation primitives, training, and decoding. The module mirrors the C++
// API closely; everything heavier (CLI runs, probing at scale) stays native.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "trunclab/checkpoint.hpp"
#include "trunclab/config.hpp"
#include "trunclab/corpus.hpp"
#include "trunclab/decode.hpp"
#include "trunclab/errors.hpp"
#include "trunclab/metrics.hpp"
#include "trunclab/model.hpp"
#include "trunclab/rng.hpp"
#include "trunclab/sha256.hpp"
#include "trunclab/trainer.hpp"
#include "trunclab/truncation.hpp"

namespace py = pybind11;
using namespace trunclab;

namespace {

// Trainer borrows the corpus for its lifetime, but arguments converted from
// python lists are call temporaries. The wrapper owns a copy instead; member
// order keeps the corpus alive before the trainer that points at it.
class PyTrainer {
 public:
  PyTrainer(Seq2SeqModel& model, std::vector<Example> corpus, const TrainConfig& cfg)
      : corpus_(std::move(corpus)), trainer_(model, corpus_, cfg) {}

  StepInfo step() { return trainer_.step(); }

 private:
  std::vector<Example> corpus_;
  Trainer trainer_;
};

}  // namespace

PYBIND11_MODULE(_trunclab, m) {
  m.doc() = "Loss-truncation training laboratory, native core";

  py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<runtime_failure>(m, "RuntimeFailure", PyExc_RuntimeError);

  m.attr("PAD_ID") = kPadId;
  m.attr("BOS_ID") = kBosId;
  m.attr("EOS_ID") = kEosId;
  m.attr("SEP_ID") = kSepId;
  m.attr("NUM_SPECIALS") = kNumSpecials;

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("next_u64", &Rng::next_u64)
      .def("uniform", py::overload_cast<>(&Rng::uniform))
      .def("uniform_int", &Rng::uniform_int, py::arg("n"))
      .def("split", py::overload_cast<std::string_view>(&Rng::split, py::const_),
           py::arg("label"))
      .def_static("version", &Rng::version);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::size_t, std::size_t>(), py::arg("n_content"), py::arg("n_halluc"))
      .def_property_readonly("size", &Vocabulary::size)
      .def_property_readonly("n_content", &Vocabulary::n_content)
      .def_property_readonly("n_halluc", &Vocabulary::n_halluc)
      .def("is_special", &Vocabulary::is_special)
      .def("pool_id", &Vocabulary::pool_id)
      .def("paraphrase_of", &Vocabulary::paraphrase_of)
      .def("paraphrase_inverse", &Vocabulary::paraphrase_inverse)
      .def("halluc_id", &Vocabulary::halluc_id);

  py::enum_<TokenLabel>(m, "TokenLabel")
      .value("copied", TokenLabel::copied)
      .value("paraphrased", TokenLabel::paraphrased)
      .value("hallucinated", TokenLabel::hallucinated)
      .value("special", TokenLabel::special);

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("n_examples", &SynthConfig::n_examples)
      .def_readwrite("article_sentences", &SynthConfig::article_sentences)
      .def_readwrite("sentence_len", &SynthConfig::sentence_len)
      .def_readwrite("summary_sentences", &SynthConfig::summary_sentences)
      .def_readwrite("extractive_prob", &SynthConfig::extractive_prob)
      .def_readwrite("halluc_rate", &SynthConfig::halluc_rate)
      .def_readwrite("seed", &SynthConfig::seed);

  py::class_<Example>(m, "Example")
      .def_readonly("article", &Example::article)
      .def_readonly("reference", &Example::reference)
      .def_readonly("labels", &Example::labels)
      .def_readonly("bigram_overlap", &Example::bigram_overlap);

  m.def("synthesize_corpus", &synthesize_corpus, py::arg("vocab"), py::arg("config"));
  m.def("support_oracle", &support_oracle, py::arg("token"), py::arg("article"),
        py::arg("vocab"));
  m.def("overlap_quartiles", [](const std::vector<Example>& corpus) {
    const QuartileSplit q = overlap_quartiles(corpus);
    return py::make_tuple(q.top, q.bottom);
  }, py::arg("corpus"));

  m.def("strip_specials", &strip_specials, py::arg("tokens"));
  m.def("ngram_overlap", &ngram_overlap, py::arg("summary"), py::arg("article"),
        py::arg("n"));
  m.def("rouge_n",
        [](const Tokens& cand, const Tokens& ref, std::size_t n)
            -> std::optional<py::tuple> {
          const auto s = rouge_n(cand, ref, n);
          if (!s) return std::nullopt;
          return py::make_tuple(s->precision, s->recall, s->f1);
        },
        py::arg("candidate"), py::arg("reference"), py::arg("n"),
        "Returns (precision, recall, f1) or None");
  m.def("sentence_error_rate", &sentence_error_rate, py::arg("generated"),
        py::arg("article"), py::arg("vocab"));
  m.def("unsupported_rate", &unsupported_rate, py::arg("generated"), py::arg("article"),
        py::arg("vocab"));

  m.def("nearest_rank_percentile", &nearest_rank_percentile, py::arg("values"),
        py::arg("p"));
  py::class_<LossWindow>(m, "LossWindow")
      .def(py::init<std::size_t>(), py::arg("capacity"))
      .def("push", &LossWindow::push)
      .def("percentile", &LossWindow::percentile)
      .def("values", &LossWindow::values)
      .def_property_readonly("size", &LossWindow::size)
      .def_property_readonly("capacity", &LossWindow::capacity);
  py::enum_<TruncationMode>(m, "TruncationMode")
      .value("off", TruncationMode::off)
      .value("abstractiveness", TruncationMode::abstractiveness)
      .value("factuality", TruncationMode::factuality)
      .value("sentence_factuality", TruncationMode::sentence_factuality);
  m.def("update_threshold_estimate", &update_threshold_estimate, py::arg("window"),
        py::arg("losses"), py::arg("pad_mask"), py::arg("percentile"));
  m.def("truncation_mask", &truncation_mask, py::arg("losses"), py::arg("pad_mask"),
        py::arg("q"), py::arg("mode"), py::arg("step"), py::arg("warmup_steps"));

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("n_enc_layers", &ModelConfig::n_enc_layers)
      .def_readwrite("n_dec_layers", &ModelConfig::n_dec_layers)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("max_src_len", &ModelConfig::max_src_len)
      .def_readwrite("max_tgt_len", &ModelConfig::max_tgt_len);

  py::class_<Seq2SeqModel>(m, "Seq2SeqModel")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"),
           py::arg("seed"))
      .def_property_readonly("n_params", &Seq2SeqModel::n_params)
      .def_property_readonly("manifest", &Seq2SeqModel::manifest);

  py::class_<TruncationConfig>(m, "TruncationConfig")
      .def(py::init<>())
      .def_readwrite("mode", &TruncationConfig::mode)
      .def_readwrite("percentile", &TruncationConfig::percentile)
      .def_readwrite("warmup_steps", &TruncationConfig::warmup_steps)
      .def_readwrite("window", &TruncationConfig::window);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("total_steps", &TrainConfig::total_steps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("max_grad_norm", &TrainConfig::max_grad_norm)
      .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("truncation", &TrainConfig::truncation);

  py::class_<StepInfo>(m, "StepInfo")
      .def_readonly("step", &StepInfo::step)
      .def_readonly("loss", &StepInfo::loss)
      .def_readonly("q", &StepInfo::q)
      .def_readonly("fraction_masked", &StepInfo::fraction_masked)
      .def_readonly("tokens", &StepInfo::tokens)
      .def_readonly("tokens_kept", &StepInfo::tokens_kept);

  // The model stays python-owned; keep_alive pins it for the trainer's life.
  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init<Seq2SeqModel&, std::vector<Example>, const TrainConfig&>(),
           py::arg("model"), py::arg("corpus"), py::arg("config"), py::keep_alive<1, 2>())
      .def("step", &PyTrainer::step);

  py::class_<DecodeConfig>(m, "DecodeConfig")
      .def(py::init<>())
      .def_readwrite("max_len", &DecodeConfig::max_len)
      .def_readwrite("min_len", &DecodeConfig::min_len)
      .def_readwrite("beam_size", &DecodeConfig::beam_size)
      .def_readwrite("length_penalty", &DecodeConfig::length_penalty)
      .def_readwrite("no_repeat_ngram", &DecodeConfig::no_repeat_ngram);

  py::class_<Decoded>(m, "Decoded")
      .def_readonly("tokens", &Decoded::tokens)
      .def_readonly("score", &Decoded::score)
      .def_readonly("finished", &Decoded::finished);

  m.def("decode", &decode, py::arg("model"), py::arg("src"), py::arg("config"));
  m.def("reference_token_probabilities",
        [](const Seq2SeqModel& model, const std::vector<Example>& examples) {
          py::list out;
          for (const TokenProbRecord& rec : reference_token_probabilities(model, examples)) {
            py::list labels;
            for (TokenLabel l : rec.labels) labels.append(token_label_name(l));
            out.append(py::make_tuple(rec.probs, labels));
          }
          return out;
        },
        py::arg("model"), py::arg("examples"),
        "Per example: (probs for reference positions 1.., label names)");
  m.def("summary_probability", &summary_probability, py::arg("model"), py::arg("example"));

  m.def("sha256_hex", [](const std::string& data) { return digest_hex(sha256(data)); },
        py::arg("data"));
  m.def("parse_experiment_config", &parse_experiment_config, py::arg("json_text"));
  m.def("experiment_config_to_json", &experiment_config_to_json, py::arg("config"));
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("synth", &ExperimentConfig::synth)
      .def_readwrite("dev_examples", &ExperimentConfig::dev_examples)
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("train", &ExperimentConfig::train)
      .def_readwrite("decode", &ExperimentConfig::decode)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir);
}
