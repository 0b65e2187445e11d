#include "trunclab/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trunclab/errors.hpp"

namespace trunclab {

const char* truncation_mode_name(TruncationMode m) {
  switch (m) {
    case TruncationMode::off: return "off";
    case TruncationMode::abstractiveness: return "abstractiveness";
    case TruncationMode::factuality: return "factuality";
    case TruncationMode::sentence_factuality: return "sentence_factuality";
  }
  return "?";
}

TruncationMode truncation_mode_from_name(std::string_view name) {
  if (name == "off") return TruncationMode::off;
  if (name == "abstractiveness") return TruncationMode::abstractiveness;
  if (name == "factuality") return TruncationMode::factuality;
  if (name == "sentence_factuality") return TruncationMode::sentence_factuality;
  throw config_error("unknown truncation mode \"" + std::string(name) + "\"");
}

void validate_truncation_config(const TruncationConfig& cfg) {
  if (!(cfg.percentile >= 0.0 && cfg.percentile <= 100.0))
    throw config_error("truncation.percentile must be in [0, 100]");
  if (cfg.window < 1) throw config_error("truncation.window must be >= 1");
}

double nearest_rank_percentile(const std::vector<double>& values, double p) {
  if (values.empty()) throw config_error("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw config_error("percentile p must be in [0, 100]");
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::vector<double> scratch(values);
  auto nth = scratch.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(scratch.begin(), nth, scratch.end());
  return *nth;
}

LossWindow::LossWindow(std::size_t capacity) : buf_(capacity) {
  if (capacity == 0) throw config_error("loss window capacity must be >= 1");
}

void LossWindow::push(double loss) {
  if (!std::isfinite(loss)) throw numeric_error("non-finite loss pushed into the window");
  buf_[head_] = loss;
  head_ = (head_ + 1) % buf_.size();
  if (size_ < buf_.size()) ++size_;
}

double LossWindow::percentile(double p) const {
  if (size_ == 0) throw config_error("percentile of an empty window");
  return nearest_rank_percentile(values(), p);
}

std::vector<double> LossWindow::values() const {
  std::vector<double> out;
  out.reserve(size_);
  const std::size_t start = (head_ + buf_.size() - size_) % buf_.size();
  for (std::size_t i = 0; i < size_; ++i) out.push_back(buf_[(start + i) % buf_.size()]);
  return out;
}

double update_threshold_estimate(LossWindow& window, const std::vector<double>& losses,
                                 const std::vector<std::uint8_t>& pad_mask, double percentile) {
  if (losses.size() != pad_mask.size())
    throw config_error("threshold update: loss/pad length mismatch");
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (!pad_mask[i]) window.push(losses[i]);  // pad_mask: 1 marks a pad slot
  return window.percentile(percentile);
}

std::vector<std::uint8_t> truncation_mask(const std::vector<double>& losses,
                                          const std::vector<std::uint8_t>& pad_mask, double q,
                                          TruncationMode mode, std::uint64_t step,
                                          std::uint64_t warmup_steps) {
  if (losses.size() != pad_mask.size()) throw config_error("mask: loss/pad length mismatch");
  std::vector<std::uint8_t> mask(losses.size(), 0);
  const bool filtering = mode != TruncationMode::off && step > warmup_steps;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (pad_mask[i]) continue;
    if (!filtering) {
      mask[i] = 1;
      continue;
    }
    switch (mode) {
      case TruncationMode::abstractiveness:
        mask[i] = losses[i] > q ? 1 : 0;
        break;
      case TruncationMode::factuality:
        mask[i] = losses[i] < q ? 1 : 0;
        break;
      default:
        throw config_error("truncation_mask: sentence mode uses sentence_level_mask");
    }
  }
  return mask;
}

std::vector<double> apply_mask(const std::vector<double>& losses,
                               const std::vector<std::uint8_t>& mask) {
  if (losses.size() != mask.size()) throw config_error("apply_mask: length mismatch");
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) out[i] = mask[i] ? losses[i] : 0.0;
  return out;
}

std::vector<std::uint8_t> sentence_level_mask(LossWindow& score_window,
                                              const std::vector<double>& example_scores,
                                              double percentile, std::uint64_t step,
                                              std::uint64_t warmup_steps) {
  for (double s : example_scores) score_window.push(s);
  const double q = score_window.percentile(percentile);
  std::vector<std::uint8_t> mask(example_scores.size(), 1);
  if (step > warmup_steps)
    for (std::size_t i = 0; i < example_scores.size(); ++i)
      mask[i] = example_scores[i] <= q ? 1 : 0;
  return mask;
}

}  // namespace trunclab
