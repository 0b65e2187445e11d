#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace trunclab {

enum class TruncationMode : std::uint8_t {
  off = 0,
  abstractiveness = 1,      // keep tokens with loss strictly above the threshold
  factuality = 2,           // keep tokens with loss strictly below the threshold
  sentence_factuality = 3,  // example-level variant of factuality
};

const char* truncation_mode_name(TruncationMode m);
TruncationMode truncation_mode_from_name(std::string_view name);

struct TruncationConfig {
  TruncationMode mode = TruncationMode::off;
  double percentile = 50.0;
  std::uint64_t warmup_steps = 0;  // filtering starts strictly after this step
  std::size_t window = 10000;      // token losses retained for the threshold
};

void validate_truncation_config(const TruncationConfig& cfg);

// Nearest-rank percentile: r = max(1, ceil(p/100 * n)), result is the r-th
// smallest value and therefore always a member of the input. p = 0 selects
// the minimum, p = 100 the maximum. Input must be non-empty, p in [0, 100].
double nearest_rank_percentile(const std::vector<double>& values, double p);

// FIFO ring of the most recent per-token losses. Pad positions must never be
// pushed; the threshold estimate is a statistic of real tokens only.
class LossWindow {
 public:
  explicit LossWindow(std::size_t capacity);

  void push(double loss);  // finite values only
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return buf_.size(); }
  bool empty() const { return size_ == 0; }

  double percentile(double p) const;

  // Contents oldest-first; test and serialization helper.
  std::vector<double> values() const;

 private:
  std::vector<double> buf_;
  std::size_t head_ = 0;  // next write slot
  std::size_t size_ = 0;
};

// One threshold update step: batch losses enter the window first (pads
// excluded), then the percentile is read from the updated window. Returns the
// current threshold q.
double update_threshold_estimate(LossWindow& window, const std::vector<double>& losses,
                                 const std::vector<std::uint8_t>& pad_mask, double percentile);

// Per-token keep mask. During warmup (step <= warmup_steps) and in mode off
// every real token is kept; pad positions get zero weight unconditionally.
// Both filtering modes use strict inequalities, so a loss exactly equal to q
// is dropped by either one.
std::vector<std::uint8_t> truncation_mask(const std::vector<double>& losses,
                                          const std::vector<std::uint8_t>& pad_mask, double q,
                                          TruncationMode mode, std::uint64_t step,
                                          std::uint64_t warmup_steps);

// Elementwise product; mask entries are 0 or 1.
std::vector<double> apply_mask(const std::vector<double>& losses,
                               const std::vector<std::uint8_t>& mask);

// Example-level baseline: scores are per-example mean non-pad token losses.
// They feed a window of their own, and an example is kept when its score is
// <= the percentile of that window (non-strict, unlike the token modes).
// Warmup keeps everything; scores enter the window from step one either way.
std::vector<std::uint8_t> sentence_level_mask(LossWindow& score_window,
                                              const std::vector<double>& example_scores,
                                              double percentile, std::uint64_t step,
                                              std::uint64_t warmup_steps);

}  // namespace trunclab
