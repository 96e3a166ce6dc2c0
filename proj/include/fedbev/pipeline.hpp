#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fedbev {

struct TripRecord;

inline constexpr std::size_t kFeatureCount = 5;

/// [a, v, sqrt(v), v^3, sqrt(dd)] for one second.
using FeatureVector = std::array<double, kFeatureCount>;

/// Fails with FeatureError on negative speed or a negative distance step.
/// The first distance step is defined as 0.
std::vector<FeatureVector> engineer_features(const TripRecord& rec);

/// Stride-1 (or wider) sliding windows of `steps` seconds. Window k covers
/// seconds [origin_k, origin_k + steps) and its label is the summed energy
/// over those seconds, in Wh.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(std::size_t steps, std::size_t features);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t steps() const { return steps_; }
  std::size_t features() const { return features_; }

  /// Row-major steps x features view of window k.
  std::span<const double> window(std::size_t k) const {
    return {values_.data() + k * steps_ * features_, steps_ * features_};
  }
  std::span<double> window(std::size_t k) {
    return {values_.data() + k * steps_ * features_, steps_ * features_};
  }
  double label(std::size_t k) const { return labels_[k]; }
  std::size_t origin(std::size_t k) const { return origins_[k]; }

  const std::vector<double>& labels() const { return labels_; }
  const std::vector<std::size_t>& origins() const { return origins_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  void push_back(std::span<const double> window, double label, std::size_t origin);

  /// Windows [first, first + count) as a new dataset.
  WindowedDataset slice(std::size_t first, std::size_t count) const;

  /// Windows at the given indices, in that order.
  WindowedDataset select(std::span<const std::size_t> indices) const;

 private:
  std::size_t steps_ = 0;
  std::size_t features_ = 0;
  std::vector<double> values_;
  std::vector<double> labels_;
  std::vector<std::size_t> origins_;
};

/// Throws EmptyDatasetError when the sequence is shorter than `steps`.
WindowedDataset make_windows(std::span<const FeatureVector> features, std::span<const double> energies,
                             std::size_t steps, std::size_t stride = 1);

/// Proportional train:val:test weights, e.g. {8, 1, 1}.
struct SplitSpec {
  int train = 8;
  int val = 1;
  int test = 1;

  int total() const { return train + val + test; }
  void validate() const;
};

struct SplitSizes {
  std::size_t train, val, test;
};

/// floor(n * train / total), floor(n * val / total), remainder to test.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

struct DatasetSplit {
  WindowedDataset train, val, test;
};

/// Contiguous, ordered, non-overlapping; throws SplitError when any part
/// would be empty.
DatasetSplit chronological_split(const WindowedDataset& ds, const SplitSpec& spec);

/// Per-feature population mean and standard deviation. Labels are never
/// transformed.
struct Standardizer {
  static constexpr double kStdFloor = 1e-12;

  std::vector<double> mean;
  std::vector<double> stddev;

  double scale(std::size_t f) const { return stddev[f] < kStdFloor ? kStdFloor : stddev[f]; }
};

Standardizer fit_standardizer(const WindowedDataset& train);
WindowedDataset apply_standardizer(const Standardizer& s, const WindowedDataset& ds);
WindowedDataset invert_standardizer(const Standardizer& s, const WindowedDataset& ds);

/// Lag in seconds by which the 60-s rolling energy sum trails the 60-s
/// rolling mean speed, chosen to maximise Pearson correlation over
/// [0, max_lag]. Ties go to the smaller lag.
std::size_t speed_energy_lag(const TripRecord& rec, std::size_t max_lag, std::size_t window = 60);

/// Same search on raw series (exposed for testing and for the report).
std::size_t series_lag(std::span<const double> leading, std::span<const double> trailing, std::size_t max_lag);

}  // namespace fedbev
