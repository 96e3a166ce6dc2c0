#include "fedbev/pipeline.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "fedbev/error.hpp"
#include "fedbev/trip.hpp"

namespace fedbev {

std::vector<FeatureVector> engineer_features(const TripRecord& rec) {
  const std::size_t n = rec.size();
  if (rec.speed.size() != n || rec.acceleration.size() != n || rec.distance.size() != n) {
    throw ValidationError("engineer_features: column lengths differ");
  }
  std::vector<FeatureVector> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double v = rec.speed[t];
    const double dd = t == 0 ? 0.0 : rec.distance[t] - rec.distance[t - 1];
    if (v < 0.0) throw FeatureError(fmt::format("{}: negative speed {} at second {}", rec.vehicle_id, v, t));
    if (dd < 0.0) throw FeatureError(fmt::format("{}: negative distance step {} at second {}", rec.vehicle_id, dd, t));
    out[t] = {rec.acceleration[t], v, std::sqrt(v), v * v * v, std::sqrt(dd)};
  }
  return out;
}

WindowedDataset::WindowedDataset(std::size_t steps, std::size_t features) : steps_(steps), features_(features) {}

void WindowedDataset::push_back(std::span<const double> window, double label, std::size_t origin) {
  if (window.size() != steps_ * features_) throw ShapeError("WindowedDataset: window size mismatch");
  values_.insert(values_.end(), window.begin(), window.end());
  labels_.push_back(label);
  origins_.push_back(origin);
}

WindowedDataset WindowedDataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw ShapeError("WindowedDataset::slice out of range");
  WindowedDataset out(steps_, features_);
  const std::size_t stride = steps_ * features_;
  out.values_.assign(values_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                     values_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
  out.labels_.assign(labels_.begin() + static_cast<std::ptrdiff_t>(first),
                     labels_.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.origins_.assign(origins_.begin() + static_cast<std::ptrdiff_t>(first),
                      origins_.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

WindowedDataset WindowedDataset::select(std::span<const std::size_t> indices) const {
  WindowedDataset out(steps_, features_);
  for (std::size_t k : indices) {
    if (k >= size()) throw ShapeError("WindowedDataset::select out of range");
    out.push_back(window(k), labels_[k], origins_[k]);
  }
  return out;
}

WindowedDataset make_windows(std::span<const FeatureVector> features, std::span<const double> energies,
                             std::size_t steps, std::size_t stride) {
  if (steps == 0 || stride == 0) throw ValidationError("make_windows: steps and stride must be positive");
  if (features.size() != energies.size()) throw ShapeError("make_windows: features and energies differ in length");
  if (features.size() < steps) {
    throw EmptyDatasetError(fmt::format("make_windows: sequence of {} s is shorter than the {} s window",
                                        features.size(), steps));
  }
  WindowedDataset ds(steps, kFeatureCount);
  std::vector<double> buffer(steps * kFeatureCount);
  for (std::size_t origin = 0; origin + steps <= features.size(); origin += stride) {
    double label = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const FeatureVector& f = features[origin + s];
      std::copy(f.begin(), f.end(), buffer.begin() + static_cast<std::ptrdiff_t>(s * kFeatureCount));
      label += energies[origin + s];
    }
    ds.push_back(buffer, label, origin);
  }
  return ds;
}

void SplitSpec::validate() const {
  if (train < 1 || val < 1 || test < 1) throw ValidationError("split: ratio components must be positive integers");
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const auto total = static_cast<std::size_t>(spec.total());
  SplitSizes s{};
  s.train = n * static_cast<std::size_t>(spec.train) / total;
  s.val = n * static_cast<std::size_t>(spec.val) / total;
  s.test = n - s.train - s.val;
  return s;
}

DatasetSplit chronological_split(const WindowedDataset& ds, const SplitSpec& spec) {
  const SplitSizes s = split_sizes(ds.size(), spec);
  if (s.train == 0 || s.val == 0 || s.test == 0) {
    throw SplitError(fmt::format("split {}:{}:{} of {} windows leaves an empty part ({}/{}/{})", spec.train, spec.val,
                                 spec.test, ds.size(), s.train, s.val, s.test));
  }
  return {ds.slice(0, s.train), ds.slice(s.train, s.val), ds.slice(s.train + s.val, s.test)};
}

Standardizer fit_standardizer(const WindowedDataset& train) {
  if (train.empty()) throw EmptyDatasetError("fit_standardizer: empty training set");
  const std::size_t f = train.features();
  const auto& values = train.values();
  const std::size_t rows = values.size() / f;
  Standardizer s;
  s.mean.assign(f, 0.0);
  s.stddev.assign(f, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) s.mean[j] += values[r * f + j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  // Second pass on centred values.
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const double d = values[r * f + j] - s.mean[j];
      s.stddev[j] += d * d;
    }
  }
  for (auto& sd : s.stddev) sd = std::sqrt(sd / static_cast<double>(rows));
  return s;
}

WindowedDataset apply_standardizer(const Standardizer& s, const WindowedDataset& ds) {
  const std::size_t f = ds.features();
  if (s.mean.size() != f) throw ShapeError("apply_standardizer: feature count mismatch");
  WindowedDataset out = ds;
  auto& values = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t j = i % f;
    values[i] = (values[i] - s.mean[j]) / s.scale(j);
  }
  return out;
}

WindowedDataset invert_standardizer(const Standardizer& s, const WindowedDataset& ds) {
  const std::size_t f = ds.features();
  if (s.mean.size() != f) throw ShapeError("invert_standardizer: feature count mismatch");
  WindowedDataset out = ds;
  auto& values = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t j = i % f;
    values[i] = values[i] * s.scale(j) + s.mean[j];
  }
  return out;
}

namespace {

std::vector<double> rolling_sum(std::span<const double> x, std::size_t window) {
  std::vector<double> out;
  if (x.size() < window) return out;
  out.reserve(x.size() - window + 1);
  for (std::size_t t = 0; t + window <= x.size(); ++t) {
    // Direct summation keeps each value independent of earlier ones.
    double s = 0.0;
    for (std::size_t k = 0; k < window; ++k) s += x[t + k];
    out.push_back(s);
  }
  return out;
}

bool is_constant(std::span<const double> x) {
  for (double v : x) {
    if (v != x.front()) return false;
  }
  return true;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return -2.0;  // undefined on this overlap; never preferred
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

std::size_t series_lag(std::span<const double> leading, std::span<const double> trailing, std::size_t max_lag) {
  if (leading.size() != trailing.size()) throw ShapeError("series_lag: series differ in length");
  if (leading.size() <= 2 * max_lag) throw ValidationError("series_lag: series must be longer than 2 * max_lag");
  if (is_constant(leading) || is_constant(trailing)) {
    throw CorrelationError("series_lag: correlation undefined for a constant series");
  }
  const std::size_t n = leading.size();
  std::size_t best_lag = 0;
  double best = -3.0;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    // trailing[t + lag] against leading[t]
    const double r = pearson(leading.subspan(0, n - lag), trailing.subspan(lag, n - lag));
    if (r > best) {
      best = r;
      best_lag = lag;
    }
  }
  return best_lag;
}

std::size_t speed_energy_lag(const TripRecord& rec, std::size_t max_lag, std::size_t window) {
  if (rec.size() <= 2 * max_lag) throw ValidationError("speed_energy_lag: record must be longer than 2 * max_lag");
  if (is_constant(rec.speed) || is_constant(rec.energy)) {
    throw CorrelationError("speed_energy_lag: correlation undefined for a constant series");
  }
  std::vector<double> mean_speed = rolling_sum(rec.speed, window);
  for (auto& v : mean_speed) v /= static_cast<double>(window);
  const std::vector<double> energy_sum = rolling_sum(rec.energy, window);
  return series_lag(mean_speed, energy_sum, max_lag);
}

}  // namespace fedbev
