#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedbev/pipeline.hpp"

namespace fedbev {

class Rng;

enum class ModelKind { ann, gru, lstm };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

/// Regressor shape. Dropout rate i sits between hidden layers i and i+1.
struct ArchSpec {
  ModelKind kind = ModelKind::lstm;
  std::vector<std::size_t> hidden{40, 32, 16};
  std::vector<double> dropout{0.10, 0.20};
  std::size_t steps = 60;
  std::size_t features = kFeatureCount;

  /// Layer name prefix for hidden layer i (0-based): "lstm1", "dense2", ...
  std::string layer_name(std::size_t i) const;
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

/// A named, shaped slice of the flat parameter array. Matrices are stored
/// column-major.
struct Segment {
  std::string name;   // "<layer>.<tensor>", e.g. "lstm2.U"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::string note;   // gate layout etc.

  std::size_t size() const { return rows * cols; }
  std::string layer() const { return name.substr(0, name.find('.')); }

  bool operator==(const Segment&) const = default;
};

class LayerPartition {
 public:
  LayerPartition() = default;
  explicit LayerPartition(std::vector<Segment> segments);

  /// Partition for an architecture. Segment order: hidden layers in order
  /// (W, U, b for recurrent kinds; W, b for dense), then out.W, out.b.
  ///   lstm gates are stacked i, f, g, o and the forget bias starts at 1;
  ///   gru gates are stacked z, r, n with n = tanh(W_n x + U_n (r*h) + b_n).
  static LayerPartition for_arch(const ArchSpec& arch);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_; }
  const Segment& at(std::string_view name) const;
  const Segment* find(std::string_view name) const;

  /// Distinct layer prefixes in order of appearance.
  std::vector<std::string> layers() const;

  bool operator==(const LayerPartition& other) const { return segments_ == other.segments_; }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Flat 64-bit parameters plus the partition describing them.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const LayerPartition> partition, double fill = 0.0);
  ParamVector(std::shared_ptr<const LayerPartition> partition, std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  const LayerPartition& partition() const { return *partition_; }
  const std::shared_ptr<const LayerPartition>& partition_ptr() const { return partition_; }
  bool same_partition(const ParamVector& other) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  /// Copies named segments into one contiguous buffer / back again.
  std::vector<double> gather(std::span<const std::string> segment_names) const;
  void scatter(std::span<const std::string> segment_names, std::span<const double> data);

  /// Bitwise equality of values and partition.
  bool operator==(const ParamVector& other) const;

 private:
  std::shared_ptr<const LayerPartition> partition_;
  std::vector<double> values_;
};

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
ParamVector init_model(const ArchSpec& arch, std::uint64_t seed);

enum class Mode { train, eval };

/// Prediction for one window (row-major steps x features).
double forward(const ParamVector& params, const ArchSpec& arch, std::span<const double> window,
               Mode mode = Mode::eval, Rng* rng = nullptr);

/// Batched eval-mode predictions for ds[indices] (all windows when empty).
std::vector<double> predict(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                            std::span<const std::size_t> indices = {});

double mae_loss(std::span<const double> preds, std::span<const double> labels);

/// Inverted dropout on a flat activation buffer: each entry is zeroed with
/// probability `rate`, survivors are scaled by 1/(1-rate).
void apply_dropout(std::span<double> activations, double rate, Rng& rng);

struct LossGradient {
  double loss = 0.0;
  ParamVector gradient;
};

/// Exact gradient of the batch MAE by backpropagation through time. With
/// `rng` set, dropout masks are drawn once and used by both passes;
/// otherwise dropout is off.
LossGradient backward(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                      std::span<const std::size_t> batch, Rng* rng = nullptr);

/// Central differences (L(w + h e_k) - L(w - h e_k)) / 2h for the listed
/// coordinates; other entries of the result are zero.
ParamVector finite_diff_gradient(const std::function<double(const ParamVector&)>& loss, const ParamVector& params,
                                 std::span<const std::size_t> coordinates, double h = 1e-5);

/// Same, with the loss taken as the dropout-free batch MAE.
ParamVector finite_diff_gradient(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                                 std::span<const std::size_t> batch, std::span<const std::size_t> coordinates,
                                 double h = 1e-5);

/// Eval-mode MAE over every window of ds. Throws EmptyDatasetError.
double evaluate(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState for_size(std::size_t n, double lr = 1e-3);
};

void adam_step(AdamState& opt, ParamVector& params, const ParamVector& grad);

struct TrainConfig {
  std::size_t batch_size = 70;
  int epochs = 65;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Epoch counter offset for the per-epoch random streams, so that a run
  /// split into several calls replays one long call exactly.
  std::uint64_t first_epoch = 0;

  void validate() const;
};

/// FedProx penalty (mu/2) * ||w - anchor||^2 added to every batch loss.
struct ProximalTerm {
  const ParamVector* anchor = nullptr;
  double mu = 0.0;
};

/// E epochs of shuffled mini-batches with Adam. The optimizer state is
/// carried in `opt`.
ParamVector train_local(ParamVector params, const ArchSpec& arch, const WindowedDataset& ds,
                        const TrainConfig& cfg, AdamState& opt, const ProximalTerm& prox = {});

/// Convenience overload with a fresh Adam state.
ParamVector train_local(ParamVector params, const ArchSpec& arch, const WindowedDataset& ds,
                        const TrainConfig& cfg, double lr = 1e-3);

}  // namespace fedbev
