#include "fedbev/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "fedbev/error.hpp"
#include "fedbev/rng.hpp"

namespace fedbev {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ann: return "ann";
    case ModelKind::gru: return "gru";
    case ModelKind::lstm: return "lstm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "ann") return ModelKind::ann;
  if (text == "gru") return ModelKind::gru;
  if (text == "lstm") return ModelKind::lstm;
  throw ValidationError(fmt::format("unknown model kind '{}'", text));
}

std::string ArchSpec::layer_name(std::size_t i) const {
  const std::string_view prefix = kind == ModelKind::ann ? "dense" : to_string(kind);
  return fmt::format("{}{}", prefix, i + 1);
}

void ArchSpec::validate() const {
  if (hidden.empty()) throw ValidationError("arch: at least one hidden layer required");
  for (auto h : hidden) {
    if (h == 0) throw ValidationError("arch: hidden sizes must be positive");
  }
  if (dropout.size() != hidden.size() - 1) {
    throw ValidationError(fmt::format("arch: expected {} dropout rates, got {}", hidden.size() - 1, dropout.size()));
  }
  for (double p : dropout) {
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("arch: dropout rates must be in [0, 1)");
  }
  if (steps == 0 || features == 0) throw ValidationError("arch: input shape must be non-empty");
}

// ---------------------------------------------------------------------------
// Partition / parameter vector

LayerPartition::LayerPartition(std::vector<Segment> segments) : segments_(std::move(segments)) {
  std::size_t offset = 0;
  for (auto& s : segments_) {
    if (s.offset != offset) throw PartitionMismatchError(fmt::format("segment {} does not tile the array", s.name));
    offset += s.size();
  }
  total_ = offset;
}

LayerPartition LayerPartition::for_arch(const ArchSpec& arch) {
  arch.validate();
  std::vector<Segment> segs;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols, std::string note = {}) {
    segs.push_back({std::move(name), rows, cols, offset, std::move(note)});
    offset += rows * cols;
  };
  std::size_t in = arch.kind == ModelKind::ann ? arch.steps * arch.features : arch.features;
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    const std::size_t h = arch.hidden[l];
    const std::string name = arch.layer_name(l);
    switch (arch.kind) {
      case ModelKind::ann:
        add(name + ".W", h, in, "activation=tanh");
        add(name + ".b", h, 1);
        break;
      case ModelKind::lstm: {
        const std::string note = "gates=i,f,g,o;forget_bias=1";
        add(name + ".W", 4 * h, in, note);
        add(name + ".U", 4 * h, h, note);
        add(name + ".b", 4 * h, 1, note);
        break;
      }
      case ModelKind::gru: {
        const std::string note = "gates=z,r,n;n=tanh(Wn*x+Un*(r*h)+bn);h=(1-z)*n+z*h";
        add(name + ".W", 3 * h, in, note);
        add(name + ".U", 3 * h, h, note);
        add(name + ".b", 3 * h, 1, note);
        break;
      }
    }
    in = h;
  }
  add("out.W", 1, in, "linear");
  add("out.b", 1, 1);
  return LayerPartition(std::move(segs));
}

const Segment* LayerPartition::find(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const Segment& LayerPartition::at(std::string_view name) const {
  if (const Segment* s = find(name)) return *s;
  throw PartitionMismatchError(fmt::format("no segment named '{}'", name));
}

std::vector<std::string> LayerPartition::layers() const {
  std::vector<std::string> out;
  for (const auto& s : segments_) {
    std::string layer = s.layer();
    if (out.empty() || out.back() != layer) out.push_back(std::move(layer));
  }
  return out;
}

ParamVector::ParamVector(std::shared_ptr<const LayerPartition> partition, double fill)
    : partition_(std::move(partition)), values_(partition_->total_size(), fill) {}

ParamVector::ParamVector(std::shared_ptr<const LayerPartition> partition, std::vector<double> values)
    : partition_(std::move(partition)), values_(std::move(values)) {
  if (values_.size() != partition_->total_size()) throw PartitionMismatchError("value count does not match partition");
}

bool ParamVector::same_partition(const ParamVector& other) const {
  if (partition_ == other.partition_) return true;
  if (!partition_ || !other.partition_) return false;
  return *partition_ == *other.partition_;
}

std::span<double> ParamVector::segment(std::string_view name) {
  const Segment& s = partition_->at(name);
  return {values_.data() + s.offset, s.size()};
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const Segment& s = partition_->at(name);
  return {values_.data() + s.offset, s.size()};
}

std::vector<double> ParamVector::gather(std::span<const std::string> names) const {
  std::vector<double> out;
  for (const auto& name : names) {
    const auto seg = segment(name);
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

void ParamVector::scatter(std::span<const std::string> names, std::span<const double> data) {
  std::size_t pos = 0;
  for (const auto& name : names) {
    auto seg = segment(name);
    if (pos + seg.size() > data.size()) throw PartitionMismatchError("scatter: buffer too short");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(pos), seg.size(), seg.begin());
    pos += seg.size();
  }
  if (pos != data.size()) throw PartitionMismatchError("scatter: buffer too long");
}

bool ParamVector::operator==(const ParamVector& other) const {
  if (!same_partition(other) || values_.size() != other.values_.size()) return false;
  return values_.empty() ||
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

ParamVector init_model(const ArchSpec& arch, std::uint64_t seed) {
  auto partition = std::make_shared<const LayerPartition>(LayerPartition::for_arch(arch));
  ParamVector params(partition, 0.0);
  Rng rng(derive_seed(seed, "init"));
  for (const Segment& s : partition->segments()) {
    auto data = params.segment(s.name);
    const bool bias = s.name.ends_with(".b");
    if (bias) {
      if (arch.kind == ModelKind::lstm && s.layer() != "out") {
        const std::size_t h = s.rows / 4;
        std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(h), h, 1.0);  // forget gate
      }
      continue;
    }
    // Glorot uniform with fan_in = cols, fan_out = rows.
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    for (auto& w : data) w = rng.uniform(-limit, limit);
  }
  return params;
}

void apply_dropout(std::span<double> activations, double rate, Rng& rng) {
  if (rate <= 0.0) return;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& a : activations) a = rng.uniform() < rate ? 0.0 : a * keep_scale;
}

double mae_loss(std::span<const double> preds, std::span<const double> labels) {
  if (preds.size() != labels.size()) throw ShapeError("mae_loss: length mismatch");
  if (preds.empty()) throw EmptyDatasetError("mae_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i] - labels[i]);
  return sum / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Batched evaluator. Samples are columns; every cache is kept so a backward
// pass can follow the forward pass that filled it.

namespace {

using Mat = Eigen::MatrixXd;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

Mat sigmoid(const Mat& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

class Evaluator {
 public:
  Evaluator(const ArchSpec& arch, const LayerPartition& partition) : arch_(arch), partition_(partition) {
    arch_.validate();
    const std::size_t layers = arch_.hidden.size();
    weights_.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string name = arch_.layer_name(l);
      weights_[l].W = &partition_.at(name + ".W");
      weights_[l].b = &partition_.at(name + ".b");
      if (arch_.kind != ModelKind::ann) weights_[l].U = &partition_.at(name + ".U");
    }
    out_W_ = &partition_.at("out.W");
    out_b_ = &partition_.at("out.b");
    layers_.resize(layers);
  }

  /// Forward pass over ds[idx]; returns the 1 x B prediction row.
  const Eigen::RowVectorXd& forward(std::span<const double> params, const WindowedDataset& ds,
                                    std::span<const std::size_t> idx, Rng* rng) {
    batch_ = idx.size();
    if (ds.steps() != arch_.steps || ds.features() != arch_.features) {
      throw ShapeError(fmt::format("window shape {}x{} does not match architecture {}x{}", ds.steps(), ds.features(),
                                   arch_.steps, arch_.features));
    }
    load(params);
    gather_inputs(ds, idx);
    if (arch_.kind == ModelKind::ann) {
      forward_dense(rng);
    } else {
      forward_recurrent(rng);
    }
    const Mat& top = top_output();
    y_.noalias() = out_W_v_ * top;
    y_.array() += out_b_v_;
    return y_;
  }

  /// Accumulates d(loss)/d(params) into `grad` (zeroed by the caller),
  /// given d(loss)/d(prediction) for the batch of the last forward call.
  void backward(const Eigen::RowVectorXd& dy, std::span<double> grad) {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      LayerWeights& w = weights_[l];
      w.dW.setZero(w.Wv.rows(), w.Wv.cols());
      w.dU.setZero(w.Uv.rows(), w.Uv.cols());
      w.db.setZero(w.bv.size());
    }
    const Mat& top = top_output();
    Mat d_out_W = dy * top.transpose();
    Mat d_top = out_W_v_.transpose() * dy;
    if (arch_.kind == ModelKind::ann) {
      backward_dense(std::move(d_top));
    } else {
      backward_recurrent(d_top);
    }
    for (const LayerWeights& w : weights_) {
      mut(grad, *w.W) += w.dW;
      if (w.U) mut(grad, *w.U) += w.dU;
      mut_vec(grad, *w.b) += w.db;
    }
    mut(grad, *out_W_) += d_out_W;
    grad[out_b_->offset] += dy.sum();
  }

 private:
  // Weights are copied into Eigen-owned storage before use: product
  // kernels round differently depending on the alignment of their operands,
  // and the caller's vectors give no alignment guarantee.
  struct LayerWeights {
    const Segment* W = nullptr;
    const Segment* U = nullptr;
    const Segment* b = nullptr;
    Mat Wv, Uv, dW, dU;
    Eigen::VectorXd bv, db;
  };

  void load(std::span<const double> p) {
    for (LayerWeights& w : weights_) {
      w.Wv = map(p, *w.W);
      if (w.U) w.Uv = map(p, *w.U);
      w.bv = vec(p, *w.b);
    }
    out_W_v_ = map(p, *out_W_);
    out_b_v_ = p[out_b_->offset];
  }

  struct LayerCache {
    std::vector<Mat> in;      // per step input (after dropout of the previous layer)
    std::vector<Mat> gates;   // activated gates per step
    std::vector<Mat> cell;    // lstm cell state
    std::vector<Mat> tanh_c;  // lstm tanh(cell)
    std::vector<Mat> reset_h; // gru r * h_prev
    std::vector<Mat> h;       // per step output
    std::vector<Mat> mask;    // dropout mask applied to h before the next layer
    bool masked = false;
  };

  static ConstMap map(std::span<const double> p, const Segment& s) {
    return ConstMap(p.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }
  static MutMap mut(std::span<double> p, const Segment& s) {
    return MutMap(p.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
  }
  static Eigen::Map<const Eigen::VectorXd> vec(std::span<const double> p, const Segment& s) {
    return Eigen::Map<const Eigen::VectorXd>(p.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  }
  static Eigen::Map<Eigen::VectorXd> mut_vec(std::span<double> p, const Segment& s) {
    return Eigen::Map<Eigen::VectorXd>(p.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  }

  const Mat& top_output() const {
    const LayerCache& last = layers_.back();
    return arch_.kind == ModelKind::ann ? last.h.front() : last.h.back();
  }

  void gather_inputs(const WindowedDataset& ds, std::span<const std::size_t> idx) {
    const auto B = static_cast<Eigen::Index>(idx.size());
    const std::size_t T = arch_.steps;
    const std::size_t F = arch_.features;
    LayerCache& first = layers_.front();
    if (arch_.kind == ModelKind::ann) {
      first.in.resize(1);
      first.in[0].resize(static_cast<Eigen::Index>(T * F), B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const auto w = ds.window(idx[static_cast<std::size_t>(b)]);
        std::copy(w.begin(), w.end(), first.in[0].col(b).data());
      }
      return;
    }
    first.in.resize(T);
    for (std::size_t t = 0; t < T; ++t) first.in[t].resize(static_cast<Eigen::Index>(F), B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto w = ds.window(idx[static_cast<std::size_t>(b)]);
      for (std::size_t t = 0; t < T; ++t) {
        std::copy_n(w.data() + t * F, F, first.in[t].col(b).data());
      }
    }
  }

  void draw_mask(LayerCache& cache, std::size_t layer, std::size_t count, Eigen::Index rows, Rng* rng) {
    const bool active = rng != nullptr && layer + 1 < arch_.hidden.size() && arch_.dropout[layer] > 0.0;
    cache.masked = active;
    if (!active) return;
    cache.mask.resize(count);
    for (auto& m : cache.mask) {
      m.setOnes(rows, static_cast<Eigen::Index>(batch_));
      apply_dropout(std::span<double>(m.data(), static_cast<std::size_t>(m.size())), arch_.dropout[layer], *rng);
    }
  }

  // Output of layer l as seen by layer l + 1.
  void pass_on(std::size_t l) {
    if (l + 1 >= layers_.size()) return;
    LayerCache& cur = layers_[l];
    LayerCache& next = layers_[l + 1];
    next.in.resize(cur.h.size());
    for (std::size_t t = 0; t < cur.h.size(); ++t) {
      if (cur.masked) {
        next.in[t] = cur.h[t].cwiseProduct(cur.mask[t]);
      } else {
        next.in[t] = cur.h[t];
      }
    }
  }

  void forward_dense(Rng* rng) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      LayerCache& c = layers_[l];
      const LayerWeights& w = weights_[l];
      c.h.resize(1);
      c.h[0].noalias() = w.Wv * c.in[0];
      c.h[0].colwise() += w.bv;
      c.h[0] = c.h[0].array().tanh().matrix();
      draw_mask(c, l, 1, static_cast<Eigen::Index>(arch_.hidden[l]), rng);
      pass_on(l);
    }
  }

  void backward_dense(Mat d_out) {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      LayerCache& c = layers_[l];
      LayerWeights& w = weights_[l];
      Mat dz = (d_out.array() * (1.0 - c.h[0].array().square())).matrix();
      w.dW.noalias() += dz * c.in[0].transpose();
      w.db += dz.rowwise().sum();
      if (l == 0) break;
      d_out.noalias() = w.Wv.transpose() * dz;
      const LayerCache& prev = layers_[l - 1];
      if (prev.masked) d_out.array() *= prev.mask[0].array();
    }
  }

  void forward_recurrent(Rng* rng) {
    const std::size_t T = arch_.steps;
    const auto B = static_cast<Eigen::Index>(batch_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      LayerCache& c = layers_[l];
      const LayerWeights& w = weights_[l];
      const auto H = static_cast<Eigen::Index>(arch_.hidden[l]);
      const Mat& W = w.Wv;
      const Mat& U = w.Uv;
      const Eigen::VectorXd& bias = w.bv;
      c.gates.resize(T);
      c.h.resize(T);
      const Mat zero = Mat::Zero(H, B);
      if (arch_.kind == ModelKind::lstm) {
        c.cell.resize(T);
        c.tanh_c.resize(T);
        Mat z(4 * H, B);
        for (std::size_t t = 0; t < T; ++t) {
          const Mat& h_prev = t ? c.h[t - 1] : zero;
          const Mat& c_prev = t ? c.cell[t - 1] : zero;
          z.noalias() = W * c.in[t];
          z.noalias() += U * h_prev;
          z.colwise() += bias;
          Mat& g = c.gates[t];
          g.resize(4 * H, B);
          g.topRows(2 * H) = sigmoid(z.topRows(2 * H));
          g.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
          g.bottomRows(H) = sigmoid(z.bottomRows(H));
          c.cell[t] = g.topRows(H).cwiseProduct(g.middleRows(2 * H, H)) + g.middleRows(H, H).cwiseProduct(c_prev);
          c.tanh_c[t] = c.cell[t].array().tanh().matrix();
          c.h[t] = g.bottomRows(H).cwiseProduct(c.tanh_c[t]);
        }
      } else {
        c.reset_h.resize(T);
        Mat a(3 * H, B);
        for (std::size_t t = 0; t < T; ++t) {
          const Mat& h_prev = t ? c.h[t - 1] : zero;
          a.noalias() = W * c.in[t];
          a.colwise() += bias;
          Mat& g = c.gates[t];
          g.resize(3 * H, B);
          Mat zr = a.topRows(2 * H);
          zr.noalias() += U.topRows(2 * H) * h_prev;
          g.topRows(2 * H) = sigmoid(zr);
          c.reset_h[t] = g.middleRows(H, H).cwiseProduct(h_prev);
          Mat n = a.bottomRows(H);
          n.noalias() += U.bottomRows(H) * c.reset_h[t];
          g.bottomRows(H) = n.array().tanh().matrix();
          const auto zg = g.topRows(H).array();
          c.h[t] = ((1.0 - zg) * g.bottomRows(H).array() + zg * h_prev.array()).matrix();
        }
      }
      draw_mask(c, l, T, H, rng);
      pass_on(l);
    }
  }

  void backward_recurrent(const Mat& d_top) {
    const std::size_t T = arch_.steps;
    const auto B = static_cast<Eigen::Index>(batch_);
    // Gradient w.r.t. each step's output of the current layer.
    std::vector<Mat> d_h(T);
    for (std::size_t t = 0; t + 1 < T; ++t) d_h[t].setZero(d_top.rows(), B);
    d_h[T - 1] = d_top;

    for (std::size_t l = layers_.size(); l-- > 0;) {
      LayerCache& c = layers_[l];
      LayerWeights& w = weights_[l];
      const auto H = static_cast<Eigen::Index>(arch_.hidden[l]);
      const Mat& W = w.Wv;
      const Mat& U = w.Uv;
      Mat& dW = w.dW;
      Mat& dU = w.dU;
      Eigen::VectorXd& db = w.db;
      const bool need_input_grad = l > 0;
      std::vector<Mat> d_in(need_input_grad ? T : 0);
      const Mat zero = Mat::Zero(H, B);
      Mat dh_next = Mat::Zero(H, B);

      if (arch_.kind == ModelKind::lstm) {
        Mat dc_next = Mat::Zero(H, B);
        Mat dz(4 * H, B);
        for (std::size_t t = T; t-- > 0;) {
          const Mat& g = c.gates[t];
          const Mat& h_prev = t ? c.h[t - 1] : zero;
          const Mat& c_prev = t ? c.cell[t - 1] : zero;
          const auto i = g.topRows(H).array();
          const auto f = g.middleRows(H, H).array();
          const auto gg = g.middleRows(2 * H, H).array();
          const auto o = g.bottomRows(H).array();
          const auto tc = c.tanh_c[t].array();
          const Eigen::ArrayXXd dh = d_h[t].array() + dh_next.array();
          const Eigen::ArrayXXd dc = dh * o * (1.0 - tc.square()) + dc_next.array();
          dz.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
          dz.middleRows(H, H) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
          dz.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
          dz.bottomRows(H) = (dh * tc * o * (1.0 - o)).matrix();
          dc_next = (dc * f).matrix();
          dW.noalias() += dz * c.in[t].transpose();
          if (t) dU.noalias() += dz * h_prev.transpose();
          db += dz.rowwise().sum();
          dh_next.noalias() = U.transpose() * dz;
          if (need_input_grad) d_in[t].noalias() = W.transpose() * dz;
        }
      } else {
        Mat da(3 * H, B);
        for (std::size_t t = T; t-- > 0;) {
          const Mat& g = c.gates[t];
          const Mat& h_prev = t ? c.h[t - 1] : zero;
          const auto z = g.topRows(H).array();
          const auto r = g.middleRows(H, H).array();
          const auto n = g.bottomRows(H).array();
          const Eigen::ArrayXXd dh = d_h[t].array() + dh_next.array();
          const Eigen::ArrayXXd dn_pre = dh * (1.0 - z) * (1.0 - n.square());
          da.bottomRows(H) = dn_pre.matrix();
          const Mat d_rh = U.bottomRows(H).transpose() * dn_pre.matrix();
          da.topRows(H) = (dh * (h_prev.array() - n) * z * (1.0 - z)).matrix();
          da.middleRows(H, H) = (d_rh.array() * h_prev.array() * r * (1.0 - r)).matrix();
          dW.noalias() += da * c.in[t].transpose();
          db += da.rowwise().sum();
          if (t) {
            dU.topRows(2 * H).noalias() += da.topRows(2 * H) * h_prev.transpose();
            dU.bottomRows(H).noalias() += da.bottomRows(H) * c.reset_h[t].transpose();
          }
          dh_next = (dh * z + d_rh.array() * r).matrix();
          dh_next.noalias() += U.topRows(2 * H).transpose() * da.topRows(2 * H);
          if (need_input_grad) d_in[t].noalias() = W.transpose() * da;
        }
      }

      if (!need_input_grad) break;
      const LayerCache& prev = layers_[l - 1];
      for (std::size_t t = 0; t < T; ++t) {
        if (prev.masked) d_in[t].array() *= prev.mask[t].array();
      }
      d_h = std::move(d_in);
    }
  }

  ArchSpec arch_;
  const LayerPartition& partition_;
  std::vector<LayerWeights> weights_;
  const Segment* out_W_ = nullptr;
  const Segment* out_b_ = nullptr;
  std::vector<LayerCache> layers_;
  Mat out_W_v_;
  double out_b_v_ = 0.0;
  Eigen::RowVectorXd y_;
  std::size_t batch_ = 0;
};

void check_params(const ParamVector& params, const ArchSpec& arch) {
  if (params.size() == 0) throw ShapeError("empty parameter vector");
  if (!(params.partition() == LayerPartition::for_arch(arch))) {
    throw PartitionMismatchError("parameter partition does not match the architecture");
  }
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

constexpr std::size_t kEvalChunk = 256;

}  // namespace

double forward(const ParamVector& params, const ArchSpec& arch, std::span<const double> window, Mode mode, Rng* rng) {
  check_params(params, arch);
  if (window.size() != arch.steps * arch.features) {
    throw ShapeError(fmt::format("window has {} values, architecture expects {}", window.size(),
                                 arch.steps * arch.features));
  }
  WindowedDataset one(arch.steps, arch.features);
  one.push_back(window, 0.0, 0);
  Evaluator ev(arch, params.partition());
  const std::size_t idx = 0;
  return ev.forward(params.values(), one, {&idx, 1}, mode == Mode::train ? rng : nullptr)(0);
}

std::vector<double> predict(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                            std::span<const std::size_t> indices) {
  check_params(params, arch);
  std::vector<std::size_t> owned;
  if (indices.empty()) {
    owned = all_indices(ds.size());
    indices = owned;
  }
  std::vector<double> out;
  out.reserve(indices.size());
  Evaluator ev(arch, params.partition());
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    const auto& y = ev.forward(params.values(), ds, chunk, nullptr);
    out.insert(out.end(), y.data(), y.data() + y.size());
  }
  return out;
}

namespace {

LossGradient loss_gradient(Evaluator& ev, const ParamVector& params, const WindowedDataset& ds,
                           std::span<const std::size_t> batch, Rng* rng) {
  if (batch.empty()) throw EmptyDatasetError("backward: empty batch");
  const auto& y = ev.forward(params.values(), ds, batch, rng);
  const auto B = static_cast<Eigen::Index>(batch.size());
  Eigen::RowVectorXd dy(B);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const double r = y(b) - ds.label(batch[static_cast<std::size_t>(b)]);
    loss += std::abs(r);
    // Subgradient of |r| is taken as 0 at r == 0.
    dy(b) = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
  }
  dy /= static_cast<double>(B);
  LossGradient out{loss / static_cast<double>(B), ParamVector(params.partition_ptr(), 0.0)};
  ev.backward(dy, out.gradient.values());
  return out;
}

}  // namespace

LossGradient backward(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                      std::span<const std::size_t> batch, Rng* rng) {
  check_params(params, arch);
  Evaluator ev(arch, params.partition());
  return loss_gradient(ev, params, ds, batch, rng);
}

ParamVector finite_diff_gradient(const std::function<double(const ParamVector&)>& loss, const ParamVector& params,
                                 std::span<const std::size_t> coordinates, double h) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_gradient: h must be positive");
  ParamVector grad(params.partition_ptr(), 0.0);
  ParamVector probe = params;
  for (std::size_t k : coordinates) {
    if (k >= params.size()) throw ShapeError("finite_diff_gradient: coordinate out of range");
    const double w = params[k];
    probe[k] = w + h;
    const double up = loss(probe);
    probe[k] = w - h;
    const double down = loss(probe);
    probe[k] = w;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

ParamVector finite_diff_gradient(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds,
                                 std::span<const std::size_t> batch, std::span<const std::size_t> coordinates,
                                 double h) {
  std::vector<double> labels;
  for (std::size_t k : batch) labels.push_back(ds.label(k));
  auto loss = [&](const ParamVector& w) { return mae_loss(predict(w, arch, ds, batch), labels); };
  return finite_diff_gradient(loss, params, coordinates, h);
}

double evaluate(const ParamVector& params, const ArchSpec& arch, const WindowedDataset& ds) {
  if (ds.empty()) throw EmptyDatasetError("evaluate: empty dataset");
  const auto preds = predict(params, arch, ds);
  return mae_loss(preds, ds.labels());
}

// ---------------------------------------------------------------------------
// Optimisation

AdamState AdamState::for_size(std::size_t n, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_step(AdamState& opt, ParamVector& params, const ParamVector& grad) {
  if (grad.size() != params.size()) throw ShapeError("adam_step: gradient size mismatch");
  if (opt.m.empty() && opt.v.empty()) {
    opt.m.assign(params.size(), 0.0);
    opt.v.assign(params.size(), 0.0);
  }
  if (opt.m.size() != params.size() || opt.v.size() != params.size()) throw ShapeError("adam_step: moment size mismatch");
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  auto w = params.values();
  const auto g = grad.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
    const double m_hat = opt.m[i] / c1;
    const double v_hat = opt.v[i] / c2;
    w[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
}

ParamVector train_local(ParamVector params, const ArchSpec& arch, const WindowedDataset& ds, const TrainConfig& cfg,
                        AdamState& opt, const ProximalTerm& prox) {
  cfg.validate();
  if (ds.empty()) throw EmptyDatasetError("train_local: empty dataset");
  if (cfg.epochs == 0) return params;
  check_params(params, arch);
  if (prox.mu < 0.0) throw ValidationError("train_local: mu must be >= 0");
  const bool proximal = prox.mu > 0.0;
  if (proximal && (prox.anchor == nullptr || !prox.anchor->same_partition(params))) {
    throw PartitionMismatchError("train_local: proximal anchor partition mismatch");
  }

  Evaluator ev(arch, params.partition());
  std::vector<std::size_t> order = all_indices(ds.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(derive_seed(cfg.seed, "epoch", cfg.first_epoch + static_cast<std::uint64_t>(e)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      LossGradient lg = loss_gradient(ev, params, ds, batch, &rng);
      if (proximal) {
        auto g = lg.gradient.values();
        const auto w = params.values();
        const auto a = prox.anchor->values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += prox.mu * (w[i] - a[i]);
      }
      adam_step(opt, params, lg.gradient);
    }
  }
  return params;
}

ParamVector train_local(ParamVector params, const ArchSpec& arch, const WindowedDataset& ds, const TrainConfig& cfg,
                        double lr) {
  AdamState opt = AdamState::for_size(params.size(), lr);
  return train_local(std::move(params), arch, ds, cfg, opt);
}

}  // namespace fedbev
