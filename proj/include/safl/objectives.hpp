#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "safl/errors.hpp"
#include "safl/rng.hpp"
#include "safl/vec.hpp"

namespace safl {

// Row-major labeled dataset shared by the logistic and MLP objectives.
struct DataMatrix {
  std::vector<double> features;  // count * feature_dim, row-major
  std::vector<int> labels;       // values in [0, classes)
  int count = 0;
  int feature_dim = 0;
  int classes = 0;

  const double* row(int i) const { return features.data() + static_cast<std::size_t>(i) * feature_dim; }

  void validate() const {
    if (count < 0 || feature_dim <= 0 || classes < 2) {
      throw std::invalid_argument("DataMatrix: bad shape");
    }
    if (features.size() != static_cast<std::size_t>(count) * feature_dim ||
        labels.size() != static_cast<std::size_t>(count)) {
      throw std::invalid_argument("DataMatrix: size mismatch");
    }
    for (int y : labels) {
      if (y < 0 || y >= classes) throw std::invalid_argument("DataMatrix: label out of range");
    }
  }
};

struct ObjectiveConstants {
  std::optional<double> lipschitz;           // L (Lipschitz constant of the gradient)
  std::optional<double> strong_convexity;    // mu, when the objective is strongly convex
  std::optional<double> grad_variance_bound; // bound on E||g - grad||^2
};

// F(x) = 1/2 (x - c)^T H (x - c) with diagonal positive-definite H.
// Stochastic gradients add i.i.d. Gaussian noise per coordinate, so the
// variance budget d * sigma^2 is exact.
class QuadraticObjective {
 public:
  QuadraticObjective(Vec hess_diag, Vec center, double noise_std)
      : hess_diag_(std::move(hess_diag)), center_(std::move(center)), noise_std_(noise_std) {
    require_same_dim(hess_diag_, center_, "QuadraticObjective");
    require_finite(hess_diag_, "QuadraticObjective hessian");
    require_finite(center_, "QuadraticObjective center");
    if (noise_std_ < 0.0) throw std::invalid_argument("QuadraticObjective: noise_std < 0");
    for (double h : hess_diag_) {
      if (!(h > 0.0)) throw std::invalid_argument("QuadraticObjective: H not positive definite");
    }
  }

  static QuadraticObjective isotropic(double h, Vec center, double noise_std) {
    Vec hess(center.size(), h);
    return QuadraticObjective(std::move(hess), std::move(center), noise_std);
  }

  int dim() const { return static_cast<int>(center_.size()); }

  double value(const Vec& x) const {
    require_same_dim(x, center_, "QuadraticObjective::value");
    double s = 0.0;
    for (std::size_t i = 0; i < center_.size(); ++i) {
      const double d = x[i] - center_[i];
      s += hess_diag_[i] * d * d;
    }
    return 0.5 * s;
  }

  Vec exact_gradient(const Vec& x) const {
    require_same_dim(x, center_, "QuadraticObjective::exact_gradient");
    Vec g(center_.size());
    for (std::size_t i = 0; i < center_.size(); ++i) g[i] = hess_diag_[i] * (x[i] - center_[i]);
    return g;
  }

  Vec stochastic_gradient(const Vec& x, RngStream& rng) const {
    Vec g = exact_gradient(x);
    if (noise_std_ > 0.0) {
      for (double& v : g) v += noise_std_ * rng.normal();
    }
    return g;
  }

  ObjectiveConstants constants() const {
    ObjectiveConstants c;
    c.lipschitz = *std::max_element(hess_diag_.begin(), hess_diag_.end());
    c.strong_convexity = *std::min_element(hess_diag_.begin(), hess_diag_.end());
    c.grad_variance_bound = static_cast<double>(dim()) * noise_std_ * noise_std_;
    return c;
  }

  const Vec& center() const { return center_; }
  const Vec& hess_diag() const { return hess_diag_; }
  double noise_std() const { return noise_std_; }

 private:
  Vec hess_diag_;
  Vec center_;
  double noise_std_;
};

// Multinomial logistic regression without bias; model layout is the C x d
// weight matrix flattened row-major. Minibatches are sampled with replacement,
// which keeps the stochastic gradient exactly unbiased.
class LogisticObjective {
 public:
  LogisticObjective(DataMatrix data, double l2_reg, int batch_size)
      : data_(std::move(data)), l2_reg_(l2_reg), batch_size_(batch_size) {
    data_.validate();
    if (data_.count == 0) throw std::invalid_argument("LogisticObjective: empty dataset");
    if (l2_reg_ < 0.0) throw std::invalid_argument("LogisticObjective: l2_reg < 0");
    if (batch_size_ <= 0) throw std::invalid_argument("LogisticObjective: batch_size <= 0");
  }

  int dim() const { return data_.classes * data_.feature_dim; }
  const DataMatrix& data() const { return data_; }
  int batch_size() const { return batch_size_; }

  double value(const Vec& x) const {
    check_dim(x);
    double loss = 0.0;
    std::vector<double> logits(static_cast<std::size_t>(data_.classes));
    for (int i = 0; i < data_.count; ++i) {
      compute_logits(x, data_.row(i), logits);
      loss += log_sum_exp(logits) - logits[static_cast<std::size_t>(data_.labels[i])];
    }
    loss /= static_cast<double>(data_.count);
    if (l2_reg_ > 0.0) loss += 0.5 * l2_reg_ * squared_norm(x);
    return loss;
  }

  Vec exact_gradient(const Vec& x) const {
    check_dim(x);
    Vec g(static_cast<std::size_t>(dim()), 0.0);
    std::vector<double> probs(static_cast<std::size_t>(data_.classes));
    for (int i = 0; i < data_.count; ++i) {
      accumulate_sample_gradient(x, i, 1.0 / static_cast<double>(data_.count), probs, g);
    }
    add_regularizer(x, g);
    return g;
  }

  Vec stochastic_gradient(const Vec& x, RngStream& rng) const {
    check_dim(x);
    Vec g(static_cast<std::size_t>(dim()), 0.0);
    std::vector<double> probs(static_cast<std::size_t>(data_.classes));
    const double w = 1.0 / static_cast<double>(batch_size_);
    for (int b = 0; b < batch_size_; ++b) {
      const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(data_.count)));
      accumulate_sample_gradient(x, i, w, probs, g);
    }
    add_regularizer(x, g);
    return g;
  }

  ObjectiveConstants constants() const {
    // Softmax Hessian blocks are bounded by 1/2 ||x_i||^2, so the mean feature
    // energy gives an upper estimate of L. Zero features reduce to the
    // regularizer exactly.
    double mean_sq = 0.0;
    double max_sq = 0.0;
    for (int i = 0; i < data_.count; ++i) {
      const double* row = data_.row(i);
      double s = 0.0;
      for (int j = 0; j < data_.feature_dim; ++j) s += row[j] * row[j];
      mean_sq += s;
      max_sq = std::max(max_sq, s);
    }
    mean_sq /= static_cast<double>(data_.count);
    ObjectiveConstants c;
    c.lipschitz = 0.5 * mean_sq + l2_reg_;
    if (l2_reg_ > 0.0) c.strong_convexity = l2_reg_;
    c.grad_variance_bound = 2.0 * max_sq / static_cast<double>(batch_size_);
    return c;
  }

 private:
  void check_dim(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim()) {
      throw std::invalid_argument("LogisticObjective: model dimension mismatch");
    }
  }

  void compute_logits(const Vec& x, const double* row, std::vector<double>& logits) const {
    for (int c = 0; c < data_.classes; ++c) {
      const double* w = x.data() + static_cast<std::size_t>(c) * data_.feature_dim;
      double z = 0.0;
      for (int j = 0; j < data_.feature_dim; ++j) z += w[j] * row[j];
      logits[static_cast<std::size_t>(c)] = z;
    }
  }

  static double log_sum_exp(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
  }

  void accumulate_sample_gradient(const Vec& x, int i, double weight,
                                  std::vector<double>& probs, Vec& g) const {
    const double* row = data_.row(i);
    compute_logits(x, row, probs);
    const double lse = log_sum_exp(probs);
    for (double& p : probs) p = std::exp(p - lse);
    probs[static_cast<std::size_t>(data_.labels[i])] -= 1.0;
    for (int c = 0; c < data_.classes; ++c) {
      const double pc = weight * probs[static_cast<std::size_t>(c)];
      double* gc = g.data() + static_cast<std::size_t>(c) * data_.feature_dim;
      for (int j = 0; j < data_.feature_dim; ++j) gc[j] += pc * row[j];
    }
  }

  void add_regularizer(const Vec& x, Vec& g) const {
    if (l2_reg_ > 0.0) axpy(l2_reg_, x, g);
  }

  DataMatrix data_;
  double l2_reg_;
  int batch_size_;
};

enum class Activation { tanh, relu };

// Fully-connected network with softmax cross-entropy loss and hand-coded
// backprop. Parameters are flattened layer by layer as [W row-major, b].
class MlpObjective {
 public:
  MlpObjective(std::vector<int> layer_sizes, Activation activation, DataMatrix data,
               int batch_size)
      : layer_sizes_(std::move(layer_sizes)),
        activation_(activation),
        data_(std::move(data)),
        batch_size_(batch_size) {
    data_.validate();
    if (layer_sizes_.size() < 2) throw std::invalid_argument("MlpObjective: need >= 2 layers");
    for (int s : layer_sizes_) {
      if (s <= 0) throw std::invalid_argument("MlpObjective: non-positive layer size");
    }
    if (layer_sizes_.front() != data_.feature_dim || layer_sizes_.back() != data_.classes) {
      throw std::invalid_argument("MlpObjective: layer sizes do not match dataset");
    }
    if (batch_size_ <= 0) throw std::invalid_argument("MlpObjective: batch_size <= 0");
    dim_ = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      dim_ += layer_sizes_[l] * layer_sizes_[l + 1] + layer_sizes_[l + 1];
    }
  }

  int dim() const { return dim_; }
  const DataMatrix& data() const { return data_; }
  const std::vector<int>& layer_sizes() const { return layer_sizes_; }

  double value(const Vec& x) const {
    check_dim(x);
    double loss = 0.0;
    Workspace ws = make_workspace();
    for (int i = 0; i < data_.count; ++i) {
      loss += forward(x, i, ws);
    }
    return loss / static_cast<double>(data_.count);
  }

  Vec exact_gradient(const Vec& x) const {
    check_dim(x);
    Vec g(static_cast<std::size_t>(dim_), 0.0);
    Workspace ws = make_workspace();
    const double w = 1.0 / static_cast<double>(data_.count);
    for (int i = 0; i < data_.count; ++i) {
      forward(x, i, ws);
      backward(x, i, w, ws, g);
    }
    return g;
  }

  Vec stochastic_gradient(const Vec& x, RngStream& rng) const {
    check_dim(x);
    Vec g(static_cast<std::size_t>(dim_), 0.0);
    Workspace ws = make_workspace();
    const double w = 1.0 / static_cast<double>(batch_size_);
    for (int b = 0; b < batch_size_; ++b) {
      const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(data_.count)));
      forward(x, i, ws);
      backward(x, i, w, ws, g);
    }
    return g;
  }

  ObjectiveConstants constants() const {
    return ObjectiveConstants{};  // no useful closed-form constants for the MLP
  }

  // Deterministic init: small Gaussian weights, zero biases.
  Vec init_point(RngStream& rng, double weight_std = 0.5) const {
    Vec x(static_cast<std::size_t>(dim_), 0.0);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      const int in = layer_sizes_[l];
      const int out = layer_sizes_[l + 1];
      for (int k = 0; k < in * out; ++k) x[off + static_cast<std::size_t>(k)] = weight_std * rng.normal();
      off += static_cast<std::size_t>(in) * out + out;  // biases stay zero
    }
    return x;
  }

 private:
  struct Workspace {
    std::vector<std::vector<double>> acts;    // activations per layer (post nonlinearity)
    std::vector<std::vector<double>> deltas;  // backprop buffers
  };

  Workspace make_workspace() const {
    Workspace ws;
    ws.acts.resize(layer_sizes_.size());
    ws.deltas.resize(layer_sizes_.size());
    for (std::size_t l = 0; l < layer_sizes_.size(); ++l) {
      ws.acts[l].resize(static_cast<std::size_t>(layer_sizes_[l]));
      ws.deltas[l].resize(static_cast<std::size_t>(layer_sizes_[l]));
    }
    return ws;
  }

  void check_dim(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_) {
      throw std::invalid_argument("MlpObjective: model dimension mismatch");
    }
  }

  // Returns the cross-entropy loss of sample i and leaves activations in ws.
  double forward(const Vec& x, int i, Workspace& ws) const {
    const double* row = data_.row(i);
    for (int j = 0; j < layer_sizes_[0]; ++j) ws.acts[0][static_cast<std::size_t>(j)] = row[j];
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      const int in = layer_sizes_[l];
      const int out = layer_sizes_[l + 1];
      const double* W = x.data() + off;
      const double* b = x.data() + off + static_cast<std::size_t>(in) * out;
      const bool last = (l + 2 == layer_sizes_.size());
      for (int o = 0; o < out; ++o) {
        double z = b[o];
        const double* wrow = W + static_cast<std::size_t>(o) * in;
        for (int j = 0; j < in; ++j) z += wrow[j] * ws.acts[l][static_cast<std::size_t>(j)];
        ws.acts[l + 1][static_cast<std::size_t>(o)] =
            last ? z : (activation_ == Activation::tanh ? std::tanh(z) : std::max(0.0, z));
      }
      off += static_cast<std::size_t>(in) * out + out;
    }
    auto& logits = ws.acts.back();
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    const double lse = m + std::log(s);
    return lse - logits[static_cast<std::size_t>(data_.labels[i])];
  }

  void backward(const Vec& x, int i, double weight, Workspace& ws, Vec& g) const {
    auto& logits = ws.acts.back();
    auto& dlast = ws.deltas.back();
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    for (std::size_t c = 0; c < logits.size(); ++c) dlast[c] = std::exp(logits[c] - m) / s;
    dlast[static_cast<std::size_t>(data_.labels[i])] -= 1.0;

    // Walk layers backwards; parameter offsets are recomputed per layer.
    std::vector<std::size_t> offsets(layer_sizes_.size() - 1);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
      offsets[l] = off;
      off += static_cast<std::size_t>(layer_sizes_[l]) * layer_sizes_[l + 1] + layer_sizes_[l + 1];
    }
    for (std::size_t l = layer_sizes_.size() - 1; l-- > 0;) {
      const int in = layer_sizes_[l];
      const int out = layer_sizes_[l + 1];
      const double* W = x.data() + offsets[l];
      double* gW = g.data() + offsets[l];
      double* gb = g.data() + offsets[l] + static_cast<std::size_t>(in) * out;
      const auto& delta = ws.deltas[l + 1];
      for (int o = 0; o < out; ++o) {
        const double d = weight * delta[static_cast<std::size_t>(o)];
        double* grow = gW + static_cast<std::size_t>(o) * in;
        for (int j = 0; j < in; ++j) grow[j] += d * ws.acts[l][static_cast<std::size_t>(j)];
        gb[o] += d;
      }
      if (l > 0) {
        auto& dprev = ws.deltas[l];
        for (int j = 0; j < in; ++j) {
          double acc = 0.0;
          for (int o = 0; o < out; ++o) {
            acc += W[static_cast<std::size_t>(o) * in + j] * delta[static_cast<std::size_t>(o)];
          }
          const double a = ws.acts[l][static_cast<std::size_t>(j)];
          const double dact = activation_ == Activation::tanh ? (1.0 - a * a) : (a > 0.0 ? 1.0 : 0.0);
          dprev[static_cast<std::size_t>(j)] = acc * dact;
        }
      }
    }
  }

  std::vector<int> layer_sizes_;
  Activation activation_;
  DataMatrix data_;
  int batch_size_;
  int dim_ = 0;
};

// Value-semantic wrapper so populations can hold any objective family.
// Objectives are immutable after construction and safe to share across
// threads; stochastic calls take an external stream.
class Objective {
 public:
  Objective(QuadraticObjective o) : v_(std::move(o)) {}
  Objective(LogisticObjective o) : v_(std::move(o)) {}
  Objective(MlpObjective o) : v_(std::move(o)) {}

  int dim() const {
    return std::visit([](const auto& o) { return o.dim(); }, v_);
  }
  double value(const Vec& x) const {
    return std::visit([&](const auto& o) { return o.value(x); }, v_);
  }
  Vec exact_gradient(const Vec& x) const {
    Vec g = std::visit([&](const auto& o) { return o.exact_gradient(x); }, v_);
    if (!all_finite(g)) throw divergence_error("exact_gradient: non-finite result");
    return g;
  }
  Vec stochastic_gradient(const Vec& x, RngStream& rng) const {
    Vec g = std::visit([&](const auto& o) { return o.stochastic_gradient(x, rng); }, v_);
    if (!all_finite(g)) throw divergence_error("stochastic_gradient: non-finite result");
    return g;
  }
  ObjectiveConstants constants() const {
    return std::visit([](const auto& o) { return o.constants(); }, v_);
  }

  const QuadraticObjective* as_quadratic() const { return std::get_if<QuadraticObjective>(&v_); }
  const LogisticObjective* as_logistic() const { return std::get_if<LogisticObjective>(&v_); }
  const MlpObjective* as_mlp() const { return std::get_if<MlpObjective>(&v_); }

 private:
  std::variant<QuadraticObjective, LogisticObjective, MlpObjective> v_;
};

inline Vec exact_gradient(const Vec& x, const Objective& obj) { return obj.exact_gradient(x); }
inline Vec stochastic_gradient(const Vec& x, const Objective& obj, RngStream& rng) {
  return obj.stochastic_gradient(x, rng);
}
inline ObjectiveConstants objective_constants(const Objective& obj) { return obj.constants(); }

}  // namespace safl
