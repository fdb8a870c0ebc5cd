#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "betagnn/autodiff.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/optim.hpp"
#include "betagnn/rng.hpp"

namespace betagnn {

/// Anything trainable on (normalized adjacency, features) that yields n x C
/// logits. `stream` seeds dropout for this forward pass.
template <class M>
concept NodeClassifier = requires(M& m, Tape& t, const NormalizedAdjacency& a, const FeatureMatrix& x,
                                  bool training, std::uint64_t stream) {
  { m.forward(t, a, x, training, stream) } -> std::same_as<Var>;
  { m.parameters() } -> std::same_as<ParamList>;
  { m.n_classes() } -> std::convertible_to<std::size_t>;
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor w(fan_in, fan_out);
  for (Real& v : w.data()) v = dist(rng);
  return w;
}

inline void require_dims(const std::vector<std::size_t>& dims, std::size_t min_size, const char* model) {
  if (dims.size() < min_size) {
    throw ShapeError(std::string(model) + ": needs at least " + std::to_string(min_size) + " layer dims");
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError(std::string(model) + ": zero-width layer");
  }
}

inline void require_features(const FeatureMatrix& x, std::size_t d, const char* model) {
  if (x.dim() != d) {
    throw ShapeError(std::string(model) + ": expected " + std::to_string(d) + " feature columns, got " +
                     std::to_string(x.dim()));
  }
}

// Dropout stream tags, one per layer position.
inline constexpr std::uint64_t kDropoutTag = 0xd0;

}  // namespace detail

/// Feature-only classifier: [dropout, linear, relu]* then dropout, linear.
class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<std::size_t> dims, double dropout, std::uint64_t seed, std::string prefix = "mlp")
      : dims_(std::move(dims)), dropout_(dropout) {
    detail::require_dims(dims_, 3, "MlpModel");
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
      params_.emplace_back(prefix + ".w" + std::to_string(k), detail::glorot_uniform(dims_[k], dims_[k + 1], rng));
      params_.emplace_back(prefix + ".b" + std::to_string(k), Tensor(1, dims_[k + 1]));
    }
  }

  Var forward(Tape& t, const FeatureMatrix& x, bool training, std::uint64_t stream) {
    return forward_from(t.constant(x.values()), x.dim(), training, stream);
  }

  /// Graph-agnostic; the adjacency is accepted only to satisfy NodeClassifier.
  Var forward(Tape& t, const NormalizedAdjacency&, const FeatureMatrix& x, bool training, std::uint64_t stream) {
    return forward(t, x, training, stream);
  }

  Var forward_from(Var h, std::size_t in_dim, bool training, std::uint64_t stream) {
    if (in_dim != dims_.front()) {
      throw ShapeError("MlpModel: expected " + std::to_string(dims_.front()) + " feature columns, got " +
                       std::to_string(in_dim));
    }
    Tape& t = *h.tape;
    const std::size_t layers = dims_.size() - 1;
    for (std::size_t k = 0; k < layers; ++k) {
      h = dropout(h, dropout_, derive_seed(stream, detail::kDropoutTag + k), training);
      h = add_bias(matmul(h, t.parameter(params_[2 * k])), t.parameter(params_[2 * k + 1]));
      if (k + 1 < layers) h = relu(h);
    }
    return h;
  }

  ParamList parameters() {
    ParamList out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::vector<Parameter>& raw_parameters() { return params_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t n_classes() const { return dims_.back(); }
  double dropout_rate() const { return dropout_; }

 private:
  std::vector<std::size_t> dims_;
  double dropout_ = 0.0;
  std::vector<Parameter> params_;
};

/// Kipf-Welling GCN without biases: H <- relu(A_hat H W), no relu on the
/// output layer.
class GcnModel {
 public:
  GcnModel() = default;
  GcnModel(std::vector<std::size_t> dims, double dropout, std::uint64_t seed, std::string prefix = "gcn")
      : dims_(std::move(dims)), dropout_(dropout) {
    detail::require_dims(dims_, 3, "GcnModel");
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
      params_.emplace_back(prefix + ".w" + std::to_string(k), detail::glorot_uniform(dims_[k], dims_[k + 1], rng));
    }
  }

  Var forward(Tape& t, const NormalizedAdjacency& a_hat, const FeatureMatrix& x, bool training,
              std::uint64_t stream) {
    if (a_hat.n_nodes() != x.n_nodes()) throw ShapeError("GcnModel: adjacency and feature row counts differ");
    return forward_with(t, x, training, stream, [&](Var h) { return spmm(a_hat, h); });
  }

  /// Same layer stack with a caller-supplied propagation step; used for the
  /// dense adjacency relaxation in gradient attacks.
  template <class Propagate>
  Var forward_with(Tape& t, const FeatureMatrix& x, bool training, std::uint64_t stream, Propagate&& propagate) {
    detail::require_features(x, dims_.front(), "GcnModel");
    Var h = t.constant(x.values());
    const std::size_t layers = dims_.size() - 1;
    for (std::size_t k = 0; k < layers; ++k) {
      h = dropout(h, dropout_, derive_seed(stream, detail::kDropoutTag + k), training);
      h = propagate(matmul(h, t.parameter(params_[k])));
      if (k + 1 < layers) h = relu(h);
    }
    return h;
  }

  ParamList parameters() {
    ParamList out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  std::vector<Parameter>& raw_parameters() { return params_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t n_classes() const { return dims_.back(); }

 private:
  std::vector<std::size_t> dims_;
  double dropout_ = 0.0;
  std::vector<Parameter> params_;
};

/// Reduced GPR-GNN: logits = sum_k gamma_k A_hat^k MLP(X) with learned
/// scalar hop weights, initialised to normalised personalised-PageRank
/// weights alpha (1 - alpha)^k.
class GprModel {
 public:
  GprModel() = default;
  GprModel(std::size_t in_dim, std::size_t hidden, std::size_t n_classes, std::size_t hops, double dropout,
           std::uint64_t seed, double alpha = 0.1, std::string prefix = "gpr")
      : mlp_({in_dim, hidden, n_classes}, dropout, seed, prefix + ".mlp") {
    if (hops < 1) throw ShapeError("GprModel: needs at least one propagation hop");
    std::vector<double> w(hops + 1);
    double total = 0.0;
    for (std::size_t k = 0; k <= hops; ++k) {
      w[k] = alpha * std::pow(1.0 - alpha, static_cast<double>(k));
      total += w[k];
    }
    for (std::size_t k = 0; k <= hops; ++k) {
      gammas_.emplace_back(prefix + ".gamma" + std::to_string(k), Tensor::scalar(w[k] / total), false);
    }
  }

  Var forward(Tape& t, const NormalizedAdjacency& a_hat, const FeatureMatrix& x, bool training,
              std::uint64_t stream) {
    if (a_hat.n_nodes() != x.n_nodes()) throw ShapeError("GprModel: adjacency and feature row counts differ");
    Var z = mlp_.forward(t, x, training, stream);
    Var acc = scale_by(t.parameter(gammas_[0]), z);
    Var p = z;
    for (std::size_t k = 1; k < gammas_.size(); ++k) {
      p = spmm(a_hat, p);
      acc = axpy(t.parameter(gammas_[k]), p, acc);
    }
    return acc;
  }

  ParamList parameters() {
    ParamList out = mlp_.parameters();
    for (auto& g : gammas_) out.push_back(&g);
    return out;
  }

  MlpModel& mlp() { return mlp_; }
  std::vector<Parameter>& gammas() { return gammas_; }
  std::size_t hops() const { return gammas_.size() - 1; }
  std::size_t n_classes() const { return mlp_.n_classes(); }

 private:
  MlpModel mlp_;
  std::vector<Parameter> gammas_;
};

inline Var mlp_forward(MlpModel& m, Tape& t, const FeatureMatrix& x, bool training, std::uint64_t stream = 0) {
  return m.forward(t, x, training, stream);
}

inline Var gcn_forward(GcnModel& m, Tape& t, const NormalizedAdjacency& a_hat, const FeatureMatrix& x,
                       bool training, std::uint64_t stream = 0) {
  return m.forward(t, a_hat, x, training, stream);
}

inline Var gpr_forward(GprModel& m, Tape& t, const NormalizedAdjacency& a_hat, const FeatureMatrix& x,
                       bool training, std::uint64_t stream = 0) {
  return m.forward(t, a_hat, x, training, stream);
}

static_assert(NodeClassifier<MlpModel>);
static_assert(NodeClassifier<GcnModel>);
static_assert(NodeClassifier<GprModel>);

}  // namespace betagnn
