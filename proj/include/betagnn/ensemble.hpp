#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "betagnn/autodiff.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/models.hpp"
#include "betagnn/optim.hpp"

namespace betagnn {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr std::uint64_t kEnsembleMlpTag = 0x6d6c70;

/// beta * backbone(A_hat, X) + (1 - beta) * mlp(X), combined on logits, with
/// beta = sigmoid(beta_raw). beta_raw starts at 0 (beta = 0.5).
template <NodeClassifier Backbone>
class BetaEnsemble {
 public:
  BetaEnsemble() = default;
  BetaEnsemble(Backbone backbone, MlpModel mlp)
      : backbone_(std::move(backbone)), mlp_(std::move(mlp)), beta_raw_("beta_raw", Tensor::scalar(0.0), false) {
    if (backbone_.n_classes() != mlp_.n_classes()) {
      throw ShapeError("BetaEnsemble: backbone emits " + std::to_string(backbone_.n_classes()) +
                       " classes, mlp emits " + std::to_string(mlp_.n_classes()));
    }
  }

  Var forward(Tape& t, const NormalizedAdjacency& a_hat, const FeatureMatrix& x, bool training,
              std::uint64_t stream) {
    Var f = backbone_.forward(t, a_hat, x, training, stream);
    Var g = mlp_.forward(t, x, training, derive_seed(stream, kEnsembleMlpTag));
    if (!f.value().same_shape(g.value())) {
      throw ShapeError("BetaEnsemble: backbone logits " + f.value().shape() + " vs mlp logits " +
                       g.value().shape());
    }
    Var beta = beta_override_ ? t.constant(Tensor::scalar(*beta_override_)) : sigmoid(t.parameter(beta_raw_));
    return convex_combine(beta, f, g);
  }

  ParamList parameters() {
    ParamList out = backbone_.parameters();
    for (Parameter* p : mlp_.parameters()) out.push_back(p);
    out.push_back(&beta_raw_);
    return out;
  }

  /// Effective weight in (0, 1), or the pinned value when overridden.
  double beta() const { return beta_override_ ? *beta_override_ : betagnn::sigmoid(beta_raw_.value.item()); }

  /// Pins beta to a constant (test hook); beta_raw then receives no gradient.
  void pin_beta(std::optional<double> b) { beta_override_ = b; }
  void set_beta_raw(double v) { beta_raw_.value = Tensor::scalar(v); }
  Parameter& beta_raw() { return beta_raw_; }

  Backbone& backbone() { return backbone_; }
  MlpModel& mlp() { return mlp_; }
  std::size_t n_classes() const { return mlp_.n_classes(); }

 private:
  Backbone backbone_;
  MlpModel mlp_;
  Parameter beta_raw_;
  std::optional<double> beta_override_;
};

template <class M>
concept HasBeta = requires(const M& m) {
  { m.beta() } -> std::convertible_to<double>;
};

static_assert(NodeClassifier<BetaEnsemble<GcnModel>>);
static_assert(NodeClassifier<BetaEnsemble<GprModel>>);

/// dL/dbeta computed from forward values only:
/// sum over masked rows of (softmax(y_hat) - onehot(y)) / m . (f - g).
/// Dropout is off. Independent of Tape::backward.
template <NodeClassifier Backbone>
double beta_grad_closed_form(BetaEnsemble<Backbone>& e, const NormalizedAdjacency& a_hat, const FeatureMatrix& x,
                             const LabelVector& y, const Mask& mask) {
  Tape t;
  const Tensor f = e.backbone().forward(t, a_hat, x, false, 0).value();
  const Tensor g = e.mlp().forward(t, x, false, 0).value();
  if (!f.same_shape(g)) throw ShapeError("beta_grad_closed_form: submodel logit shapes differ");
  if (y.size() != f.rows() || mask.size() != f.rows()) throw ShapeError("beta_grad_closed_form: label/mask length");
  const double beta = e.beta();
  const std::size_t m = mask_count(mask);
  if (m == 0) throw Error("beta_grad_closed_form: empty mask");
  double grad = 0.0;
  std::vector<double> yhat(f.cols());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    if (!mask[i]) continue;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < f.cols(); ++c) {
      yhat[c] = beta * f(i, c) + (1.0 - beta) * g(i, c);
      mx = std::max(mx, yhat[c]);
    }
    double z = 0.0;
    for (double v : yhat) z += std::exp(v - mx);
    for (std::size_t c = 0; c < f.cols(); ++c) {
      const double p = std::exp(yhat[c] - mx) / z;
      const double dl_dyhat = (p - (static_cast<int>(c) == y[i] ? 1.0 : 0.0)) / static_cast<double>(m);
      grad += dl_dyhat * (f(i, c) - g(i, c));
    }
  }
  return grad;
}

/// Argmax accuracy over `mask`; ties go to the lowest class index.
inline double accuracy(const Tensor& logits, const LabelVector& y, const Mask& mask) {
  if (y.size() != logits.rows() || mask.size() != logits.rows()) throw ShapeError("accuracy: label/mask length");
  std::size_t hit = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    ++total;
    auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == y[i]) ++hit;
  }
  if (total == 0) throw Error("accuracy over an empty mask");
  return static_cast<double>(hit) / static_cast<double>(total);
}

template <NodeClassifier M>
Tensor predict(M& model, const NormalizedAdjacency& a_hat, const FeatureMatrix& x) {
  Tape t;
  return model.forward(t, a_hat, x, false, 0).value();
}

/// Accuracy with dropout disabled.
template <NodeClassifier M>
double evaluate(M& model, const NormalizedAdjacency& a_hat, const FeatureMatrix& x, const LabelVector& y,
                const Mask& mask) {
  return accuracy(predict(model, a_hat, x), y, mask);
}

struct TrainConfig {
  int epochs = 200;
  double lr = 0.01;
  double clip_max_norm = 5.0;
  double dropout = 0.5;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(weight_decay >= 0.0)) throw Error("TrainConfig: weight_decay must be >= 0");
    if (epochs < 1) throw Error("TrainConfig: epochs must be >= 1");
    if (!(lr > 0.0)) throw Error("TrainConfig: lr must be positive");
    if (!(clip_max_norm > 0.0)) throw Error("TrainConfig: clip_max_norm must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("TrainConfig: dropout must be in [0,1)");
  }
};

struct EpochRecord {
  int epoch = 0;
  std::optional<double> beta;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

using BetaTrajectory = std::vector<EpochRecord>;

struct TrainResult {
  BetaTrajectory trajectory;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> final_beta;
};

/// Full-batch training on the train mask with Adam and global-norm
/// clipping. The model is left at the parameters of the best validation
/// epoch (earliest on ties), and test accuracy is reported there.
template <NodeClassifier M>
TrainResult train(M& model, const NormalizedAdjacency& a_hat, const FeatureMatrix& x, const LabelVector& y,
                  const DataSplit& split, const TrainConfig& cfg) {
  cfg.validate();
  split.validate(x.n_nodes());
  if (y.size() != x.n_nodes()) throw ShapeError("train: label count does not match feature rows");
  ParamList params = model.parameters();
  for (Parameter* p : params) p->zero_grad();
  AdamState adam(AdamConfig{.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  TrainResult res;
  res.best_val_acc = -1.0;
  std::vector<Tensor> best_values;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    Tensor eval_logits;
    try {
      Tape tape;
      Var logits = model.forward(tape, a_hat, x, true, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
      Var loss = cross_entropy_loss(logits, y, split.train);
      rec.train_loss = loss.value().item();
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_max_norm);
      adam_step(adam, params);
      for (const Parameter* p : params) {
        if (!p->value.all_finite()) throw NumericError("parameter " + p->name + " became non-finite");
      }
      eval_logits = predict(model, a_hat, x);
    } catch (const NumericError& err) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + err.what());
    }
    rec.val_acc = accuracy(eval_logits, y, split.val);
    if constexpr (HasBeta<M>) rec.beta = model.beta();
    if (rec.val_acc > res.best_val_acc) {
      res.best_val_acc = rec.val_acc;
      res.best_epoch = epoch;
      res.test_acc = mask_count(split.test) > 0 ? accuracy(eval_logits, y, split.test) : 0.0;
      best_values.clear();
      for (const Parameter* p : params) best_values.push_back(p->value);
    }
    res.trajectory.push_back(rec);
  }
  res.final_beta = res.trajectory.back().beta;
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_values[k];
  return res;
}

template <NodeClassifier M>
TrainResult train(M& model, const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                  const DataSplit& split, const TrainConfig& cfg) {
  const NormalizedAdjacency a_hat = normalize_adjacency(g);
  return train(model, a_hat, x, y, split, cfg);
}

/// Standard factories. The backbone of an ensemble built from `seed` is
/// initialised exactly like the vanilla backbone built from the same seed.
inline MlpModel make_mlp(std::size_t in_dim, std::size_t hidden, std::size_t n_classes, double dropout,
                         std::uint64_t seed) {
  return MlpModel({in_dim, hidden, n_classes}, dropout, seed);
}
inline GcnModel make_gcn(std::size_t in_dim, std::size_t hidden, std::size_t n_classes, double dropout,
                         std::uint64_t seed) {
  return GcnModel({in_dim, hidden, n_classes}, dropout, seed);
}
inline GprModel make_gpr(std::size_t in_dim, std::size_t hidden, std::size_t n_classes, double dropout,
                         std::uint64_t seed, std::size_t hops = 4) {
  return GprModel(in_dim, hidden, n_classes, hops, dropout, seed);
}
inline BetaEnsemble<GcnModel> make_beta_gcn(std::size_t in_dim, std::size_t hidden, std::size_t n_classes,
                                            double dropout, std::uint64_t seed) {
  return {make_gcn(in_dim, hidden, n_classes, dropout, seed),
          make_mlp(in_dim, hidden, n_classes, dropout, derive_seed(seed, kEnsembleMlpTag))};
}
inline BetaEnsemble<GprModel> make_beta_gpr(std::size_t in_dim, std::size_t hidden, std::size_t n_classes,
                                            double dropout, std::uint64_t seed, std::size_t hops = 4) {
  return {make_gpr(in_dim, hidden, n_classes, dropout, seed, hops),
          make_mlp(in_dim, hidden, n_classes, dropout, derive_seed(seed, kEnsembleMlpTag))};
}

}  // namespace betagnn
