#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "betagnn/autodiff.hpp"
#include "betagnn/ensemble.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/models.hpp"
#include "betagnn/rng.hpp"

namespace betagnn {

enum class AttackKind { Random, HeterophilyInject, GradUntargeted, GreedyTargeted };

/// Loss maximised by grad_untargeted_attack: cross-entropy on the training
/// nodes, or over all nodes with surrogate pseudo-labels off the train set.
enum class AttackObjective { TrainLoss, SelfTraining };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Random: return "random";
    case AttackKind::HeterophilyInject: return "heterophily-inject";
    case AttackKind::GradUntargeted: return "grad-untargeted";
    case AttackKind::GreedyTargeted: return "greedy-targeted";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  if (s == "random") return AttackKind::Random;
  if (s == "heterophily-inject") return AttackKind::HeterophilyInject;
  if (s == "grad-untargeted") return AttackKind::GradUntargeted;
  if (s == "greedy-targeted") return AttackKind::GreedyTargeted;
  throw Error("unknown attack kind '" + s + "'");
}

/// For GreedyTargeted the edge budget applies per target node.
struct AttackSpec {
  AttackKind kind = AttackKind::Random;
  PerturbationBudget budget;
  std::vector<NodeId> targets;
  std::uint64_t seed = 0;
  TrainConfig surrogate{.epochs = 100, .lr = 0.01, .clip_max_norm = 5.0, .dropout = 0.5, .weight_decay = 5e-4, .seed = 0};
  std::size_t surrogate_hidden = 16;
  AttackObjective objective = AttackObjective::TrainLoss;

  void validate() const {
    budget.validate();
    surrogate.validate();
    if (kind == AttackKind::GreedyTargeted && targets.empty()) throw Error("targeted attack needs at least one target");
  }
};

struct AttackResult {
  EdgeDiff diff;
  /// Set when fewer flips than budgeted were feasible.
  bool truncated = false;
};

/// Largest graph the dense adjacency relaxation accepts.
inline constexpr std::size_t kDenseNodeLimit = 5000;

namespace detail {

inline std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

inline Edge random_pair(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<NodeId> d(0, static_cast<NodeId>(n - 1));
  for (;;) {
    NodeId a = d(rng);
    NodeId b = d(rng);
    if (a != b) return Edge::canonical(a, b);
  }
}

inline std::vector<Edge> all_pairs(std::size_t n) {
  std::vector<Edge> out;
  out.reserve(pair_count(n));
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) out.push_back({u, v});
  }
  return out;
}

}  // namespace detail

/// Uniformly random flips of distinct unordered pairs.
inline AttackResult random_flip_attack(const SparseGraph& g, const LabelVector& /*y*/, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = g.n_nodes();
  const std::size_t pairs = n < 2 ? 0 : detail::pair_count(n);
  const std::size_t want = std::min(spec.budget.b_edges, pairs);
  AttackResult res;
  res.truncated = want < spec.budget.b_edges;
  Rng rng(derive_seed(spec.seed, 0xf11b));
  std::set<Edge> chosen;
  if (want * 2 > pairs) {
    std::vector<Edge> all = detail::all_pairs(n);
    std::shuffle(all.begin(), all.end(), rng);
    chosen.insert(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
  } else {
    while (chosen.size() < want) chosen.insert(detail::random_pair(n, rng));
  }
  for (const Edge& e : chosen) res.diff.flip(g, e.u, e.v);
  return res;
}

/// Label-aware perturber: removes same-label edges and adds cross-label
/// edges. Each step takes whichever flip type yields the lower resulting
/// homophily (additions on ties), choosing uniformly within the type, so
/// no step raises homophily.
inline AttackResult heterophily_inject_attack(const SparseGraph& g, const LabelVector& y, const AttackSpec& spec) {
  spec.validate();
  if (y.size() != g.n_nodes()) throw ShapeError("heterophily_inject_attack: label count does not match graph");
  const std::size_t n = g.n_nodes();
  Rng rng(derive_seed(spec.seed, 0x4e7));

  std::vector<Edge> removals;
  std::size_t same = 0;
  std::size_t cross_edges = 0;
  for (const Edge& e : g.edges()) {
    if (y[e.u] == y[e.v]) {
      removals.push_back(e);
      ++same;
    } else {
      ++cross_edges;
    }
  }
  std::shuffle(removals.begin(), removals.end(), rng);

  std::vector<std::size_t> class_size(static_cast<std::size_t>(std::max(y.n_classes, 1)), 0);
  for (int c : y.ids) ++class_size[static_cast<std::size_t>(c)];
  std::size_t cross_pairs = n < 2 ? 0 : detail::pair_count(n);
  for (std::size_t s : class_size) cross_pairs -= s < 2 ? 0 : detail::pair_count(s);
  std::size_t additions_left = cross_pairs - cross_edges;

  // Additions come from a shuffled enumeration when few remain, otherwise
  // by rejection sampling.
  const bool enumerate = additions_left <= 4 * spec.budget.b_edges + 64;
  std::vector<Edge> addition_pool;
  if (enumerate) {
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v = u + 1; v < n; ++v) {
        if (y[u] != y[v] && !g.has_edge(u, v)) addition_pool.push_back({u, v});
      }
    }
    std::shuffle(addition_pool.begin(), addition_pool.end(), rng);
  }

  AttackResult res;
  std::size_t m = g.n_edges();
  std::size_t next_removal = 0;
  std::size_t next_addition = 0;
  while (res.diff.size() < spec.budget.b_edges) {
    const bool can_remove = next_removal < removals.size();
    const bool can_add = additions_left > 0;
    if (!can_remove && !can_add) {
      res.truncated = true;
      break;
    }
    bool do_add = can_add;
    if (can_add && can_remove && m > 1) {
      // Compare s/(m+1) against (s-1)/(m-1) without division.
      const double after_add = static_cast<double>(same) * static_cast<double>(m - 1);
      const double after_remove = static_cast<double>(same - 1) * static_cast<double>(m + 1);
      do_add = after_add <= after_remove;
    }
    if (do_add) {
      Edge e;
      if (enumerate) {
        e = addition_pool[next_addition++];
      } else {
        do {
          e = detail::random_pair(n, rng);
        } while (y[e.u] == y[e.v] || g.has_edge(e.u, e.v) || res.diff.added.count(e));
      }
      res.diff.added.insert(e);
      --additions_left;
      ++m;
    } else {
      res.diff.removed.insert(removals[next_removal++]);
      --same;
      --m;
    }
  }
  return res;
}

/// Trains the attacker's 2-layer GCN on `g`.
inline GcnModel train_surrogate(const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                                const DataSplit& split, const AttackSpec& spec) {
  GcnModel s({x.dim(), spec.surrogate_hidden, static_cast<std::size_t>(y.n_classes)}, spec.surrogate.dropout,
             derive_seed(spec.seed, 0x56));
  TrainConfig cfg = spec.surrogate;
  cfg.seed = derive_seed(spec.seed, 0x57);
  train(s, g, x, y, split, cfg);
  return s;
}

/// True labels on training nodes, surrogate predictions elsewhere.
inline LabelVector self_training_labels(GcnModel& surrogate, const SparseGraph& g, const FeatureMatrix& x,
                                        const LabelVector& y, const DataSplit& split) {
  const Tensor logits = predict(surrogate, normalize_adjacency(g), x);
  LabelVector out{y.ids, y.n_classes};
  for (std::size_t i = 0; i < out.ids.size(); ++i) {
    if (split.train[i]) continue;
    auto row = logits.row(i);
    out.ids[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// Cross-entropy of the (frozen, dropout-free) surrogate on `g` over `mask`.
inline double surrogate_loss(GcnModel& surrogate, const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                             const Mask& mask) {
  Tape t;
  const NormalizedAdjacency a_hat = normalize_adjacency(g);
  return cross_entropy_loss(surrogate.forward(t, a_hat, x, false, 0), y, mask).value().item();
}

inline Tensor dense_adjacency(const SparseGraph& g) {
  Tensor a(g.n_nodes(), g.n_nodes());
  for (NodeId u = 0; u < g.n_nodes(); ++u) {
    auto nb = g.neighbors(u);
    auto w = g.weights(u);
    for (std::size_t k = 0; k < nb.size(); ++k) a(u, nb[k]) = w[k];
  }
  return a;
}

/// First-order flip scores s(u,v) = (dL/dA_uv + dL/dA_vu)(1 - 2 A_uv) of the
/// surrogate's loss over `mask` against `labels`. Returned as a dense
/// matrix; only entries with u < v are meaningful.
inline Tensor flip_scores(GcnModel& surrogate, const Tensor& adjacency, const FeatureMatrix& x,
                          const LabelVector& labels, const Mask& mask) {
  Tape t;
  Var a = t.variable(adjacency);
  Var a_hat = sym_normalize_dense(a);
  Var logits = surrogate.forward_with(t, x, false, 0, [&](Var h) { return matmul(a_hat, h); });
  Var loss = cross_entropy_loss(logits, labels, mask);
  t.backward(loss);
  for (Parameter* p : surrogate.parameters()) p->zero_grad();
  const Tensor grad = t.grad(a);
  const std::size_t n = adjacency.rows();
  Tensor s(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      s(u, v) = (grad(u, v) + grad(v, u)) * (1.0 - 2.0 * adjacency(u, v));
    }
  }
  return s;
}

/// First-order approximation of meta-gradient poisoning: greedily flips the
/// pair with the largest adjacency-gradient score, never revisiting a pair,
/// and retrains the surrogate every max(1, budget/10) flips.
inline AttackResult grad_untargeted_attack(const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                                           const DataSplit& split, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = g.n_nodes();
  if (n > kDenseNodeLimit) {
    throw Error("grad_untargeted_attack: " + std::to_string(n) + " nodes exceeds the dense limit of " +
                std::to_string(kDenseNodeLimit));
  }
  if (!g.is_unweighted()) throw Error("grad_untargeted_attack: graph must be unweighted");
  AttackResult res;
  const std::size_t budget = std::min(spec.budget.b_edges, n < 2 ? 0 : detail::pair_count(n));
  res.truncated = budget < spec.budget.b_edges;
  if (budget == 0) return res;

  GcnModel surrogate;
  try {
    surrogate = train_surrogate(g, x, y, split, spec);
  } catch (const NumericError& e) {
    throw NumericError(std::string("surrogate diverged: ") + e.what());
  }
  const bool self_training = spec.objective == AttackObjective::SelfTraining;
  const LabelVector labels = self_training ? self_training_labels(surrogate, g, x, y, split) : y;
  const Mask mask = self_training ? Mask(n, 1) : split.train;
  const std::size_t retrain_every = std::max<std::size_t>(1, budget / 10);

  Tensor adjacency = dense_adjacency(g);
  std::vector<std::uint8_t> used(n * n, 0);
  for (std::size_t step = 0; step < budget; ++step) {
    if (step > 0 && step % retrain_every == 0) {
      try {
        surrogate = train_surrogate(apply_edge_diff(g, res.diff), x, y, split, spec);
      } catch (const NumericError& e) {
        throw NumericError(std::string("surrogate diverged: ") + e.what());
      }
    }
    const Tensor scores = flip_scores(surrogate, adjacency, x, labels, mask);
    double best = -INFINITY;
    std::size_t bu = 0;
    std::size_t bv = 0;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        if (!used[u * n + v] && scores(u, v) > best) {
          best = scores(u, v);
          bu = u;
          bv = v;
        }
      }
    }
    used[bu * n + bv] = 1;
    adjacency(bu, bv) = adjacency(bv, bu) = 1.0 - adjacency(bu, bv);
    res.diff.flip(g, static_cast<NodeId>(bu), static_cast<NodeId>(bv));
  }
  return res;
}

namespace detail {

/// Loss of a frozen 2-layer surrogate at one target after flipping the
/// target's incidence with every node in `flipped`. Recomputes only the
/// target's two-hop receptive field.
class TargetLossEvaluator {
 public:
  TargetLossEvaluator(GcnModel& surrogate, const SparseGraph& g, const FeatureMatrix& x)
      : g_(g) {
    auto params = surrogate.parameters();
    if (params.size() != 2) throw Error("targeted attack expects a 2-layer surrogate");
    xw_ = kernels::matmul(x.values(), params[0]->value);
    w2_ = params[1]->value;
  }

  double loss(NodeId t, int label, const std::set<NodeId>& flipped) const {
    auto deg = [&](NodeId j) -> double {
      double d = static_cast<double>(g_.degree(j));
      if (j == t) {
        for (NodeId f : flipped) d += g_.has_edge(t, f) ? -1.0 : 1.0;
      } else if (flipped.count(j)) {
        d += g_.has_edge(t, j) ? -1.0 : 1.0;
      }
      return d + 1.0;
    };
    auto neighbors = [&](NodeId j) {
      std::vector<NodeId> out;
      if (j == t) {
        std::set_symmetric_difference(g_.neighbors(t).begin(), g_.neighbors(t).end(), flipped.begin(), flipped.end(),
                                      std::back_inserter(out));
      } else {
        auto nb = g_.neighbors(j);
        out.assign(nb.begin(), nb.end());
        if (flipped.count(j)) {
          auto it = std::lower_bound(out.begin(), out.end(), t);
          if (it != out.end() && *it == t) {
            out.erase(it);
          } else {
            out.insert(it, t);
          }
        }
      }
      out.push_back(j);
      return out;
    };
    const std::size_t h = xw_.cols();
    const std::size_t c = w2_.cols();
    std::vector<double> z(c, 0.0);
    std::vector<double> hidden(h);
    const double st = 1.0 / std::sqrt(deg(t));
    for (NodeId j : neighbors(t)) {
      std::fill(hidden.begin(), hidden.end(), 0.0);
      const double sj = 1.0 / std::sqrt(deg(j));
      for (NodeId k : neighbors(j)) {
        const double w = sj / std::sqrt(deg(k));
        for (std::size_t q = 0; q < h; ++q) hidden[q] += w * xw_(k, q);
      }
      const double wtj = st * sj;
      for (std::size_t q = 0; q < h; ++q) {
        const double a = hidden[q] > 0.0 ? hidden[q] : 0.0;
        if (a == 0.0) continue;
        for (std::size_t r = 0; r < c; ++r) z[r] += wtj * a * w2_(q, r);
      }
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    return -(z[static_cast<std::size_t>(label)] - mx - std::log(s));
  }

 private:
  const SparseGraph& g_;
  Tensor xw_;
  Tensor w2_;
};

}  // namespace detail

/// Greedy structure-only targeted attack. For each target, b_edges times,
/// applies the incident flip that maximises the frozen surrogate's loss at
/// the target (ties: smallest pair). Flips between two targets are skipped
/// so every target's incident flip count stays within its budget.
inline AttackResult greedy_targeted_attack(const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                                           const DataSplit& split, const AttackSpec& spec) {
  spec.validate();
  if (!g.is_unweighted()) throw Error("greedy_targeted_attack: graph must be unweighted");
  const std::size_t n = g.n_nodes();
  std::vector<NodeId> targets = spec.targets;
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (NodeId t : targets) {
    if (t >= n || t >= y.size() || y[t] < 0 || y[t] >= y.n_classes) {
      throw Error("target node " + std::to_string(t) + " is unlabeled or out of range");
    }
  }
  AttackResult res;
  if (spec.budget.b_edges == 0) return res;

  GcnModel surrogate;
  try {
    surrogate = train_surrogate(g, x, y, split, spec);
  } catch (const NumericError& e) {
    throw NumericError(std::string("surrogate diverged: ") + e.what());
  }
  const detail::TargetLossEvaluator eval(surrogate, g, x);
  std::vector<std::uint8_t> is_target(n, 0);
  for (NodeId t : targets) is_target[t] = 1;

  for (NodeId t : targets) {
    std::set<NodeId> flipped;
    for (std::size_t step = 0; step < spec.budget.b_edges; ++step) {
      double best = -INFINITY;
      std::optional<NodeId> pick;
      for (NodeId v = 0; v < n; ++v) {
        if (v == t || is_target[v] || flipped.count(v)) continue;
        std::set<NodeId> trial = flipped;
        trial.insert(v);
        const double l = eval.loss(t, y[t], trial);
        if (l > best) {
          best = l;
          pick = v;
        }
      }
      if (!pick) {
        res.truncated = true;
        break;
      }
      flipped.insert(*pick);
    }
    for (NodeId v : flipped) res.diff.flip(g, t, v);
  }
  return res;
}

inline AttackResult run_attack(const SparseGraph& g, const FeatureMatrix& x, const LabelVector& y,
                               const DataSplit& split, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::Random: return random_flip_attack(g, y, spec);
    case AttackKind::HeterophilyInject: return heterophily_inject_attack(g, y, spec);
    case AttackKind::GradUntargeted: return grad_untargeted_attack(g, x, y, split, spec);
    case AttackKind::GreedyTargeted: return greedy_targeted_attack(g, x, y, split, spec);
  }
  throw Error("unknown attack kind");
}

}  // namespace betagnn
