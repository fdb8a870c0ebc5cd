#pragma once

// Test helpers and independent oracles. Nothing here calls into the code
// under test for the quantity it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "betagnn/betagnn.hpp"

namespace betagnn {

/// gtest printer: shape plus up to 12 leading entries.
inline void PrintTo(const Tensor& t, std::ostream* os) {
  *os << t.shape() << " [";
  for (std::size_t i = 0; i < std::min<std::size_t>(t.size(), 12); ++i) *os << (i ? ", " : "") << t[i];
  *os << (t.size() > 12 ? ", ...]" : "]");
}

}  // namespace betagnn

namespace betagnn::testing {

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(r, c);
  for (Real& v : t.data()) v = d(rng);
  return t;
}

/// Entries bounded away from zero so relu kinks are never straddled by a
/// finite-difference step.
inline Tensor random_tensor_no_kink(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(r, c);
  for (Real& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline SparseGraph random_graph(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if (coin(rng)) edges.push_back({u, v});
    }
  }
  return SparseGraph::from_edges(n, edges);
}

inline LabelVector random_labels(std::size_t n, int c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, c - 1);
  LabelVector y{std::vector<int>(n), c};
  for (int& v : y.ids) v = d(rng);
  return y;
}

inline std::set<std::pair<NodeId, NodeId>> edge_set(const SparseGraph& g) {
  std::set<std::pair<NodeId, NodeId>> s;
  for (NodeId u = 0; u < g.n_nodes(); ++u) {
    for (NodeId v : g.neighbors(u)) {
      if (u < v) s.emplace(u, v);
    }
  }
  return s;
}

/// |E| + |E'| - 2|E n E'| from plain set algebra.
inline std::size_t delta_e_oracle(const SparseGraph& a, const SparseGraph& b) {
  const auto ea = edge_set(a);
  const auto eb = edge_set(b);
  std::vector<std::pair<NodeId, NodeId>> common;
  std::set_intersection(ea.begin(), ea.end(), eb.begin(), eb.end(), std::back_inserter(common));
  return ea.size() + eb.size() - 2 * common.size();
}

/// Dense D^-1/2 (A + I) D^-1/2 straight from the definition.
inline std::vector<std::vector<double>> normalized_oracle(const SparseGraph& g) {
  const std::size_t n = g.n_nodes();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (NodeId u = 0; u < n; ++u) {
    a[u][u] = 1.0;
    for (NodeId v = 0; v < n; ++v) {
      if (u != v) a[u][v] = g.weight(u, v);
    }
  }
  std::vector<double> d(n, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) d[u] += a[u][v];
  }
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) a[u][v] /= std::sqrt(d[u] * d[v]);
  }
  return a;
}

/// Jaccard of the sets {k : x_k > 0} built with std::set.
inline double jaccard_oracle(const Tensor& x, std::size_t u, std::size_t v) {
  std::set<std::size_t> bu;
  std::set<std::size_t> bv;
  for (std::size_t k = 0; k < x.cols(); ++k) {
    if (x(u, k) > 0) bu.insert(k);
    if (x(v, k) > 0) bv.insert(k);
  }
  std::vector<std::size_t> i;
  std::vector<std::size_t> un;
  std::set_intersection(bu.begin(), bu.end(), bv.begin(), bv.end(), std::back_inserter(i));
  std::set_union(bu.begin(), bu.end(), bv.begin(), bv.end(), std::back_inserter(un));
  return un.empty() ? 0.0 : static_cast<double>(i.size()) / static_cast<double>(un.size());
}

/// Cyclic Jacobi eigenvalue iteration for a small symmetric matrix.
inline std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  return ev;
}

/// Best rank-k Frobenius error of a symmetric matrix: the root sum of
/// squares of all but the k largest-magnitude eigenvalues.
inline double best_rank_k_error(const std::vector<std::vector<double>>& a, std::size_t k) {
  auto ev = symmetric_eigenvalues(a);
  std::sort(ev.begin(), ev.end(), [](double x, double y) { return std::abs(x) > std::abs(y); });
  double s = 0.0;
  for (std::size_t i = k; i < ev.size(); ++i) s += ev[i] * ev[i];
  return std::sqrt(s);
}

inline double frobenius_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Relative error of one analytic partial against finite differences of
/// `f` around `x0`. Central differences at step h first; if those disagree,
/// the entry may straddle a relu kink, where the analytic value must equal
/// one of the one-sided derivatives (taken with step 1e-7).
inline double entry_error(const std::function<double(double)>& f, double x0, double analytic, double h) {
  auto rel = [&](double fd) { return std::abs(analytic - fd) / std::max(1.0, std::abs(fd)); };
  const double central = rel((f(x0 + h) - f(x0 - h)) / (2.0 * h));
  if (central <= 1e-6) return central;
  constexpr double kSide = 1e-7;
  const double f0 = f(x0);
  const double fwd = rel((f(x0 + kSide) - f0) / kSide);
  const double bwd = rel((f0 - f(x0 - kSide)) / kSide);
  return std::min({central, fwd, bwd});
}

/// Largest entry_error over every entry of every input. `build` maps leaf
/// Vars to a scalar.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double gradient_check(const ScalarFn& build, std::vector<Tensor> inputs, double h = 1e-4) {
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> leaves;
    for (const Tensor& x : inputs) leaves.push_back(t.variable(x));
    Var loss = build(t, leaves);
    t.backward(loss);
    for (const Var& v : leaves) analytic.push_back(t.grad(v));
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> leaves;
    for (const Tensor& x : xs) leaves.push_back(t.constant(x));
    return build(t, leaves).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      auto f = [&](double x) {
        inputs[k][i] = x;
        const double out = eval(inputs);
        inputs[k][i] = orig;
        return out;
      };
      worst = std::max(worst, entry_error(f, orig, analytic[k][i], h));
    }
  }
  return worst;
}

/// Same check against Parameter gradients of a model loss.
inline double parameter_gradient_check(const std::function<Var(Tape&)>& loss_fn, const ParamList& params,
                                       double h = 1e-4) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(loss_fn(t));
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  auto eval = [&] {
    Tape t;
    return loss_fn(t).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& v = params[k]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      auto f = [&](double x) {
        v[i] = x;
        const double out = eval();
        v[i] = orig;
        return out;
      };
      worst = std::max(worst, entry_error(f, orig, analytic[k][i], h));
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return worst;
}

/// Scalar readout L * X * R with fixed L (1 x rows) and R (cols x 1).
inline Var bilinear_readout(Tape& t, Var x, const Tensor& l, const Tensor& r) {
  return matmul(matmul(t.constant(l), x), t.constant(r));
}

/// Split with explicit node lists (for tiny graphs below make_split's floor).
inline DataSplit custom_split(std::size_t n, const std::vector<NodeId>& train, const std::vector<NodeId>& val) {
  DataSplit s{Mask(n, 0), Mask(n, 0), Mask(n, 1)};
  for (NodeId i : train) {
    s.train[i] = 1;
    s.test[i] = 0;
  }
  for (NodeId i : val) {
    s.val[i] = 1;
    s.test[i] = 0;
  }
  return s;
}

inline std::vector<std::uint8_t> bytes_of(const FeatureMatrix& x) {
  const auto& d = x.values().data();
  const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
  return {p, p + d.size() * sizeof(Real)};
}

/// Number of flipped pairs in `d` incident to node t.
inline std::size_t incident_flips(const EdgeDiff& d, NodeId t) {
  std::size_t c = 0;
  for (const Edge& e : d.added) c += (e.u == t || e.v == t);
  for (const Edge& e : d.removed) c += (e.u == t || e.v == t);
  return c;
}

}  // namespace betagnn::testing
