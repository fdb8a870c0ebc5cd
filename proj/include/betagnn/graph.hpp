#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "betagnn/error.hpp"
#include "betagnn/rng.hpp"
#include "betagnn/tensor.hpp"

namespace betagnn {

using NodeId = std::uint32_t;

/// Undirected pair stored with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  static Edge canonical(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }
  auto operator<=>(const Edge&) const = default;
};

/// Compressed sparse rows. Shared storage for SparseGraph and the
/// normalized propagation operator.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_offsets{0};
  std::vector<NodeId> col_indices;
  std::vector<Real> values;

  std::size_t nnz() const noexcept { return col_indices.size(); }
  bool operator==(const CsrMatrix&) const = default;
};

/// Undirected graph without self-loops, stored as a symmetric CSR matrix
/// with sorted column indices. Unweighted graphs carry weight 1.0.
class SparseGraph {
 public:
  SparseGraph() = default;

  static SparseGraph empty(std::size_t n) {
    SparseGraph g;
    g.csr_.n = n;
    g.csr_.row_offsets.assign(n + 1, 0);
    return g;
  }

  static SparseGraph from_edges(std::size_t n, std::span<const Edge> edges) {
    std::vector<std::tuple<NodeId, NodeId, Real>> w;
    w.reserve(edges.size());
    for (const Edge& e : edges) w.emplace_back(e.u, e.v, 1.0);
    return from_weighted_edges(n, w);
  }

  /// Each undirected pair listed once in either orientation. Rejects
  /// self-loops, duplicates, out-of-range ids and non-positive weights.
  static SparseGraph from_weighted_edges(std::size_t n,
                                         std::span<const std::tuple<NodeId, NodeId, Real>> edges) {
    std::vector<std::vector<std::pair<NodeId, Real>>> adj(n);
    for (const auto& [a, b, w] : edges) {
      if (a >= n || b >= n) {
        throw Error("edge (" + std::to_string(a) + "," + std::to_string(b) +
                    ") out of range for " + std::to_string(n) + " nodes");
      }
      if (a == b) throw Error("self-loop on node " + std::to_string(a));
      if (!(w > 0.0) || !std::isfinite(w)) throw Error("edge weight must be positive and finite");
      adj[a].emplace_back(b, w);
      adj[b].emplace_back(a, w);
    }
    SparseGraph g;
    g.csr_.n = n;
    g.csr_.row_offsets.assign(n + 1, 0);
    for (std::size_t u = 0; u < n; ++u) {
      auto& row = adj[u];
      std::sort(row.begin(), row.end());
      for (std::size_t k = 1; k < row.size(); ++k) {
        if (row[k].first == row[k - 1].first) {
          throw Error("duplicate edge (" + std::to_string(u) + "," + std::to_string(row[k].first) + ")");
        }
      }
      g.csr_.row_offsets[u + 1] = g.csr_.row_offsets[u] + row.size();
      for (const auto& [v, w] : row) {
        g.csr_.col_indices.push_back(v);
        g.csr_.values.push_back(w);
      }
    }
    return g;
  }

  std::size_t n_nodes() const noexcept { return csr_.n; }
  /// Number of undirected edges.
  std::size_t n_edges() const noexcept { return csr_.nnz() / 2; }
  const CsrMatrix& csr() const noexcept { return csr_; }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {csr_.col_indices.data() + csr_.row_offsets[u], degree(u)};
  }
  std::span<const Real> weights(NodeId u) const {
    return {csr_.values.data() + csr_.row_offsets[u], degree(u)};
  }
  std::size_t degree(NodeId u) const { return csr_.row_offsets[u + 1] - csr_.row_offsets[u]; }
  Real weighted_degree(NodeId u) const {
    auto w = weights(u);
    return std::accumulate(w.begin(), w.end(), 0.0);
  }

  bool has_edge(NodeId u, NodeId v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  Real weight(NodeId u, NodeId v) const {
    auto nb = neighbors(u);
    auto it = std::lower_bound(nb.begin(), nb.end(), v);
    if (it == nb.end() || *it != v) return 0.0;
    return weights(u)[static_cast<std::size_t>(it - nb.begin())];
  }

  bool is_unweighted() const {
    return std::all_of(csr_.values.begin(), csr_.values.end(), [](Real w) { return w == 1.0; });
  }

  /// Undirected edges with u < v, in row-major order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(n_edges());
    for (NodeId u = 0; u < csr_.n; ++u) {
      for (NodeId v : neighbors(u)) {
        if (u < v) out.push_back({u, v});
      }
    }
    return out;
  }

  /// Checks every structural invariant; throws on the first violation.
  void validate() const {
    const auto& c = csr_;
    if (c.row_offsets.size() != c.n + 1 || c.row_offsets.front() != 0) throw Error("bad row_offsets");
    if (c.row_offsets.back() != c.col_indices.size() || c.values.size() != c.col_indices.size()) {
      throw Error("row_offsets/col_indices/values length mismatch");
    }
    for (NodeId u = 0; u < c.n; ++u) {
      if (c.row_offsets[u + 1] < c.row_offsets[u]) throw Error("row_offsets not monotone");
      auto nb = neighbors(u);
      for (std::size_t k = 0; k < nb.size(); ++k) {
        if (nb[k] >= c.n) throw Error("column index out of range");
        if (nb[k] == u) throw Error("self-loop stored");
        if (k > 0 && nb[k] <= nb[k - 1]) throw Error("columns not strictly increasing");
        if (weight(nb[k], u) != weights(u)[k]) throw Error("graph not symmetric");
      }
    }
  }

  bool operator==(const SparseGraph&) const = default;

 private:
  CsrMatrix csr_;
};

/// The propagation operator D~^{-1/2}(A+I)D~^{-1/2}. Distinct from
/// SparseGraph because it stores the diagonal.
class NormalizedAdjacency {
 public:
  NormalizedAdjacency() = default;
  explicit NormalizedAdjacency(CsrMatrix m) : csr_(std::move(m)) {}

  std::size_t n_nodes() const noexcept { return csr_.n; }
  const CsrMatrix& csr() const noexcept { return csr_; }

  Real at(NodeId u, NodeId v) const {
    auto b = csr_.col_indices.begin() + static_cast<std::ptrdiff_t>(csr_.row_offsets[u]);
    auto e = csr_.col_indices.begin() + static_cast<std::ptrdiff_t>(csr_.row_offsets[u + 1]);
    auto it = std::lower_bound(b, e, v);
    if (it == e || *it != v) return 0.0;
    return csr_.values[static_cast<std::size_t>(it - csr_.col_indices.begin())];
  }

  Tensor to_dense() const {
    Tensor d(csr_.n, csr_.n);
    for (std::size_t u = 0; u < csr_.n; ++u) {
      for (std::size_t k = csr_.row_offsets[u]; k < csr_.row_offsets[u + 1]; ++k) {
        d(u, csr_.col_indices[k]) = csr_.values[k];
      }
    }
    return d;
  }

 private:
  CsrMatrix csr_;
};

/// Self-loops are added before scaling, so isolated nodes get 1.0 on the
/// diagonal. Weighted graphs use weighted degrees.
inline NormalizedAdjacency normalize_adjacency(const SparseGraph& g) {
  const std::size_t n = g.n_nodes();
  std::vector<Real> inv_sqrt(n);
  for (NodeId u = 0; u < n; ++u) inv_sqrt[u] = 1.0 / std::sqrt(g.weighted_degree(u) + 1.0);

  CsrMatrix m;
  m.n = n;
  m.row_offsets.assign(n + 1, 0);
  m.col_indices.reserve(g.csr().nnz() + n);
  m.values.reserve(g.csr().nnz() + n);
  for (NodeId u = 0; u < n; ++u) {
    auto nb = g.neighbors(u);
    auto w = g.weights(u);
    bool diag_done = false;
    for (std::size_t k = 0; k <= nb.size(); ++k) {
      if (!diag_done && (k == nb.size() || nb[k] > u)) {
        m.col_indices.push_back(u);
        m.values.push_back(inv_sqrt[u] * inv_sqrt[u]);
        diag_done = true;
      }
      if (k < nb.size()) {
        m.col_indices.push_back(nb[k]);
        m.values.push_back(w[k] * inv_sqrt[u] * inv_sqrt[nb[k]]);
      }
    }
    m.row_offsets[u + 1] = m.col_indices.size();
  }
  return NormalizedAdjacency(std::move(m));
}

struct LabelVector {
  std::vector<int> ids;
  int n_classes = 0;

  std::size_t size() const noexcept { return ids.size(); }
  int operator[](std::size_t i) const { return ids[i]; }

  void validate() const {
    if (n_classes < 1) throw Error("class count must be >= 1");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= n_classes) {
        throw Error("label " + std::to_string(ids[i]) + " of node " + std::to_string(i) +
                    " outside [0," + std::to_string(n_classes) + ")");
      }
    }
  }
};

/// n x d node features; finite, d >= 1.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Tensor values) : values_(std::move(values)) {
    if (values_.cols() < 1) throw ShapeError("feature matrix needs at least one column");
    if (!values_.all_finite()) throw NumericError("feature matrix contains non-finite entries");
  }

  std::size_t n_nodes() const noexcept { return values_.rows(); }
  std::size_t dim() const noexcept { return values_.cols(); }
  const Tensor& values() const noexcept { return values_; }
  bool operator==(const FeatureMatrix&) const = default;

 private:
  Tensor values_;
};

/// Fraction of undirected edges whose endpoints share a label. Weights are
/// ignored.
inline double homophily_score(const SparseGraph& g, const LabelVector& y) {
  if (y.size() != g.n_nodes()) throw ShapeError("label vector length does not match node count");
  std::size_t same = 0;
  std::size_t total = 0;
  for (NodeId u = 0; u < g.n_nodes(); ++u) {
    for (NodeId v : g.neighbors(u)) {
      if (u < v) {
        ++total;
        if (y[u] == y[v]) ++same;
      }
    }
  }
  if (total == 0) throw Error("undefined homophily: graph has no edges");
  return static_cast<double>(same) / static_cast<double>(total);
}

/// Edge-space attack budget. The feature budget is carried for
/// completeness; no attack here perturbs features.
struct PerturbationBudget {
  std::size_t b_edges = 0;
  double b_features = 0.0;

  void validate() const {
    if (!(b_features >= 0.0)) throw Error("feature budget must be >= 0");
  }
};

/// Edge flips relative to a base graph.
struct EdgeDiff {
  std::set<Edge> added;
  std::set<Edge> removed;

  std::size_t size() const noexcept { return added.size() + removed.size(); }
  bool empty() const noexcept { return added.empty() && removed.empty(); }
  bool operator==(const EdgeDiff&) const = default;

  /// Records a flip of (a, b) against `g`, cancelling an earlier opposite flip.
  void flip(const SparseGraph& g, NodeId a, NodeId b) {
    Edge e = Edge::canonical(a, b);
    if (g.has_edge(e.u, e.v)) {
      if (!removed.erase(e)) removed.insert(e);
    } else {
      if (!added.erase(e)) added.insert(e);
    }
  }

  bool touches(const Edge& e) const { return added.count(e) || removed.count(e); }

  EdgeDiff inverse() const { return {removed, added}; }

  /// Throws unless the diff is applicable to `g`.
  void validate(const SparseGraph& g) const {
    auto check_pair = [&](const Edge& e) {
      if (e.u >= e.v) {
        throw Error("edge diff pair (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                    ") is a self-loop or not canonical");
      }
      if (e.v >= g.n_nodes()) throw Error("edge diff pair out of range");
    };
    for (const Edge& e : added) {
      check_pair(e);
      if (removed.count(e)) throw Error("edge diff adds and removes the same pair");
      if (g.has_edge(e.u, e.v)) {
        throw Error("edge diff adds existing edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
      }
    }
    for (const Edge& e : removed) {
      check_pair(e);
      if (!g.has_edge(e.u, e.v)) {
        throw Error("edge diff removes absent edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
      }
    }
  }
};

/// Number of flipped pairs, |added| + |removed|.
inline std::size_t edge_diff_size(const EdgeDiff& d) { return d.size(); }

/// (E u added) \ removed. Only defined for unweighted graphs.
inline SparseGraph apply_edge_diff(const SparseGraph& g, const EdgeDiff& d) {
  d.validate(g);
  if (d.empty()) return g;
  if (!g.is_unweighted()) throw Error("edge diffs apply to unweighted graphs only");
  std::vector<Edge> edges;
  edges.reserve(g.n_edges() + d.added.size());
  for (const Edge& e : g.edges()) {
    if (!d.removed.count(e)) edges.push_back(e);
  }
  edges.insert(edges.end(), d.added.begin(), d.added.end());
  return SparseGraph::from_edges(g.n_nodes(), edges);
}

using Mask = std::vector<std::uint8_t>;

inline std::size_t mask_count(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

struct DataSplit {
  Mask train;
  Mask val;
  Mask test;

  std::size_t n_nodes() const noexcept { return train.size(); }

  void validate(std::size_t n) const {
    if (train.size() != n || val.size() != n || test.size() != n) {
      throw ShapeError("split masks do not match node count");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (train[i] + val[i] + test[i] > 1) throw Error("split masks overlap at node " + std::to_string(i));
    }
  }
};

/// Uniform random 10/10/80 split over all nodes.
inline DataSplit make_split(std::size_t n_nodes, std::uint64_t seed) {
  if (n_nodes < 10) throw Error("make_split needs at least 10 nodes, got " + std::to_string(n_nodes));
  std::vector<std::size_t> perm(n_nodes);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 0x5b117));
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.10 * static_cast<double>(n_nodes)));
  const auto n_val = n_train;
  DataSplit s{Mask(n_nodes, 0), Mask(n_nodes, 0), Mask(n_nodes, 0)};
  for (std::size_t k = 0; k < n_nodes; ++k) {
    if (k < n_train) {
      s.train[perm[k]] = 1;
    } else if (k < n_train + n_val) {
      s.val[perm[k]] = 1;
    } else {
      s.test[perm[k]] = 1;
    }
  }
  return s;
}

}  // namespace betagnn
