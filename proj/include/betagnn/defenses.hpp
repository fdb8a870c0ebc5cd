#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <tuple>
#include <vector>

#include "betagnn/attacks.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/kernels.hpp"
#include "betagnn/rng.hpp"

namespace betagnn {

/// Jaccard similarity of the binarised (x > 0) feature rows of u and v.
/// Defined as 0 when both rows are all-zero.
inline double feature_jaccard(const FeatureMatrix& x, NodeId u, NodeId v) {
  auto a = x.values().row(u);
  auto b = x.values().row(v);
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool ia = a[k] > 0.0;
    const bool ib = b[k] > 0.0;
    inter += static_cast<std::size_t>(ia && ib);
    uni += static_cast<std::size_t>(ia || ib);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Drops every edge whose endpoint feature Jaccard similarity is below tau.
inline SparseGraph jaccard_prune(const SparseGraph& g, const FeatureMatrix& x, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("jaccard_prune: tau must be in [0,1]");
  if (x.n_nodes() != g.n_nodes()) throw ShapeError("jaccard_prune: feature rows do not match node count");
  std::vector<std::tuple<NodeId, NodeId, Real>> kept;
  for (NodeId u = 0; u < g.n_nodes(); ++u) {
    auto nb = g.neighbors(u);
    auto w = g.weights(u);
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (u < nb[k] && !(feature_jaccard(x, u, nb[k]) < tau)) kept.emplace_back(u, nb[k], w[k]);
    }
  }
  return SparseGraph::from_weighted_edges(g.n_nodes(), kept);
}

/// Rank-k factors A ~ U diag(S) V^T; S descending.
struct LowRankFactors {
  Tensor u;  // n x k
  std::vector<Real> s;
  Tensor v;  // n x k

  std::size_t rank() const noexcept { return s.size(); }

  Tensor reconstruct() const {
    Tensor us = u;
    for (std::size_t r = 0; r < us.rows(); ++r) {
      for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s[c];
    }
    return kernels::matmul_nt(us, v);
  }
};

/// Randomised subspace iteration (range finder with `iters` power steps,
/// oversampling 10) followed by an exact SVD of the projected matrix.
inline LowRankFactors truncated_svd(const Tensor& a, std::size_t k, std::size_t iters, std::uint64_t seed) {
  using Mat = Eigen::MatrixXd;
  const std::size_t n = a.rows();
  if (k < 1 || k > std::min(a.rows(), a.cols())) throw Error("truncated_svd: k must be in [1, min(rows, cols)]");
  if (iters < 2) throw Error("truncated_svd: needs at least 2 power iterations");
  const Mat A = kernels::view(a);
  const auto l = static_cast<Eigen::Index>(std::min<std::size_t>(std::min(a.rows(), a.cols()), k + 10));

  Rng rng(derive_seed(seed, 0x5bd));
  std::normal_distribution<double> normal;
  Mat omega(A.cols(), l);
  for (Eigen::Index j = 0; j < l; ++j) {
    for (Eigen::Index i = 0; i < A.cols(); ++i) omega(i, j) = normal(rng);
  }
  auto orth = [l](const Mat& y) -> Mat {
    Eigen::HouseholderQR<Mat> qr(y);
    return qr.householderQ() * Mat::Identity(y.rows(), l);
  };
  Mat q = orth(A * omega);
  for (std::size_t it = 0; it < iters; ++it) {
    q = orth(A.transpose() * q);
    q = orth(A * q);
  }
  const Mat b = q.transpose() * A;
  Eigen::JacobiSVD<Mat> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Mat uu = q * svd.matrixU();
  const Mat& vv = svd.matrixV();

  LowRankFactors f{Tensor(n, k), std::vector<Real>(k), Tensor(a.cols(), k)};
  for (std::size_t c = 0; c < k; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    f.s[c] = svd.singularValues()(ci);
    for (std::size_t r = 0; r < n; ++r) f.u(r, c) = uu(static_cast<Eigen::Index>(r), ci);
    for (std::size_t r = 0; r < a.cols(); ++r) f.v(r, c) = vv(static_cast<Eigen::Index>(r), ci);
  }
  return f;
}

/// Replaces the adjacency by its rank-k reconstruction, clipped to [0, 1],
/// symmetrised, with entries below 1e-8 and the diagonal dropped. The
/// result is weighted.
inline SparseGraph truncated_svd_clean(const SparseGraph& g, std::size_t k, std::size_t iters, std::uint64_t seed) {
  const std::size_t n = g.n_nodes();
  if (n > kDenseNodeLimit) {
    throw Error("truncated_svd_clean: " + std::to_string(n) + " nodes exceeds the dense limit of " +
                std::to_string(kDenseNodeLimit));
  }
  if (k < 1 || k > n) throw Error("truncated_svd_clean: k must be in [1, n]");
  const Tensor low = truncated_svd(dense_adjacency(g), k, iters, seed).reconstruct();
  std::vector<std::tuple<NodeId, NodeId, Real>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double w = std::clamp(0.5 * (low(u, v) + low(v, u)), 0.0, 1.0);
      if (w >= 1e-8) edges.emplace_back(u, v, w);
    }
  }
  return SparseGraph::from_weighted_edges(n, edges);
}

}  // namespace betagnn
