#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "betagnn/graph.hpp"
#include "betagnn/io.hpp"
#include "betagnn/rng.hpp"

namespace betagnn {

struct SbmParams {
  std::size_t n = 400;
  int n_classes = 4;
  double p_in = 0.05;
  double p_out = 0.005;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
};

/// Balanced stochastic block model. Node i belongs to block i * C / n.
/// Features are a per-class Gaussian mean (standard normal entries) plus
/// isotropic noise of standard deviation `feature_noise`.
inline Dataset generate_sbm(const SbmParams& p) {
  if (p.n_classes < 1 || p.n < static_cast<std::size_t>(p.n_classes) || p.n < 2) {
    throw Error("generate_sbm: need n >= max(2, n_classes) and n_classes >= 1");
  }
  if (!(p.p_in >= 0.0 && p.p_in <= 1.0 && p.p_out >= 0.0 && p.p_out <= 1.0)) {
    throw Error("generate_sbm: probabilities must lie in [0,1]");
  }
  if (p.feature_dim < 1) throw Error("generate_sbm: feature_dim must be >= 1");
  if (!(p.feature_noise >= 0.0)) throw Error("generate_sbm: feature_noise must be >= 0");

  const auto c = static_cast<std::size_t>(p.n_classes);
  LabelVector y{std::vector<int>(p.n), p.n_classes};
  for (std::size_t i = 0; i < p.n; ++i) y.ids[i] = static_cast<int>(i * c / p.n);

  Rng edge_rng(derive_seed(p.seed, 0xed9e));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;
  for (NodeId u = 0; u < p.n; ++u) {
    for (NodeId v = u + 1; v < p.n; ++v) {
      const double prob = y[u] == y[v] ? p.p_in : p.p_out;
      if (unif(edge_rng) < prob) edges.push_back({u, v});
    }
  }

  Rng feat_rng(derive_seed(p.seed, 0xfea7));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor means(c, p.feature_dim);
  for (Real& v : means.data()) v = normal(feat_rng);
  Tensor x(p.n, p.feature_dim);
  for (std::size_t i = 0; i < p.n; ++i) {
    for (std::size_t k = 0; k < p.feature_dim; ++k) {
      x(i, k) = means(static_cast<std::size_t>(y[i]), k) + p.feature_noise * normal(feat_rng);
    }
  }

  Dataset ds;
  ds.graph = SparseGraph::from_edges(p.n, edges);
  ds.features = FeatureMatrix(std::move(x));
  ds.labels = std::move(y);
  ds.manifest = {"sbm-n" + std::to_string(p.n) + "-c" + std::to_string(p.n_classes), p.n, p.feature_dim, p.n_classes};
  return ds;
}

}  // namespace betagnn
