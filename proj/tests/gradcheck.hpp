#pragma once

// Randomized finite-difference cases shared by the unit tests and the
// acceptance binary. Each instance returns the worst relative error.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"

namespace betagnn::testing {

struct GradCase {
  std::string name;
  std::function<double(std::mt19937_64&)> instance;
};

inline std::size_t dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 8) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Checks an op f(inputs) through a random fixed bilinear readout.
inline double readout_check(std::mt19937_64& rng, std::vector<Tensor> inputs,
                            const std::function<Var(Tape&, const std::vector<Var>&)>& op) {
  Tensor probe;
  {
    Tape t;
    std::vector<Var> v;
    for (const Tensor& x : inputs) v.push_back(t.constant(x));
    probe = op(t, v).value();
  }
  const Tensor l = random_tensor(1, probe.rows(), rng);
  const Tensor r = random_tensor(probe.cols(), 1, rng);
  return gradient_check([&](Tape& t, const std::vector<Var>& v) { return bilinear_readout(t, op(t, v), l, r); },
                        std::move(inputs));
}

inline LabelVector labels_for(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  return random_labels(n, static_cast<int>(c), rng);
}

inline Mask nonempty_mask(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.6);
  Mask m(n, 0);
  for (auto& b : m) b = coin(rng) ? 1 : 0;
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  return m;
}

/// Random small graph with its normalized adjacency owned alongside.
struct SmallGraph {
  SparseGraph g;
  NormalizedAdjacency a;
};

inline SmallGraph small_graph(std::size_t n, std::mt19937_64& rng) {
  SmallGraph s{random_graph(n, 0.4, rng), {}};
  s.a = normalize_adjacency(s.g);
  return s;
}

inline std::vector<GradCase> op_cases() {
  std::vector<GradCase> c;
  c.push_back({"matmul", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), k = dim(rng), q = dim(rng);
                 return readout_check(rng, {random_tensor(r, k, rng), random_tensor(k, q, rng)},
                                      [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); });
               }});
  c.push_back({"spmm", [](std::mt19937_64& rng) {
                 const SmallGraph s = small_graph(dim(rng), rng);
                 return readout_check(rng, {random_tensor(s.g.n_nodes(), dim(rng), rng)},
                                      [&](Tape&, const std::vector<Var>& v) { return spmm(s.a, v[0]); });
               }});
  c.push_back({"add_bias", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), q = dim(rng);
                 return readout_check(rng, {random_tensor(r, q, rng), random_tensor(1, q, rng)},
                                      [](Tape&, const std::vector<Var>& v) { return add_bias(v[0], v[1]); });
               }});
  c.push_back({"add", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), q = dim(rng);
                 return readout_check(rng, {random_tensor(r, q, rng), random_tensor(r, q, rng)},
                                      [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); });
               }});
  c.push_back({"sub", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), q = dim(rng);
                 return readout_check(rng, {random_tensor(r, q, rng), random_tensor(r, q, rng)},
                                      [](Tape&, const std::vector<Var>& v) { return sub(v[0], v[1]); });
               }});
  c.push_back({"relu", [](std::mt19937_64& rng) {
                 return readout_check(rng, {random_tensor_no_kink(dim(rng), dim(rng), rng)},
                                      [](Tape&, const std::vector<Var>& v) { return relu(v[0]); });
               }});
  c.push_back({"dropout", [](std::mt19937_64& rng) {
                 const std::uint64_t stream = rng();
                 return readout_check(rng, {random_tensor(dim(rng), dim(rng), rng)},
                                      [stream](Tape&, const std::vector<Var>& v) {
                                        return dropout(v[0], 0.4, stream, true);
                                      });
               }});
  c.push_back({"log_softmax", [](std::mt19937_64& rng) {
                 return readout_check(rng, {random_tensor(dim(rng), dim(rng), rng, -3.0, 3.0)},
                                      [](Tape&, const std::vector<Var>& v) { return log_softmax(v[0]); });
               }});
  c.push_back({"scale", [](std::mt19937_64& rng) {
                 const double k = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
                 return readout_check(rng, {random_tensor(dim(rng), dim(rng), rng)},
                                      [k](Tape&, const std::vector<Var>& v) { return scale(v[0], k); });
               }});
  c.push_back({"scale_by", [](std::mt19937_64& rng) {
                 return readout_check(rng, {random_tensor(1, 1, rng), random_tensor(dim(rng), dim(rng), rng)},
                                      [](Tape&, const std::vector<Var>& v) { return scale_by(v[0], v[1]); });
               }});
  c.push_back({"axpy", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), q = dim(rng);
                 return readout_check(rng, {random_tensor(1, 1, rng), random_tensor(r, q, rng), random_tensor(r, q, rng)},
                                      [](Tape&, const std::vector<Var>& v) { return axpy(v[0], v[1], v[2]); });
               }});
  c.push_back({"sigmoid", [](std::mt19937_64& rng) {
                 return gradient_check([](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); },
                                       {random_tensor(1, 1, rng, -4.0, 4.0)});
               }});
  c.push_back({"convex_combine", [](std::mt19937_64& rng) {
                 const std::size_t r = dim(rng), q = dim(rng);
                 return readout_check(
                     rng, {random_tensor(1, 1, rng, 0.05, 0.95), random_tensor(r, q, rng), random_tensor(r, q, rng)},
                     [](Tape&, const std::vector<Var>& v) { return convex_combine(v[0], v[1], v[2]); });
               }});
  c.push_back({"masked_nll", [](std::mt19937_64& rng) {
                 const std::size_t n = dim(rng), k = dim(rng, 2);
                 const LabelVector y = labels_for(n, k, rng);
                 const Mask m = nonempty_mask(n, rng);
                 return gradient_check([&](Tape&, const std::vector<Var>& v) { return masked_nll(v[0], y, m); },
                                       {random_tensor(n, k, rng)});
               }});
  c.push_back({"cross_entropy_loss", [](std::mt19937_64& rng) {
                 const std::size_t n = dim(rng), k = dim(rng, 2);
                 const LabelVector y = labels_for(n, k, rng);
                 const Mask m = nonempty_mask(n, rng);
                 return gradient_check(
                     [&](Tape&, const std::vector<Var>& v) { return cross_entropy_loss(v[0], y, m); },
                     {random_tensor(n, k, rng, -3.0, 3.0)});
               }});
  c.push_back({"sum", [](std::mt19937_64& rng) {
                 return gradient_check([](Tape&, const std::vector<Var>& v) { return sum(v[0]); },
                                       {random_tensor(dim(rng), dim(rng), rng)});
               }});
  c.push_back({"sym_normalize_dense", [](std::mt19937_64& rng) {
                 const std::size_t n = dim(rng);
                 return readout_check(rng, {random_tensor(n, n, rng, 0.0, 1.0)},
                                      [](Tape&, const std::vector<Var>& v) { return sym_normalize_dense(v[0]); });
               }});
  return c;
}

/// Full-model loss checks against Parameter gradients, dropout active with a
/// fixed stream.
inline std::vector<GradCase> model_cases() {
  struct Setup {
    SmallGraph s;
    FeatureMatrix x;
    LabelVector y;
    Mask m;
    std::size_t d, h, c;
    std::uint64_t stream;
  };
  auto setup = [](std::mt19937_64& rng) {
    const std::size_t n = dim(rng, 3, 8);
    Setup s{small_graph(n, rng), {}, {}, {}, dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 2, 4), rng()};
    s.x = FeatureMatrix(random_tensor(n, s.d, rng));
    s.y = labels_for(n, s.c, rng);
    s.m = nonempty_mask(n, rng);
    return s;
  };
  auto check = [](auto& model, Setup& s) {
    return parameter_gradient_check(
        [&](Tape& t) { return cross_entropy_loss(model.forward(t, s.s.a, s.x, true, s.stream), s.y, s.m); },
        model.parameters());
  };
  std::vector<GradCase> c;
  c.push_back({"mlp", [=](std::mt19937_64& rng) {
                 Setup s = setup(rng);
                 auto m = make_mlp(s.d, s.h, s.c, 0.3, rng());
                 return check(m, s);
               }});
  c.push_back({"gcn", [=](std::mt19937_64& rng) {
                 Setup s = setup(rng);
                 auto m = make_gcn(s.d, s.h, s.c, 0.3, rng());
                 return check(m, s);
               }});
  c.push_back({"gpr", [=](std::mt19937_64& rng) {
                 Setup s = setup(rng);
                 auto m = make_gpr(s.d, s.h, s.c, 0.3, rng(), dim(rng, 1, 4));
                 return check(m, s);
               }});
  c.push_back({"beta-gcn", [=](std::mt19937_64& rng) {
                 Setup s = setup(rng);
                 auto m = make_beta_gcn(s.d, s.h, s.c, 0.3, rng());
                 m.set_beta_raw(std::uniform_real_distribution<double>(-1.5, 1.5)(rng));
                 return check(m, s);
               }});
  c.push_back({"beta-gpr", [=](std::mt19937_64& rng) {
                 Setup s = setup(rng);
                 auto m = make_beta_gpr(s.d, s.h, s.c, 0.3, rng(), dim(rng, 1, 4));
                 m.set_beta_raw(std::uniform_real_distribution<double>(-1.5, 1.5)(rng));
                 return check(m, s);
               }});
  return c;
}

}  // namespace betagnn::testing
