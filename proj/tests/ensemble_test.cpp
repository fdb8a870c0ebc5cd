#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ensemble_cases.hpp"

using namespace betagnn;
using namespace betagnn::testing;

namespace {

Dataset homophilic_sbm(std::uint64_t seed) {
  SbmParams p;
  p.n = 400;
  p.n_classes = 4;
  p.p_in = 0.05;
  p.p_out = 0.005;
  p.feature_dim = 16;
  p.feature_noise = 0.8;
  p.seed = seed;
  return generate_sbm(p);
}

/// A NodeClassifier whose output turns non-finite at a chosen epoch.
struct ExplodingModel {
  Parameter w{"w", Tensor(2, 2, 0.1)};
  int calls = 0;
  int explode_at = 3;

  Var forward(Tape& t, const NormalizedAdjacency&, const FeatureMatrix& x, bool training, std::uint64_t) {
    if (training) ++calls;
    Var out = matmul(t.constant(x.values()), t.parameter(w));
    if (training && calls == explode_at) return scale(out, INFINITY);
    return out;
  }
  ParamList parameters() { return {&w}; }
  std::size_t n_classes() const { return 2; }
};

}  // namespace

TEST(EnsembleForward, BetaOneIsBackbone) {
  std::mt19937_64 rng(41);
  auto e = make_beta_gcn(3, 4, 2, 0.0, 1);
  e.pin_beta(1.0);
  const auto a = normalize_adjacency(random_graph(6, 0.4, rng));
  const FeatureMatrix x(random_tensor(6, 3, rng));
  EXPECT_EQ(predict(e, a, x), predict(e.backbone(), a, x));
}

TEST(EnsembleForward, BetaRawZeroIsMidpoint) {
  std::mt19937_64 rng(42);
  auto e = make_beta_gpr(3, 4, 2, 0.0, 2);
  EXPECT_EQ(e.beta(), 0.5);
  const auto a = normalize_adjacency(random_graph(6, 0.4, rng));
  const FeatureMatrix x(random_tensor(6, 3, rng));
  const Tensor f = predict(e.backbone(), a, x);
  const Tensor g = predict(e.mlp(), a, x);
  const Tensor out = predict(e, a, x);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.5 * (f[i] + g[i]), 1e-15);
}

TEST(EnsembleForward, ConvexCombinationArithmetic) {
  std::mt19937_64 rng(43);
  auto e = make_beta_gcn(3, 4, 2, 0.0, 3);
  e.set_beta_raw(std::log(0.3 / 0.7));
  EXPECT_NEAR(e.beta(), 0.3, 1e-15);
  const auto a = normalize_adjacency(random_graph(7, 0.4, rng));
  const FeatureMatrix x(random_tensor(7, 3, rng));
  const Tensor f = predict(e.backbone(), a, x);
  const Tensor g = predict(e.mlp(), a, x);
  const Tensor out = predict(e, a, x);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.3 * f[i] + 0.7 * g[i], 1e-14);
}

TEST(EnsembleForward, MismatchedSubmodelsRejected) {
  EXPECT_THROW(BetaEnsemble<GcnModel>(make_gcn(3, 4, 2, 0.0, 1), make_mlp(3, 4, 3, 0.0, 1)), ShapeError);
}

TEST(BetaGradient, IdenticalSubmodelsGiveZero) {
  std::mt19937_64 rng(44);
  for (int i = 0; i < 10; ++i) {
    auto e = twin_ensemble(4, 5, 3, rng());
    e.set_beta_raw(std::uniform_real_distribution<double>(-2, 2)(rng));
    const auto a = normalize_adjacency(SparseGraph::empty(9));
    const FeatureMatrix x(random_tensor(9, 4, rng));
    const LabelVector y = random_labels(9, 3, rng);
    const Mask m(9, 1);
    EXPECT_EQ(beta_grad_closed_form(e, a, x, y, m), 0.0);
    EXPECT_LE(std::abs(autodiff_beta_grad(e, a, x, y, m)), 1e-12);
    const Tensor base = predict(e, a, x);
    for (double b : {0.01, 0.3, 0.99}) {
      e.pin_beta(b);
      EXPECT_EQ(predict(e, a, x), base);
    }
  }
}

TEST(BetaGradient, PerfectFitGivesZero) {
  // One-hot features, identity-like weights: both members put a large
  // margin on the true class, so dL/dy_hat vanishes.
  const std::size_t c = 3;
  auto e = make_beta_gcn(c, c, c, 0.0, 5);
  auto& w = e.backbone().raw_parameters();
  w[0].value = Tensor::identity(c);
  w[1].value = Tensor::identity(c);
  for (Real& v : w[0].value.data()) v *= 100.0;
  auto& mp = e.mlp().raw_parameters();
  mp[0].value = Tensor::identity(c);
  mp[2].value = Tensor::identity(c);
  for (Real& v : mp[0].value.data()) v *= 150.0;
  mp[1].value.fill(0.0);
  mp[3].value.fill(0.0);
  const LabelVector y{{0, 1, 2, 1, 0, 2}, 3};
  Tensor x(6, c);
  for (std::size_t i = 0; i < 6; ++i) x(i, static_cast<std::size_t>(y[i])) = 1.0;
  const auto a = normalize_adjacency(SparseGraph::empty(6));
  const double g = beta_grad_closed_form(e, a, FeatureMatrix(x), y, Mask(6, 1));
  EXPECT_LE(std::abs(g), 1e-12);
}

TEST(BetaGradient, ClosedFormMatchesAutodiff) {
  std::mt19937_64 rng(45);
  for (int i = 0; i < 20; ++i) {
    auto e = make_beta_gcn(4, 6, 3, 0.0, rng());
    const double raw = std::uniform_real_distribution<double>(-2, 2)(rng);
    e.set_beta_raw(raw);
    const SparseGraph g = random_graph(12, 0.3, rng);
    const auto a = normalize_adjacency(g);
    const FeatureMatrix x(random_tensor(12, 4, rng));
    const LabelVector y = random_labels(12, 3, rng);
    Mask m(12, 0);
    for (std::size_t k = 0; k < 12; k += 2) m[k] = 1;
    const double s = sigmoid(raw);
    const double closed = beta_grad_closed_form(e, a, x, y, m);
    EXPECT_NEAR(autodiff_beta_grad(e, a, x, y, m) / (s * (1.0 - s)), closed, 1e-8);
  }
}

TEST(Evaluate, OneHotLogitsArePerfect) {
  const LabelVector y{{2, 0, 1, 1}, 3};
  Tensor logits(4, 3);
  for (std::size_t i = 0; i < 4; ++i) logits(i, static_cast<std::size_t>(y[i])) = 1.0;
  EXPECT_EQ(accuracy(logits, y, Mask(4, 1)), 1.0);
}

TEST(Evaluate, ConstantLogitsPickLowestClass) {
  std::mt19937_64 rng(46);
  const LabelVector y = random_labels(50, 4, rng);
  Mask m(50, 0);
  for (std::size_t i = 0; i < 50; i += 3) m[i] = 1;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < 50; ++i) zeros += (m[i] && y[i] == 0);
  EXPECT_DOUBLE_EQ(accuracy(Tensor(50, 4, 0.7), y, m), static_cast<double>(zeros) / mask_count(m));
}

TEST(Evaluate, RandomLogitsNearChance) {
  std::mt19937_64 rng(47);
  const double acc = accuracy(random_tensor(1000, 4, rng), random_labels(1000, 4, rng), Mask(1000, 1));
  EXPECT_GE(acc, 0.17);
  EXPECT_LE(acc, 0.33);
}

TEST(Evaluate, EmptyMaskIsAnError) {
  EXPECT_THROW(accuracy(Tensor(3, 2), LabelVector{{0, 1, 0}, 2}, Mask(3, 0)), Error);
}

TEST(Train, CleanHomophilicSbm) {
  const Dataset ds = homophilic_sbm(7);
  const DataSplit split = make_split(400, 1);
  auto e = make_beta_gcn(16, 64, 4, 0.5, 2);
  const TrainResult r = train(e, ds.graph, ds.features, ds.labels, split, TrainConfig{.seed = 3});
  EXPECT_GE(r.test_acc, 0.85);
  ASSERT_TRUE(r.final_beta.has_value());
  EXPECT_GT(*r.final_beta, 0.5);
}

TEST(Train, TrajectoryInvariants) {
  const Dataset ds = homophilic_sbm(8);
  const DataSplit split = make_split(400, 4);
  auto e = make_beta_gcn(16, 16, 4, 0.5, 5);
  const TrainResult r =
      train(e, ds.graph, ds.features, ds.labels, split, TrainConfig{.epochs = 60, .lr = 0.05, .seed = 6});
  ASSERT_EQ(r.trajectory.size(), 60u);
  for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
    EXPECT_EQ(r.trajectory[k].epoch, static_cast<int>(k + 1));
    ASSERT_TRUE(r.trajectory[k].beta.has_value());
    EXPECT_GT(*r.trajectory[k].beta, 0.0);
    EXPECT_LT(*r.trajectory[k].beta, 1.0);
  }
  EXPECT_EQ(r.final_beta, r.trajectory.back().beta);
  const auto best = std::max_element(r.trajectory.begin(), r.trajectory.end(),
                                     [](const EpochRecord& a, const EpochRecord& b) { return a.val_acc < b.val_acc; });
  EXPECT_EQ(r.best_epoch, best->epoch);
  EXPECT_EQ(r.best_val_acc, best->val_acc);
  // The model is left at the best-validation parameters.
  EXPECT_EQ(evaluate(e, normalize_adjacency(ds.graph), ds.features, ds.labels, split.test), r.test_acc);
}

TEST(Train, Deterministic) {
  const Dataset ds = homophilic_sbm(9);
  const DataSplit split = make_split(400, 7);
  auto run = [&] {
    auto e = make_beta_gcn(16, 16, 4, 0.5, 8);
    return train(e, ds.graph, ds.features, ds.labels, split, TrainConfig{.epochs = 30, .seed = 9});
  };
  const TrainResult a = run();
  const TrainResult b = run();
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t k = 0; k < a.trajectory.size(); ++k) {
    EXPECT_EQ(a.trajectory[k].beta, b.trajectory[k].beta);
    EXPECT_EQ(a.trajectory[k].train_loss, b.trajectory[k].train_loss);
    EXPECT_EQ(a.trajectory[k].val_acc, b.trajectory[k].val_acc);
  }
  EXPECT_EQ(a.test_acc, b.test_acc);
}

TEST(Train, PinnedBetaOneReproducesBackbone) {
  const Dataset ds = homophilic_sbm(10);
  const DataSplit split = make_split(400, 10);
  const TrainConfig cfg{.epochs = 40, .seed = 11};
  auto e = make_beta_gcn(16, 16, 4, 0.5, 12);
  e.pin_beta(1.0);
  auto g = make_gcn(16, 16, 4, 0.5, 12);
  const TrainResult re = train(e, ds.graph, ds.features, ds.labels, split, cfg);
  const TrainResult rg = train(g, ds.graph, ds.features, ds.labels, split, cfg);
  ASSERT_EQ(re.trajectory.size(), rg.trajectory.size());
  for (std::size_t k = 0; k < re.trajectory.size(); ++k) {
    EXPECT_EQ(re.trajectory[k].train_loss, rg.trajectory[k].train_loss) << "epoch " << k + 1;
    EXPECT_EQ(re.trajectory[k].val_acc, rg.trajectory[k].val_acc) << "epoch " << k + 1;
  }
  EXPECT_EQ(re.test_acc, rg.test_acc);
}

TEST(Train, DivergenceNamesEpoch) {
  ExplodingModel m;
  const FeatureMatrix x(Tensor(10, 2, 1.0));
  const LabelVector y{{0, 1, 0, 1, 0, 1, 0, 1, 0, 1}, 2};
  const DataSplit split = custom_split(10, {0, 1}, {2, 3});
  try {
    train(m, SparseGraph::empty(10), x, y, split, TrainConfig{.epochs = 5});
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 3"), std::string::npos) << e.what();
  }
}

TEST(Train, ConfigValidation) {
  EXPECT_THROW(TrainConfig{.epochs = 0}.validate(), Error);
  EXPECT_THROW(TrainConfig{.lr = 0.0}.validate(), Error);
  EXPECT_THROW(TrainConfig{.clip_max_norm = 0.0}.validate(), Error);
  EXPECT_THROW(TrainConfig{.dropout = 1.0}.validate(), Error);
  EXPECT_THROW(TrainConfig{.weight_decay = -1.0}.validate(), Error);
}
