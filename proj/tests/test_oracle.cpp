#include <gtest/gtest.h>

#include "pcv/oracle.hpp"
#include "pcv/propagation.hpp"
#include "support/random_nets.hpp"

using namespace pcv;

TEST(Oracle, IntervalForwardZeroEpsilon) {
  const auto fc = fixtures::random_case(3, true);
  const auto b = oracle::interval_forward(fc.net, {fc.cloud, Norm::Linf, 0.0});
  const auto acts = forward_all(fc.net, fc.cloud);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_LE((b[i].lower - acts[i]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((b[i].upper - acts[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Oracle, IntervalForwardToy) {
  const auto b = oracle::interval_forward(fixtures::toy_network(), {fixtures::toy_cloud(), Norm::Linf, 1.0});
  EXPECT_EQ(b[3].lower[0], 0.0);
  EXPECT_EQ(b[3].upper[0], 4.0);
  EXPECT_EQ(b[4].lower[0], 0.0);
  EXPECT_EQ(b[4].upper[0], 8.0);
  EXPECT_EQ(b[4].lower[1], -1.0);
  EXPECT_EQ(b[4].upper[1], 1.0);
  EXPECT_EQ(b[5].lower[0], 0.0);
  EXPECT_EQ(b[5].upper[0], 8.0);
  // Plain interval arithmetic gives p12 in [-9, 1]; it does not contain
  // the engine's [-8, 2.5].
  EXPECT_EQ(b[5].lower[1], -9.0);
  EXPECT_EQ(b[5].upper[1], 1.0);
}

TEST(Oracle, SingleAffineLayerMatchesEngine) {
  Layer d;
  d.kind = LayerKind::Dense;
  d.weight = RowMatrix::Random(3, 4);
  d.bias = Eigen::VectorXd::Random(3);
  const Network net({2, 2}, 3, {d});
  PointCloud c;
  c.points = RowMatrix::Random(2, 2);
  for (Norm p : {Norm::L1, Norm::L2, Norm::Linf}) {
    const PerturbationSpec spec{c, p, 0.2};
    const auto a = oracle::interval_forward(net, spec);
    const auto b = compute_all_bounds(net, spec);
    EXPECT_LE((a[1].lower - b[1].lower).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a[1].upper - b[1].upper).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Oracle, AttackAtZeroEpsilonReturnsCenter) {
  const auto fc = fixtures::random_case(8, false);
  const auto w = oracle::sample_attack(fc.net, fc.cloud, 0.0, Norm::L2, 50, 1);
  EXPECT_TRUE(w.perturbed_cloud.points == fc.cloud.points);
  EXPECT_EQ(w.distortion, 0.0);
  EXPECT_EQ(w.sample_index, 0u);
}

TEST(Oracle, AttackOnToyBoundedByEngine) {
  const PerturbationSpec spec{fixtures::toy_cloud(), Norm::Linf, 1.0};
  const auto w = oracle::sample_attack(fixtures::toy_network(), spec.center, 1.0, Norm::Linf, 100000, 9);
  BoundPropagator engine(fixtures::toy_network(), spec);
  const int targets[] = {1};
  EXPECT_GE(w.achieved_margin, engine.margin_lower_bounds(0, targets)[0]);
  EXPECT_LE(w.distortion, 1.0 + 1e-12);
}

TEST(Oracle, AttackOnConstantClassifier) {
  const Network net = fixtures::constant_network({2, 3}, 2);
  PointCloud c;
  c.points = RowMatrix::Random(2, 3);
  const auto w = oracle::sample_attack(net, c, 0.5, Norm::L1, 200, 2);
  EXPECT_DOUBLE_EQ(w.achieved_margin, 1.0);
}

TEST(Oracle, AttackIsReproducible) {
  const auto fc = fixtures::random_case(21, true);
  const auto a = oracle::sample_attack(fc.net, fc.cloud, 0.1, Norm::L2, 500, 4);
  const auto b = oracle::sample_attack(fc.net, fc.cloud, 0.1, Norm::L2, 500, 4);
  EXPECT_EQ(a.sample_index, b.sample_index);
  EXPECT_EQ(a.achieved_margin, b.achieved_margin);
}

TEST(Oracle, SamplesStayInBall) {
  std::mt19937_64 rng(1);
  PointCloud c;
  c.points = RowMatrix::Random(4, 3);
  for (Norm p : {Norm::L1, Norm::L2, Norm::Linf})
    for (int k = 0; k < 1000; ++k)
      EXPECT_LE(oracle::distortion(c, oracle::sample_in_ball(c, 0.25, p, rng), p), 0.25 + 1e-12);
}

TEST(Oracle, PlaneChecks) {
  EXPECT_LE(oracle::plane_check(relax_mul(0, 2, -1, 3.5), 0, 2, -1, 3.5, 33), 1e-9);
  EXPECT_LE(oracle::plane_check(relax_relu(-1, 3), -1, 3, 101), 1e-12);
  EXPECT_EQ(oracle::plane_check(relax_mul(2, 2, -3, -3), 2, 2, -3, -3, 4), 0.0);
  // A deliberately wrong plane is detected.
  MulPlanes bad = relax_mul(0, 1, 0, 1);
  bad.cU -= 0.5;
  EXPECT_GT(oracle::plane_check(bad, 0, 1, 0, 1, 5), 0.4);
}
