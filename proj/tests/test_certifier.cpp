#include <gtest/gtest.h>

#include <cmath>

#include "pcv/certifier.hpp"
#include "pcv/errors.hpp"
#include "pcv/oracle.hpp"
#include "pcv/propagation.hpp"
#include "support/random_nets.hpp"

using namespace pcv;

TEST(Certifier, ZeroEpsilonMarginIsLogitGap) {
  for (const auto& fc : fixtures::fuzz_suite(10, 4, 5)) {
    const Eigen::VectorXd y = forward_eval(fc.net, fc.cloud);
    const int c = *fc.cloud.label;
    for (int t = 0; t < static_cast<int>(fc.net.num_classes()); ++t) {
      if (t == c) continue;
      EXPECT_NEAR(margin_lower_bound(fc.net, {fc.cloud, Norm::L2, 0.0}, c, t), y[c] - y[t], 1e-9);
    }
  }
}

TEST(Certifier, ToyMarginAtEpsilonOne) {
  const PerturbationSpec spec{fixtures::toy_cloud(), Norm::Linf, 1.0};
  const double sigma = margin_lower_bound(fixtures::toy_network(), spec, 0, 1);
  EXPECT_LE(sigma, -1.0);
  EXPECT_NEAR(sigma, -4.5, 1e-9);
  const auto w = oracle::sample_attack(fixtures::toy_network(), spec.center, 1.0, Norm::Linf, 100000, 1);
  EXPECT_LE(sigma, w.achieved_margin);

  const Verdict v = certify_at_epsilon(fixtures::toy_network(), spec.center, 1.0, Norm::Linf);
  EXPECT_FALSE(v.verified);
  EXPECT_LE(v.per_target_sigma.at(1), -3.5);
}

TEST(Certifier, IdenticalRowsGiveZeroMargin) {
  const auto fc = fixtures::random_case(31, false);
  std::vector<Layer> layers = fc.net.layers();
  Layer& last = layers.back();
  last.weight.row(1) = last.weight.row(0);
  last.bias[1] = last.bias[0];
  const Network net(fc.net.input_shape(), fc.net.num_classes(), layers);
  EXPECT_EQ(margin_lower_bound(net, {fc.cloud, Norm::Linf, 0.2}, 0, 1), 0.0);
}

TEST(Certifier, MarginNoLooserThanIntervalDifference) {
  for (const auto& fc : fixtures::fuzz_suite(30, 12, 17)) {
    const PerturbationSpec spec{fc.cloud, Norm::Linf, 0.1};
    BoundPropagator engine(fc.net, spec);
    engine.run();
    const ConcreteBounds& out = engine.bounds(fc.net.num_layers());
    const int c = *fc.cloud.label;
    for (int t = 0; t < static_cast<int>(fc.net.num_classes()); ++t) {
      if (t == c) continue;
      const int targets[] = {t};
      const double sigma = engine.margin_lower_bounds(c, targets)[0];
      EXPECT_GE(sigma, out.lower[c] - out.upper[t] - 1e-9) << "seed " << fc.seed;
    }
  }
}

TEST(Certifier, ZeroEpsilonVerifiesWithCleanGaps) {
  const PointCloud cloud = fixtures::toy_cloud();
  const Verdict v = certify_at_epsilon(fixtures::toy_network(), cloud, 0.0, Norm::L2);
  EXPECT_TRUE(v.verified);
  EXPECT_NEAR(v.per_target_sigma.at(1), 2.0, 1e-12);
}

TEST(Certifier, MisclassifiedInputIsContractError) {
  PointCloud cloud = fixtures::toy_cloud();
  cloud.label = 1;
  try {
    certify_at_epsilon(fixtures::toy_network(), cloud, 0.1, Norm::Linf);
    FAIL() << "expected MisclassifiedError";
  } catch (const MisclassifiedError& e) {
    EXPECT_EQ(e.predicted(), 0);
    EXPECT_EQ(e.expected(), 1);
  }
}

TEST(Certifier, InvalidClasses) {
  const PerturbationSpec spec{fixtures::toy_cloud(), Norm::Linf, 0.1};
  EXPECT_THROW(margin_lower_bound(fixtures::toy_network(), spec, 0, 0), ContractError);
  EXPECT_THROW(margin_lower_bound(fixtures::toy_network(), spec, 0, 5), ContractError);
  EXPECT_THROW((MarginQuery{0, {0}}.resolve(2)), ContractError);
}

TEST(Certifier, ConstantClassifierReachesCap) {
  const Network net = fixtures::constant_network({3, 2}, 3);
  PointCloud cloud;
  cloud.points = RowMatrix::Random(3, 2);
  SearchOptions opts;
  opts.eps_init = 0.05;
  const CertificationResult r = certified_radius(net, cloud, Norm::L2, opts);
  EXPECT_DOUBLE_EQ(r.certified_epsilon, 64 * 0.05);
}

TEST(Certifier, ToyRadiusBrackets) {
  const Network net = fixtures::toy_network();
  const PointCloud cloud = fixtures::toy_cloud();
  SearchOptions opts;
  opts.eps_init = 1.0;
  opts.max_iter = 10;
  const CertificationResult r = certified_radius(net, cloud, Norm::Linf, opts);
  const double eps = r.certified_epsilon;
  ASSERT_GT(eps, 0.0);
  EXPECT_TRUE(certify_at_epsilon(net, cloud, eps, Norm::Linf).verified);
  // The final bracket has width eps_init * 2^-max_iter.
  EXPECT_FALSE(certify_at_epsilon(net, cloud, eps + std::ldexp(1.0, -10), Norm::Linf).verified);
  EXPECT_EQ(r.iterations_used, 11u);

  const auto w = oracle::sample_attack(net, cloud, eps, Norm::Linf, 10000, 3);
  EXPECT_GT(w.achieved_margin, 0.0);
  for (const auto& [t, s] : r.per_target_sigma) EXPECT_GT(s, 0.0);
}

TEST(Certifier, TraceIsBracketedAndContainsResult) {
  for (const auto& fc : fixtures::fuzz_suite(20, 8, 41)) {
    const CertificationResult r = certified_radius(fc.net, fc.cloud, Norm::L2);
    double max_ok = 0.0, min_bad = INFINITY;
    bool found = r.certified_epsilon == 0.0;
    for (const auto& s : r.search_trace) {
      if (s.verified) max_ok = std::max(max_ok, s.epsilon);
      else min_bad = std::min(min_bad, s.epsilon);
      if (s.verified && s.epsilon == r.certified_epsilon) found = true;
    }
    EXPECT_TRUE(found);
    EXPECT_LE(max_ok, min_bad);
    EXPECT_EQ(r.certified_epsilon, max_ok);
  }
}

TEST(Certifier, RadiusBelowAttackDistortion) {
  for (const auto& fc : fixtures::fuzz_suite(15, 6, 91)) {
    const CertificationResult r = certified_radius(fc.net, fc.cloud, Norm::Linf);
    const auto w = oracle::sample_attack(fc.net, fc.cloud, r.certified_epsilon, Norm::Linf, 2000, fc.seed);
    EXPECT_GE(w.achieved_margin, 0.0) << "seed " << fc.seed;
  }
}

TEST(Certifier, UntargetedIsMinOverTargets) {
  const auto fc = fixtures::random_case(12, true);
  const Verdict v = certify_at_epsilon(fc.net, fc.cloud, 0.01, Norm::L1);
  CertificationResult r;
  r.per_target_sigma = v.per_target_sigma;
  double m = INFINITY;
  for (const auto& [t, s] : v.per_target_sigma) m = std::min(m, s);
  EXPECT_EQ(r.min_margin(), m);
}
