#include <gtest/gtest.h>

#include <random>

#include "pcv/errors.hpp"
#include "pcv/oracle.hpp"
#include "pcv/propagation.hpp"
#include "pcv/reference.hpp"
#include "support/random_nets.hpp"

using namespace pcv;

namespace {

PerturbationSpec toy_spec(double eps = 1.0) { return {fixtures::toy_cloud(), Norm::Linf, eps}; }

LinearBounds full_identity(std::size_t layer, const Shape& s) { return LinearBounds::identity(layer, s); }

void expect_row(const RowMatrix& m, Eigen::Index r, std::initializer_list<double> want) {
  Eigen::Index c = 0;
  for (double w : want) EXPECT_NEAR(m(r, c++), w, 1e-12) << "row " << r << " col " << c - 1;
}

}  // namespace

TEST(Propagation, ToyFirstLayerForms) {
  const Network net = fixtures::toy_network();
  const LinearBounds lb = backprop_affine(full_identity(1, net.shape(1)), net.layer(1), net.shape(0));
  EXPECT_EQ(lb.ref_layer, 0u);
  expect_row(lb.AL, 0, {1, 1});
  expect_row(lb.AL, 1, {-1, 1});
  EXPECT_TRUE(lb.AL == lb.AU);
  const ConcreteBounds b = concretize(lb, toy_spec());
  EXPECT_EQ(b.lower[0], -1.0);
  EXPECT_EQ(b.upper[0], 3.0);
  EXPECT_EQ(b.lower[1], -3.0);
  EXPECT_EQ(b.upper[1], 1.0);
}

TEST(Propagation, ToyRelaxations) {
  BoundPropagator engine(fixtures::toy_network(), toy_spec());
  engine.run();
  const auto& relu = std::get<std::vector<ScalarRelaxation>>(engine.relaxation(2));
  EXPECT_EQ(relu[0].alpha_lower, 1.0);
  EXPECT_EQ(relu[0].alpha_upper, 0.75);
  EXPECT_EQ(relu[0].beta_upper, 0.75);
  EXPECT_EQ(relu[1].alpha_lower, 0.0);
  EXPECT_EQ(relu[1].alpha_upper, 0.25);
  EXPECT_EQ(relu[1].beta_upper, 0.75);
}

TEST(Propagation, ToyOperandForms) {
  BoundPropagator engine(fixtures::toy_network(), toy_spec());
  engine.run(3);
  const LinearBounds& f = engine.operand_bounds(3);
  const RowMatrix L = f.dense_lower(), U = f.dense_upper();
  expect_row(L, 0, {1, 1});
  EXPECT_NEAR(f.BL[0], 0.0, 1e-12);
  expect_row(U, 0, {0.5, 1});
  EXPECT_NEAR(f.BU[0], 1.5, 1e-12);
  expect_row(L, 1, {0, 0});
  EXPECT_NEAR(f.BL[1], 0.0, 1e-12);
  expect_row(U, 1, {-0.25, 0.25});
  EXPECT_NEAR(f.BU[1], 0.75, 1e-12);
}

TEST(Propagation, ToyMulInputForms) {
  BoundPropagator engine(fixtures::toy_network(), toy_spec());
  engine.run(4);
  const MulInputBounds& m = engine.mul_bounds(4);
  expect_row(m.LambdaL, 0, {-1, 0});
  EXPECT_NEAR(m.ThetaL[0], 0.0, 1e-12);
  expect_row(m.LambdaU, 0, {0, 2});
  EXPECT_NEAR(m.ThetaU[0], 5.0, 1e-12);
  expect_row(m.LambdaL, 1, {0.25, -0.25});
  EXPECT_NEAR(m.ThetaL[1], -0.75, 1e-12);
  expect_row(m.LambdaU, 1, {-0.25, 0.25});
  EXPECT_NEAR(m.ThetaU[1], 0.75, 1e-12);
}

TEST(Propagation, ToyOutputForms) {
  BoundPropagator engine(fixtures::toy_network(), toy_spec());
  engine.run();
  const LinearBounds lb = engine.back_substitute(full_identity(5, engine.network().shape(5)));
  ASSERT_EQ(lb.ref_layer, 0u);
  expect_row(lb.AL, 1, {0.25, -2.25});
  EXPECT_NEAR(lb.BL[1], -5.75, 1e-12);
  expect_row(lb.AU, 1, {0.75, 0.25});
  EXPECT_NEAR(lb.BU[1], 0.75, 1e-12);
  expect_row(lb.AL, 0, {-1, 0});
  expect_row(lb.AU, 0, {0, 2});
  EXPECT_NEAR(lb.BU[0], 5.0, 1e-12);
}

TEST(Propagation, ToyAllBounds) {
  const auto b = compute_all_bounds(fixtures::toy_network(), toy_spec());
  ASSERT_EQ(b.size(), 6u);
  auto check = [&](std::size_t layer, Eigen::Index k, double lo, double hi) {
    EXPECT_NEAR(b[layer].lower[k], lo, 1e-9) << "layer " << layer << " neuron " << k;
    EXPECT_NEAR(b[layer].upper[k], hi, 1e-9) << "layer " << layer << " neuron " << k;
  };
  check(1, 0, -1, 3);
  check(1, 1, -3, 1);
  check(4, 0, -2, 7);
  check(4, 1, -1, 1);
  check(5, 0, -2, 7);
  check(5, 1, -8, 2.5);
}

TEST(Propagation, TwoAffineLayersEqualWeightProduct) {
  const auto fc = fixtures::random_affine_case(11, false);
  const Network& net = fc.net;
  ASSERT_GE(net.num_layers(), 2u);
  const std::size_t top = 2;
  LinearBounds lb = full_identity(top, net.shape(top));
  lb = backprop_affine(lb, net.layer(2), net.shape(1));
  lb = backprop_affine(lb, net.layer(1), net.shape(0));
  const RowMatrix W = affine_view(net.layer(2), net.shape(1)).weight * affine_view(net.layer(1), net.shape(0)).weight;
  EXPECT_LE((lb.dense_lower() - W).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((lb.dense_upper() - W).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Propagation, IdentityLayerLeavesBoundsUnchanged) {
  Layer id;
  id.kind = LayerKind::Identity;
  LinearBounds lb = full_identity(3, {2, 2});
  lb.AL(0, 1) = 4.0;
  const LinearBounds out = backprop_affine(lb, id, {2, 2});
  EXPECT_TRUE(out.AL == lb.AL);
  EXPECT_TRUE(out.BU == lb.BU);
  EXPECT_EQ(out.ref_layer, 2u);
}

TEST(Propagation, IdentityRelaxationLeavesBoundsUnchanged) {
  LinearBounds lb = full_identity(2, {1, 3});
  lb.AL << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  lb.AU = lb.AL;
  const LayerRelaxation r = std::vector<ScalarRelaxation>(3, relax_relu(1.0, 2.0));
  const LinearBounds out = backprop_nonlinear(lb, r, {1, 3});
  EXPECT_TRUE(out.AL == lb.AL);
  EXPECT_TRUE(out.AU == lb.AU);
}

TEST(Propagation, ContractErrors) {
  Layer relu;
  relu.kind = LayerKind::ReLU;
  EXPECT_THROW(backprop_affine(full_identity(1, {1, 2}), relu, {1, 2}), ContractError);
  EXPECT_THROW(concretize(full_identity(1, {2, 1}), toy_spec()), ContractError);
  const LayerRelaxation r = std::vector<ScalarRelaxation>(1);
  EXPECT_THROW(backprop_nonlinear(full_identity(1, {1, 2}), r, {1, 2}), ContractError);
  LinearBounds wrong = full_identity(0, {3, 1});
  EXPECT_THROW(concretize(wrong, toy_spec()), ShapeError);
}

TEST(Propagation, ZeroEpsilonCollapsesToForward) {
  for (const auto& fc : fixtures::fuzz_suite(20, 8, 99)) {
    const auto b = compute_all_bounds(fc.net, {fc.cloud, Norm::L2, 0.0});
    const auto acts = forward_all(fc.net, fc.cloud);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_LE((b[i].lower - acts[i]).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LE((b[i].upper - acts[i]).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Propagation, L2ConcretizationMatchesSampledMaximum) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  LinearBounds lb = full_identity(0, {3, 3});
  lb.AL = RowMatrix::Zero(1, 9);
  for (Eigen::Index j = 0; j < 9; ++j) lb.AL(0, j) = g(rng);
  lb.AU = lb.AL;
  lb.BL = lb.BU = Eigen::VectorXd::Constant(1, 0.5);
  PointCloud c;
  c.points = RowMatrix::Random(3, 3);
  const PerturbationSpec spec{c, Norm::L2, 0.3};
  const ConcreteBounds b = concretize(lb, spec);

  double closed = 0.0;
  for (int x = 0; x < 3; ++x) closed += lb.AL.row(0).segment(3 * x, 3).norm();
  const double center = (lb.AL.row(0) * Eigen::Map<const Eigen::VectorXd>(c.points.data(), 9))(0) + 0.5;
  EXPECT_NEAR(b.upper[0], center + 0.3 * closed, 1e-12);
  EXPECT_NEAR(b.lower[0], center - 0.3 * closed, 1e-12);

  // The form is separable across points, so each point's term is maximized
  // on its own over 10^5 samples of that point's sphere.
  double best = 0.5;
  for (int x = 0; x < 3; ++x) {
    const Eigen::RowVector3d a = lb.AL.row(0).segment(3 * x, 3);
    double top = -1e300;
    for (int s = 0; s < 100000; ++s) {
      Eigen::RowVector3d dir(g(rng), g(rng), g(rng));
      dir.normalize();
      top = std::max(top, a.dot(c.points.row(x) + 0.3 * dir));
    }
    best += top;
  }
  const double slack = b.upper[0] - best;
  EXPECT_GE(slack, 0.0);
  EXPECT_LE(slack, 1e-3 * (b.upper[0] - center));
}

TEST(Propagation, ConstantOperandsGiveExactProduct) {
  LinearBounds a = full_identity(0, {1, 2});
  a.AL.setZero();
  a.AU.setZero();
  a.BL << 2.0, -3.0;
  a.BU = a.BL;
  LinearBounds b = a;
  b.BL << 0.5, 4.0;
  b.BU = b.BL;
  const ConcreteBounds ca{a.BL, a.BU}, cb{b.BL, b.BU};
  const MulInputBounds m = forward_mul_bounds(a, b, ca, cb, {{{0, 0}}, {{1, 1}}});
  EXPECT_TRUE(m.LambdaL.isZero(0.0));
  EXPECT_TRUE(m.LambdaU.isZero(0.0));
  EXPECT_EQ(m.ThetaL[0], 1.0);
  EXPECT_EQ(m.ThetaU[0], 1.0);
  EXPECT_EQ(m.ThetaL[1], -12.0);
  EXPECT_EQ(m.ThetaU[1], -12.0);
}

TEST(Propagation, ComposeIdentityReturnsLambdaTheta) {
  BoundPropagator engine(fixtures::toy_network(), toy_spec());
  engine.run();
  const MulInputBounds& m = engine.mul_bounds(4);
  const LinearBounds out = compose_at_mul(full_identity(4, {2, 1}), m, {2, 1});
  EXPECT_TRUE(out.AL == m.LambdaL);
  EXPECT_TRUE(out.AU == m.LambdaU);
  EXPECT_TRUE(out.BL == m.ThetaL);
  EXPECT_TRUE(out.BU == m.ThetaU);
  EXPECT_THROW(compose_at_mul(full_identity(4, {3, 1}), m, {2, 1}), ContractError);
}

TEST(Propagation, JanetBlockMulBoundsContainSamples) {
  int checked = 0;
  for (std::uint64_t s = 0; checked < 3; ++s) {
    const auto fc = fixtures::random_case(4000 + s, true);
    if (fc.net.input_shape().cols != 2) continue;
    ++checked;
    for (double eps : {0.05, 0.3}) {
      const PerturbationSpec spec{fc.cloud, Norm::Linf, eps};
      BoundPropagator engine(fc.net, spec);
      engine.run();
      std::size_t mul = 0;
      for (std::size_t i = 1; i <= fc.net.num_layers(); ++i)
        if (fc.net.layer(i).kind == LayerKind::Multiplication) mul = i;
      const MulInputBounds& m = engine.mul_bounds(mul);
      std::mt19937_64 rng(s);
      for (int k = 0; k < 10000; ++k) {
        const PointCloud p = oracle::sample_in_ball(fc.cloud, eps, Norm::Linf, rng);
        const Eigen::Map<const Eigen::VectorXd> x(p.points.data(), p.points.size());
        const Eigen::VectorXd v = forward_all(fc.net, p)[mul];
        const Eigen::VectorXd lo = m.LambdaL * x + m.ThetaL, hi = m.LambdaU * x + m.ThetaU;
        ASSERT_TRUE(((lo.array() - 1e-9) <= v.array()).all());
        ASSERT_TRUE((v.array() <= (hi.array() + 1e-9)).all());
      }
    }
  }
}

TEST(Propagation, MatchesDenseReference) {
  for (const auto& fc : fixtures::fuzz_suite(40, 16, 2024)) {
    for (Norm p : {Norm::L1, Norm::L2, Norm::Linf}) {
      const PerturbationSpec spec{fc.cloud, p, 0.1};
      const auto a = compute_all_bounds(fc.net, spec);
      const auto b = reference::all_bounds(fc.net, spec);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = 1.0 + b[i].upper.cwiseAbs().maxCoeff() + b[i].lower.cwiseAbs().maxCoeff();
        EXPECT_LE((a[i].lower - b[i].lower).cwiseAbs().maxCoeff(), 1e-9 * scale) << "seed " << fc.seed;
        EXPECT_LE((a[i].upper - b[i].upper).cwiseAbs().maxCoeff(), 1e-9 * scale) << "seed " << fc.seed;
      }
    }
  }
}

TEST(Propagation, ManyPointConvNetMatchesReference) {
  // Exercises windowed blocks: kernel-2 convolutions over 40 points.
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.5);
  auto mat = [&](Eigen::Index r, Eigen::Index c) {
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  Layer c1;
  c1.kind = LayerKind::Conv1D;
  c1.kernel = 2;
  c1.weight = mat(4, 6);
  c1.bias = mat(4, 1).col(0);
  Layer r;
  r.kind = LayerKind::ReLU;
  Layer c2 = c1;
  c2.weight = mat(3, 8);
  c2.bias = mat(3, 1).col(0);
  Layer pool;
  pool.kind = LayerKind::GlobalMaxPool;
  Layer d;
  d.kind = LayerKind::Dense;
  d.weight = mat(3, 3);
  d.bias = mat(3, 1).col(0);
  const Network net({40, 3}, 3, {c1, r, c2, r, pool, d});
  PointCloud c;
  c.points = mat(40, 3);
  const PerturbationSpec spec{c, Norm::L2, 0.05};
  const auto a = compute_all_bounds(net, spec);
  const auto b = reference::all_bounds(net, spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE((a[i].lower - b[i].lower).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((a[i].upper - b[i].upper).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Propagation, BitwiseIdenticalAcrossThreadCounts) {
  for (const auto& fc : fixtures::fuzz_suite(10, 5, 77)) {
    const PerturbationSpec spec{fc.cloud, Norm::L2, 0.1};
    const auto a = compute_all_bounds(fc.net, spec, {1});
    const auto b = compute_all_bounds(fc.net, spec, {4});
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_TRUE(a[i].lower == b[i].lower);
      EXPECT_TRUE(a[i].upper == b[i].upper);
    }
  }
}

TEST(Propagation, SampledActivationsInsideBounds) {
  for (const auto& fc : fixtures::fuzz_suite(12, 12, 314)) {
    for (double eps : {0.01, 0.1}) {
      const PerturbationSpec spec{fc.cloud, Norm::Linf, eps};
      const auto b = compute_all_bounds(fc.net, spec);
      std::mt19937_64 rng(fc.seed);
      for (int k = 0; k < 1000; ++k) {
        const auto acts = forward_all(fc.net, oracle::sample_in_ball(fc.cloud, eps, Norm::Linf, rng));
        for (std::size_t i = 0; i < acts.size(); ++i) {
          ASSERT_TRUE(((b[i].lower.array() - 1e-9) <= acts[i].array()).all()) << "layer " << i;
          ASSERT_TRUE((acts[i].array() <= (b[i].upper.array() + 1e-9)).all()) << "layer " << i;
        }
      }
    }
  }
}

TEST(Propagation, NonlinearOutputsWithinDirectImage) {
  for (const auto& fc : fixtures::fuzz_suite(30, 15, 99)) {
    const auto b = compute_all_bounds(fc.net, {fc.cloud, Norm::Linf, 1.0});
    for (std::size_t i = 1; i <= fc.net.num_layers(); ++i) {
      const Layer& l = fc.net.layer(i);
      if (l.kind == LayerKind::ReLU) {
        EXPECT_TRUE((b[i].lower.array() >= 0.0).all()) << "layer " << i;
        EXPECT_TRUE((b[i].upper.array() <= b[i - 1].upper.cwiseMax(0.0).array()).all()) << "layer " << i;
      } else if (l.kind == LayerKind::GlobalMaxPool) {
        const Shape& in = fc.net.shape(i - 1);
        for (std::size_t c = 0; c < in.cols; ++c) {
          double hi = -INFINITY;
          for (std::size_t x = 0; x < in.rows; ++x)
            hi = std::max(hi, b[i - 1].upper[static_cast<Eigen::Index>(x * in.cols + c)]);
          EXPECT_LE(b[i].upper[static_cast<Eigen::Index>(c)], hi);
        }
      }
    }
  }
}

TEST(Propagation, ClipToDirectRange) {
  Layer relu;
  relu.kind = LayerKind::ReLU;
  ConcreteBounds in{Eigen::Vector2d(-2.0, 1.0), Eigen::Vector2d(-1.0, 3.0)};
  ConcreteBounds out{Eigen::Vector2d(-0.5, 0.5), Eigen::Vector2d(0.25, 4.0)};
  clip_to_direct_range(relu, {2, 1}, in, out);
  EXPECT_EQ(out.lower, Eigen::Vector2d(0.0, 1.0));
  EXPECT_EQ(out.upper, Eigen::Vector2d(0.0, 3.0));
}
