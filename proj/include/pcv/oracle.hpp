#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pcv/bounds.hpp"
#include "pcv/network.hpp"
#include "pcv/relaxation.hpp"

namespace pcv::oracle {

/// Interval bounds of every graph index (entry 0 is the input box).
///
/// The leading run of affine layers is evaluated as one exact linear map of
/// the input and concretized with per-point dual norms; every later layer
/// uses plain interval arithmetic.
std::vector<ConcreteBounds> interval_forward(const Network& net, const PerturbationSpec& spec);

/// A uniformly distributed cloud in the per-point l_p ball around `center`.
/// l2 uses a normalized Gaussian direction times U^(1/d); l1 uses
/// exponential spacings with random signs.
PointCloud sample_in_ball(const PointCloud& center, double eps, Norm norm, std::mt19937_64& rng);

/// Largest per-point l_p norm of `perturbed - center`.
double distortion(const PointCloud& center, const PointCloud& perturbed, Norm norm);

/// min over t != c of logits[c] - logits[t].
double logit_margin(const Eigen::VectorXd& logits, int c);

struct AttackWitness {
  PointCloud perturbed_cloud;
  double achieved_margin = 0.0;
  double distortion = 0.0;
  std::size_t sample_index = 0;  // 0 is the center itself
};

/// Minimum-margin point among the center, `n_samples` ball samples and, for
/// l_inf with at most 12 coordinates, every box corner. Ties keep the
/// earliest candidate. `true_class` defaults to the label, then the
/// predicted class.
AttackWitness sample_attack(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                            std::size_t n_samples, std::uint64_t seed,
                            std::optional<int> true_class = std::nullopt);

// Grid checks: max over the grid of (lower form - f) and (f - upper form).
double plane_check(const ScalarRelaxation& r, double l, double u, std::size_t resolution);
double plane_check(const MulPlanes& p, double lx, double ux, double ly, double uy,
                   std::size_t resolution);
double plane_check(const MaxPoolRelaxation& r, std::span<const double> lowers,
                   std::span<const double> uppers, std::size_t resolution);

}  // namespace pcv::oracle
