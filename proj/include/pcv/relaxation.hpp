#pragma once

#include <cstddef>
#include <span>

namespace pcv {

/// alpha_lower * y + beta_lower <= f(y) <= alpha_upper * y + beta_upper on [l, u].
struct ScalarRelaxation {
  double alpha_lower = 0.0;
  double beta_lower = 0.0;
  double alpha_upper = 0.0;
  double beta_upper = 0.0;
};

ScalarRelaxation relax_relu(double l, double u);

/// Linear bounds for the max over a pooled set of neurons.
///
/// Dominant: one neuron is provably the maximum, so max == that neuron.
/// Fallback: max >= the neuron with the largest lower bound, and
/// max <= the largest upper bound (a constant).
struct MaxPoolRelaxation {
  enum class Mode { Dominant, Fallback };
  Mode mode = Mode::Fallback;
  std::size_t lower_index = 0;
  std::size_t upper_index = 0;  // Dominant only
  double upper_constant = 0.0;  // Fallback only
  double lower = 0.0;           // concrete interval implied by the relaxation
  double upper = 0.0;
};

MaxPoolRelaxation relax_global_max_pool(std::span<const double> lowers,
                                        std::span<const double> uppers);

/// Planes bounding z = x * y on [lx, ux] x [ly, uy]:
///   aL * x + bL * y + cL <= x * y <= aU * x + bU * y + cU
/// with aL = ly, bL = lx, cL = -lx * ly, aU = uy, bU = lx, cU = -lx * uy.
/// Both planes share the y-coefficient lx.
struct MulPlanes {
  double aL = 0.0, bL = 0.0, cL = 0.0;
  double aU = 0.0, bU = 0.0, cU = 0.0;

  double lower_at(double x, double y) const { return aL * x + bL * y + cL; }
  double upper_at(double x, double y) const { return aU * x + bU * y + cU; }
};

MulPlanes relax_mul(double lx, double ux, double ly, double uy);

}  // namespace pcv
