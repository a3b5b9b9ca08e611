#include "pcv/relaxation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcv/errors.hpp"

namespace pcv {

namespace {

constexpr double kDegenerateWidth = 1e-12;

void check_interval(double l, double u, const char* what) {
  if (!std::isfinite(l) || !std::isfinite(u))
    throw ContractError(std::string(what) + ": non-finite bound");
  if (l > u)
    throw ContractError(std::string(what) + ": reversed interval [" + std::to_string(l) + ", " +
                        std::to_string(u) + "]");
}

}  // namespace

ScalarRelaxation relax_relu(double l, double u) {
  check_interval(l, u, "relax_relu");
  if (u <= 0.0) return {0.0, 0.0, 0.0, 0.0};
  if (l >= 0.0) return {1.0, 0.0, 1.0, 0.0};

  // l < 0 < u from here on.
  const double scale = std::max({std::abs(l), std::abs(u), 1.0});
  if (u - l <= kDegenerateWidth * scale) return {0.0, 0.0, 0.0, u};

  ScalarRelaxation r;
  r.alpha_upper = u / (u - l);
  r.beta_upper = -u * l / (u - l);
  r.beta_lower = 0.0;
  r.alpha_lower = u > -l ? 1.0 : 0.0;  // tie goes to zero
  return r;
}

MaxPoolRelaxation relax_global_max_pool(std::span<const double> lowers,
                                        std::span<const double> uppers) {
  if (lowers.empty()) throw ContractError("relax_global_max_pool: empty pooled set");
  if (lowers.size() != uppers.size())
    throw ContractError("relax_global_max_pool: lower/upper length mismatch");
  for (std::size_t i = 0; i < lowers.size(); ++i) check_interval(lowers[i], uppers[i], "relax_global_max_pool");

  const std::size_t n = lowers.size();
  std::size_t best_lower = 0;
  std::size_t best_upper = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (lowers[i] > lowers[best_lower]) best_lower = i;
    if (uppers[i] > uppers[best_upper]) best_upper = i;
  }

  // Only a neuron attaining the largest lower bound can dominate; test each
  // such candidate against the largest upper bound of the remaining neurons.
  std::size_t second_upper = n;
  for (std::size_t i = 0; i < n; ++i)
    if (i != best_upper && (second_upper == n || uppers[i] > uppers[second_upper])) second_upper = i;

  MaxPoolRelaxation r;
  r.lower_index = best_lower;
  std::size_t dominant = n;
  for (std::size_t j = 0; j < n && dominant == n; ++j) {
    if (lowers[j] != lowers[best_lower]) continue;
    const std::size_t rival = j == best_upper ? second_upper : best_upper;
    if (rival == n || lowers[j] >= uppers[rival]) dominant = j;
  }
  if (dominant != n) {
    r.mode = MaxPoolRelaxation::Mode::Dominant;
    r.lower_index = dominant;
    r.upper_index = dominant;
    r.lower = lowers[dominant];
    r.upper = uppers[dominant];
  } else {
    r.mode = MaxPoolRelaxation::Mode::Fallback;
    r.upper_constant = uppers[best_upper];
    r.lower = lowers[best_lower];
    r.upper = uppers[best_upper];
  }
  return r;
}

MulPlanes relax_mul(double lx, double ux, double ly, double uy) {
  check_interval(lx, ux, "relax_mul(x)");
  check_interval(ly, uy, "relax_mul(y)");
  MulPlanes p;
  p.aL = ly;
  p.bL = lx;
  p.cL = -lx * ly;
  p.aU = uy;
  p.bU = lx;
  p.cU = -lx * uy;
  return p;
}

}  // namespace pcv
