#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "pcv/network.hpp"

namespace pcv {

enum class Norm { L1, L2, Linf };

std::string to_string(Norm p);
Norm parse_norm(std::string_view text);

/// Every point of the cloud independently within an l_p ball of radius epsilon.
struct PerturbationSpec {
  PointCloud center;
  Norm norm = Norm::Linf;
  double epsilon = 0.0;
};

/// Dual norm of one point's coefficient block: q with 1/p + 1/q = 1.
double dual_norm(const double* coeffs, std::size_t n, Norm p);

/// Per-neuron scalar interval of one layer.
struct ConcreteBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  std::size_t size() const { return static_cast<std::size_t>(lower.size()); }
};

/// Linear bounds on rows of a target layer in terms of the neurons of a
/// reference layer:
///   AL * phi_ref + BL <= phi_target <= AU * phi_ref + BU.
///
/// Coefficients are stored only for reference rows [window_lo, window_hi);
/// columns of AL/AU index (ref_row - window_lo) * ref_shape.cols + ref_col.
/// Coefficients of reference rows outside the window are zero.
struct LinearBounds {
  std::size_t target_layer = 0;
  std::size_t ref_layer = 0;
  Shape ref_shape;
  std::size_t window_lo = 0;
  std::size_t window_hi = 0;
  RowMatrix AL, AU;
  Eigen::VectorXd BL, BU;

  std::size_t rows() const { return static_cast<std::size_t>(AL.rows()); }
  bool full_window() const { return window_lo == 0 && window_hi == ref_shape.rows; }

  /// Identity bounds of `layer_index` on itself, for every neuron.
  static LinearBounds identity(std::size_t layer_index, const Shape& shape);

  /// Identity bounds for the neurons of reference rows [lo, hi) only.
  static LinearBounds identity_rows(std::size_t layer_index, const Shape& shape, std::size_t lo,
                                    std::size_t hi);

  /// Coefficients widened to the full reference layer.
  RowMatrix dense_lower() const;
  RowMatrix dense_upper() const;
};

/// Bounds of a multiplication layer expressed directly over the input.
struct MulInputBounds {
  RowMatrix LambdaL, LambdaU;  // outputs x input neurons
  Eigen::VectorXd ThetaL, ThetaU;
};

}  // namespace pcv
