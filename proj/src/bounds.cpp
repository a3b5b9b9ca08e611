#include "pcv/bounds.hpp"

#include <algorithm>
#include <cmath>

#include "pcv/errors.hpp"

namespace pcv {

std::string to_string(Norm p) {
  switch (p) {
    case Norm::L1: return "1";
    case Norm::L2: return "2";
    case Norm::Linf: return "inf";
  }
  return "?";
}

Norm parse_norm(std::string_view text) {
  if (text == "1" || text == "l1") return Norm::L1;
  if (text == "2" || text == "l2") return Norm::L2;
  if (text == "inf" || text == "linf" || text == "Inf") return Norm::Linf;
  throw FormatError("unknown norm '" + std::string(text) + "' (expected 1, 2 or inf)");
}

double dual_norm(const double* coeffs, std::size_t n, Norm p) {
  switch (p) {
    case Norm::Linf: {  // q = 1
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::abs(coeffs[i]);
      return s;
    }
    case Norm::L2: {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += coeffs[i] * coeffs[i];
      return std::sqrt(s);
    }
    case Norm::L1: {  // q = inf
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(coeffs[i]));
      return m;
    }
  }
  return 0.0;
}

LinearBounds LinearBounds::identity_rows(std::size_t layer_index, const Shape& shape,
                                         std::size_t lo, std::size_t hi) {
  if (lo > hi || hi > shape.rows) throw ContractError("identity_rows: bad row range");
  const auto n = static_cast<Eigen::Index>((hi - lo) * shape.cols);
  LinearBounds lb;
  lb.target_layer = layer_index;
  lb.ref_layer = layer_index;
  lb.ref_shape = shape;
  lb.window_lo = lo;
  lb.window_hi = hi;
  lb.AL = RowMatrix::Identity(n, n);
  lb.AU = lb.AL;
  lb.BL = Eigen::VectorXd::Zero(n);
  lb.BU = lb.BL;
  return lb;
}

LinearBounds LinearBounds::identity(std::size_t layer_index, const Shape& shape) {
  return identity_rows(layer_index, shape, 0, shape.rows);
}

namespace {

RowMatrix widen(const RowMatrix& m, const LinearBounds& lb) {
  if (lb.full_window()) return m;
  RowMatrix out = RowMatrix::Zero(m.rows(), static_cast<Eigen::Index>(lb.ref_shape.size()));
  out.middleCols(static_cast<Eigen::Index>(lb.window_lo * lb.ref_shape.cols), m.cols()) = m;
  return out;
}

}  // namespace

RowMatrix LinearBounds::dense_lower() const { return widen(AL, *this); }
RowMatrix LinearBounds::dense_upper() const { return widen(AU, *this); }

}  // namespace pcv
