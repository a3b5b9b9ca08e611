#include "pcv/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pcv/errors.hpp"

namespace pcv {

namespace {

enum class Side { Lower, Upper };

// Row-level parallelism only when not already inside a parallel block.
bool run_parallel(std::size_t rows) {
#ifdef _OPENMP
  return rows >= 8 && !omp_in_parallel();
#else
  (void)rows;
  return false;
#endif
}

// Keeps the first exception thrown inside a parallel loop for rethrow after it.
class ErrorSlot {
 public:
  template <class F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
#pragma omp critical(pcv_error_slot)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

LinearBounds retarget(const LinearBounds& lb, std::size_t ref, const Shape& shape, std::size_t lo,
                      std::size_t hi) {
  LinearBounds out;
  out.target_layer = lb.target_layer;
  out.ref_layer = ref;
  out.ref_shape = shape;
  out.window_lo = lo;
  out.window_hi = hi;
  const auto rows = lb.AL.rows();
  const auto width = static_cast<Eigen::Index>((hi - lo) * shape.cols);
  out.AL = RowMatrix::Zero(rows, width);
  out.AU = RowMatrix::Zero(rows, width);
  out.BL = lb.BL;
  out.BU = lb.BU;
  return out;
}

// Applies `step(in_row, out_row, bias, side)` to every (row, side) pair.
template <class Step>
void for_each_row(const LinearBounds& in, LinearBounds& out, Step step) {
  const auto rows = static_cast<std::ptrdiff_t>(in.AL.rows());
#pragma omp parallel for schedule(static) if (run_parallel(static_cast<std::size_t>(rows)))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    step(in.AL.row(r).data(), out.AL.row(r).data(), out.BL[r], Side::Lower);
    step(in.AU.row(r).data(), out.AU.row(r).data(), out.BU[r], Side::Upper);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

LayerRelaxation relax_layer(const Layer& layer, const Shape& in, const ConcreteBounds& b) {
  if (b.size() != in.size()) throw ShapeError("relax_layer: input bounds do not match shape");
  if (layer.kind == LayerKind::ReLU) {
    std::vector<ScalarRelaxation> r(in.size());
    for (std::size_t i = 0; i < in.size(); ++i)
      r[i] = relax_relu(b.lower[static_cast<Eigen::Index>(i)], b.upper[static_cast<Eigen::Index>(i)]);
    return r;
  }
  if (layer.kind == LayerKind::GlobalMaxPool) {
    std::vector<MaxPoolRelaxation> r(in.cols);
    std::vector<double> lo(in.rows), hi(in.rows);
    for (std::size_t c = 0; c < in.cols; ++c) {
      for (std::size_t x = 0; x < in.rows; ++x) {
        lo[x] = b.lower[static_cast<Eigen::Index>(x * in.cols + c)];
        hi[x] = b.upper[static_cast<Eigen::Index>(x * in.cols + c)];
      }
      r[c] = relax_global_max_pool(lo, hi);
    }
    return r;
  }
  throw ContractError("relax_layer: " + std::string(to_string(layer.kind)) + " is not relaxed");
}

void clip_to_direct_range(const Layer& layer, const Shape& input_shape,
                          const ConcreteBounds& input_bounds, ConcreteBounds& out) {
  if (layer.kind == LayerKind::ReLU) {
    out.lower = out.lower.cwiseMax(input_bounds.lower.cwiseMax(0.0));
    out.upper = out.upper.cwiseMin(input_bounds.upper.cwiseMax(0.0));
  } else if (layer.kind == LayerKind::GlobalMaxPool) {
    for (std::size_t c = 0; c < input_shape.cols; ++c) {
      double lo = -std::numeric_limits<double>::infinity(), hi = lo;
      for (std::size_t x = 0; x < input_shape.rows; ++x) {
        const auto k = static_cast<Eigen::Index>(x * input_shape.cols + c);
        lo = std::max(lo, input_bounds.lower[k]);
        hi = std::max(hi, input_bounds.upper[k]);
      }
      const auto o = static_cast<Eigen::Index>(c);
      out.lower[o] = std::max(out.lower[o], lo);
      out.upper[o] = std::min(out.upper[o], hi);
    }
  }
}

LinearBounds backprop_affine(const LinearBounds& lb, const Layer& layer, const Shape& in) {
  if (!is_affine(layer.kind))
    throw ContractError("backprop_affine: " + std::string(to_string(layer.kind)) + " is not affine");
  const Shape& out = lb.ref_shape;
  const std::size_t lo = lb.window_lo;
  const std::size_t hi = lb.window_hi;
  const std::size_t ref = lb.ref_layer - 1;

  switch (layer.kind) {
    case LayerKind::Identity: {
      LinearBounds r = lb;
      r.ref_layer = ref;
      r.ref_shape = in;
      return r;
    }
    case LayerKind::Conv1D: {
      if (out.rows != in.rows - layer.kernel + 1 || out.cols != static_cast<std::size_t>(layer.weight.rows()))
        throw ShapeError("backprop_affine(Conv1D): shape mismatch");
      const std::size_t new_hi = std::min(hi + layer.kernel - 1, in.rows);
      LinearBounds r = retarget(lb, ref, in, lo, new_hi);
      const std::size_t cin = in.cols, cout = out.cols, k = layer.kernel;
      for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side) {
        for (std::size_t x = lo; x < hi; ++x)
          for (std::size_t o = 0; o < cout; ++o) {
            const double c = a[(x - lo) * cout + o];
            if (c == 0.0) continue;
            bias += c * layer.bias[static_cast<Eigen::Index>(o)];
            const double* w = layer.weight.row(static_cast<Eigen::Index>(o)).data();
            double* d = dst + (x - lo) * cin;
            for (std::size_t j = 0; j < k * cin; ++j) d[j] += c * w[j];
          }
      });
      return r;
    }
    case LayerKind::Dense: {
      if (out.size() != static_cast<std::size_t>(layer.weight.rows()) ||
          in.size() != static_cast<std::size_t>(layer.weight.cols()))
        throw ShapeError("backprop_affine(Dense): shape mismatch");
      LinearBounds r = retarget(lb, ref, in, 0, in.rows);
      const std::size_t n_in = in.size(), n_out = out.size();
      for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side) {
        for (std::size_t o = 0; o < n_out; ++o) {
          const double c = a[o];
          if (c == 0.0) continue;
          bias += c * layer.bias[static_cast<Eigen::Index>(o)];
          const double* w = layer.weight.row(static_cast<Eigen::Index>(o)).data();
          for (std::size_t j = 0; j < n_in; ++j) dst[j] += c * w[j];
        }
      });
      return r;
    }
    case LayerKind::BatchNorm: {
      if (!(out == in)) throw ShapeError("backprop_affine(BatchNorm): shape mismatch");
      LinearBounds r = retarget(lb, ref, in, lo, hi);
      const std::size_t cols = in.cols;
      Eigen::VectorXd scale(static_cast<Eigen::Index>(cols)), shift(static_cast<Eigen::Index>(cols));
      for (std::size_t c = 0; c < cols; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        scale[ci] = layer.gamma[ci] / std::sqrt(layer.var[ci] + layer.bn_eps);
        shift[ci] = layer.beta[ci] - scale[ci] * layer.mean[ci];
      }
      for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side) {
        for (std::size_t j = 0; j < (hi - lo) * cols; ++j) {
          const auto c = static_cast<Eigen::Index>(j % cols);
          dst[j] = a[j] * scale[c];
          bias += a[j] * shift[c];
        }
      });
      return r;
    }
    case LayerKind::GlobalAvgPool: {
      if (out.rows != 1 || out.cols != in.cols) throw ShapeError("backprop_affine(GlobalAvgPool): shape mismatch");
      LinearBounds r = retarget(lb, ref, in, 0, in.rows);
      const double inv = 1.0 / static_cast<double>(in.rows);
      for_each_row(lb, r, [&](const double* a, double* dst, double&, Side) {
        for (std::size_t x = 0; x < in.rows; ++x)
          for (std::size_t c = 0; c < in.cols; ++c) dst[x * in.cols + c] = a[c] * inv;
      });
      return r;
    }
    case LayerKind::Reshape: {
      if (out.size() != in.size()) throw ShapeError("backprop_affine(Reshape): shape mismatch");
      LinearBounds r = retarget(lb, ref, in, 0, in.rows);
      const std::size_t first = lo * out.cols;
      const std::size_t count = (hi - lo) * out.cols;
      for_each_row(lb, r, [&](const double* a, double* dst, double&, Side) {
        for (std::size_t j = 0; j < count; ++j) dst[layer.index_map[first + j]] = a[j];
      });
      return r;
    }
    default:
      break;
  }
  throw ContractError("backprop_affine: unhandled layer kind");
}

LinearBounds backprop_nonlinear(const LinearBounds& lb, const LayerRelaxation& relax, const Shape& in) {
  if (lb.ref_layer == 0) throw ContractError("backprop_nonlinear: bounds already reference the input");
  const std::size_t ref = lb.ref_layer - 1;

  if (const auto* relu = std::get_if<std::vector<ScalarRelaxation>>(&relax)) {
    if (!(lb.ref_shape == in)) throw ShapeError("backprop_nonlinear(ReLU): shape mismatch");
    if (relu->size() != in.size())
      throw ContractError("backprop_nonlinear: missing relaxation for referenced neurons");
    LinearBounds r = retarget(lb, ref, in, lb.window_lo, lb.window_hi);
    const ScalarRelaxation* rel = relu->data() + lb.window_lo * in.cols;
    const std::size_t width = (lb.window_hi - lb.window_lo) * in.cols;
    for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side side) {
      for (std::size_t j = 0; j < width; ++j) {
        const double c = a[j];
        // Non-negative coefficients take the same-side relaxation.
        const bool use_lower = (c >= 0.0) == (side == Side::Lower);
        const double alpha = use_lower ? rel[j].alpha_lower : rel[j].alpha_upper;
        const double beta = use_lower ? rel[j].beta_lower : rel[j].beta_upper;
        dst[j] = c * alpha;
        bias += c * beta;
      }
    });
    return r;
  }

  const auto& pool = std::get<std::vector<MaxPoolRelaxation>>(relax);
  if (lb.ref_shape.rows != 1 || lb.ref_shape.cols != in.cols)
    throw ShapeError("backprop_nonlinear(GlobalMaxPool): shape mismatch");
  if (pool.size() != in.cols)
    throw ContractError("backprop_nonlinear: missing relaxation for referenced neurons");
  LinearBounds r = retarget(lb, ref, in, 0, in.rows);
  for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side side) {
    for (std::size_t c = 0; c < in.cols; ++c) {
      const double coef = a[c];
      if (coef == 0.0) continue;
      const MaxPoolRelaxation& p = pool[c];
      const bool use_lower = (coef >= 0.0) == (side == Side::Lower);
      if (use_lower) {
        dst[p.lower_index * in.cols + c] += coef;
      } else if (p.mode == MaxPoolRelaxation::Mode::Dominant) {
        dst[p.upper_index * in.cols + c] += coef;
      } else {
        bias += coef * p.upper_constant;
      }
    }
  });
  return r;
}

ConcreteBounds concretize(const LinearBounds& lb, const PerturbationSpec& spec) {
  if (lb.ref_layer != 0) throw ContractError("concretize: bounds do not reference the input");
  const auto& p0 = spec.center.points;
  if (p0.rows() != static_cast<Eigen::Index>(lb.ref_shape.rows) ||
      p0.cols() != static_cast<Eigen::Index>(lb.ref_shape.cols))
    throw ShapeError("concretize: center " + std::to_string(p0.rows()) + "x" +
                     std::to_string(p0.cols()) + " does not match input " + to_string(lb.ref_shape));
  if (!(spec.epsilon >= 0.0)) throw ContractError("concretize: epsilon must be >= 0");

  const std::size_t d = lb.ref_shape.cols;
  const std::size_t lo = lb.window_lo, hi = lb.window_hi;
  const double* center = p0.data() + lo * d;
  const auto rows = static_cast<std::ptrdiff_t>(lb.rows());
  ConcreteBounds out;
  out.lower.resize(rows);
  out.upper.resize(rows);

  auto bound = [&](const double* a, double offset, double sign) {
    double value = offset;
    double radius = 0.0;
    for (std::size_t x = 0; x < hi - lo; ++x) {
      const double* block = a + x * d;
      for (std::size_t j = 0; j < d; ++j) value += block[j] * center[x * d + j];
      radius += dual_norm(block, d, spec.norm);
    }
    return value + sign * spec.epsilon * radius;
  };

#pragma omp parallel for schedule(static) if (run_parallel(static_cast<std::size_t>(rows)))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    out.lower[r] = bound(lb.AL.row(r).data(), lb.BL[r], -1.0);
    out.upper[r] = bound(lb.AU.row(r).data(), lb.BU[r], +1.0);
  }
  return out;
}

MulInputBounds forward_mul_bounds(const LinearBounds& lhs_input, const LinearBounds& rhs_input,
                                  const ConcreteBounds& lhs_concrete,
                                  const ConcreteBounds& rhs_concrete,
                                  const std::vector<std::vector<ProductTerm>>& terms) {
  if (lhs_input.ref_layer != 0 || rhs_input.ref_layer != 0)
    throw ContractError("forward_mul_bounds: operand bounds must reference the input");
  if (lhs_concrete.size() != lhs_input.rows() || rhs_concrete.size() != rhs_input.rows())
    throw ContractError("forward_mul_bounds: operand concrete bounds missing");
  const RowMatrix lhsL = lhs_input.dense_lower(), lhsU = lhs_input.dense_upper();
  const RowMatrix rhsL = rhs_input.dense_lower(), rhsU = rhs_input.dense_upper();
  const auto n_in = lhsL.cols();
  if (rhsL.cols() != n_in) throw ShapeError("forward_mul_bounds: operands over different inputs");

  const auto outputs = static_cast<std::ptrdiff_t>(terms.size());
  MulInputBounds m;
  m.LambdaL = RowMatrix::Zero(outputs, n_in);
  m.LambdaU = RowMatrix::Zero(outputs, n_in);
  m.ThetaL = Eigen::VectorXd::Zero(outputs);
  m.ThetaU = Eigen::VectorXd::Zero(outputs);

  // Adds coef * (operand bound form), choosing the operand side by the sign
  // of coef relative to the side being built.
  for (const auto& out_terms : terms)
    for (const ProductTerm& t : out_terms)
      if (t.lhs >= static_cast<std::size_t>(lhsL.rows()) || t.rhs >= static_cast<std::size_t>(rhsL.rows()))
        throw ContractError("forward_mul_bounds: index map outside operand");

  auto accumulate = [](double coef, bool lower_side, const RowMatrix& opL, const RowMatrix& opU,
                       const Eigen::VectorXd& bL, const Eigen::VectorXd& bU, Eigen::Index idx,
                       double* row, double& theta) {
    if (coef == 0.0) return;
    const bool use_lower = (coef >= 0.0) == lower_side;
    const double* src = use_lower ? opL.row(idx).data() : opU.row(idx).data();
    for (Eigen::Index j = 0; j < opL.cols(); ++j) row[j] += coef * src[j];
    theta += coef * (use_lower ? bL[idx] : bU[idx]);
  };

  ErrorSlot errors;
#pragma omp parallel for schedule(static) if (run_parallel(terms.size()))
  for (std::ptrdiff_t o = 0; o < outputs; ++o) errors.run([&] {
    double* rowL = m.LambdaL.row(o).data();
    double* rowU = m.LambdaU.row(o).data();
    for (const ProductTerm& t : terms[static_cast<std::size_t>(o)]) {
      const auto a = static_cast<Eigen::Index>(t.lhs);
      const auto b = static_cast<Eigen::Index>(t.rhs);
      // x is the rhs operand, y the lhs operand.
      const MulPlanes p = relax_mul(rhs_concrete.lower[b], rhs_concrete.upper[b],
                                    lhs_concrete.lower[a], lhs_concrete.upper[a]);
      accumulate(p.aL, true, rhsL, rhsU, rhs_input.BL, rhs_input.BU, b, rowL, m.ThetaL[o]);
      accumulate(p.bL, true, lhsL, lhsU, lhs_input.BL, lhs_input.BU, a, rowL, m.ThetaL[o]);
      m.ThetaL[o] += p.cL;
      accumulate(p.aU, false, rhsL, rhsU, rhs_input.BL, rhs_input.BU, b, rowU, m.ThetaU[o]);
      accumulate(p.bU, false, lhsL, lhsU, lhs_input.BL, lhs_input.BU, a, rowU, m.ThetaU[o]);
      m.ThetaU[o] += p.cU;
    }
  });
  errors.rethrow();
  return m;
}

LinearBounds compose_at_mul(const LinearBounds& lb, const MulInputBounds& mul, const Shape& input_shape) {
  if (lb.ref_shape.size() != static_cast<std::size_t>(mul.LambdaL.rows()))
    throw ContractError("compose_at_mul: bounds do not reference the multiplication layer");
  if (static_cast<std::size_t>(mul.LambdaL.cols()) != input_shape.size())
    throw ShapeError("compose_at_mul: multiplication bounds do not match input shape");
  LinearBounds r = retarget(lb, 0, input_shape, 0, input_shape.rows);
  const std::size_t first = lb.window_lo * lb.ref_shape.cols;
  const std::size_t width = (lb.window_hi - lb.window_lo) * lb.ref_shape.cols;
  const auto n_in = mul.LambdaL.cols();
  for_each_row(lb, r, [&](const double* a, double* dst, double& bias, Side side) {
    for (std::size_t j = 0; j < width; ++j) {
      const double c = a[j];
      if (c == 0.0) continue;
      const auto k = static_cast<Eigen::Index>(first + j);
      const bool use_lower = (c >= 0.0) == (side == Side::Lower);
      const double* src = use_lower ? mul.LambdaL.row(k).data() : mul.LambdaU.row(k).data();
      for (Eigen::Index i = 0; i < n_in; ++i) dst[i] += c * src[i];
      bias += c * (use_lower ? mul.ThetaL[k] : mul.ThetaU[k]);
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// BoundPropagator

BoundPropagator::BoundPropagator(const Network& net, PerturbationSpec spec, EngineOptions opts)
    : net_(net), spec_(std::move(spec)), opts_(opts) {
  const Shape& in = net_.input_shape();
  if (spec_.center.points.rows() != static_cast<Eigen::Index>(in.rows) ||
      spec_.center.points.cols() != static_cast<Eigen::Index>(in.cols))
    throw ShapeError("perturbation center does not match network input " + to_string(in));
  if (!(spec_.epsilon >= 0.0) || !std::isfinite(spec_.epsilon))
    throw ContractError("epsilon must be finite and >= 0");

  const std::size_t m = net_.num_layers();
  bounds_.resize(m + 1);
  relax_.resize(m + 1);
  mul_.resize(m + 1);
  operand_.resize(m + 1);

  const LinearBounds id = LinearBounds::identity(0, in);
  bounds_[0] = concretize(id, spec_);
  if (net_.is_mul_operand()[0]) operand_[0] = id;
}

int BoundPropagator::threads() const {
#ifdef _OPENMP
  return opts_.threads > 0 ? opts_.threads : omp_get_max_threads();
#else
  return 1;
#endif
}

const ConcreteBounds& BoundPropagator::bounds(std::size_t i) const {
  if (i > done_) throw ContractError("bounds of layer " + std::to_string(i) + " not computed yet");
  return bounds_[i];
}

const MulInputBounds& BoundPropagator::mul_bounds(std::size_t i) const {
  if (i > done_ || !mul_[i]) throw ContractError("no multiplication bounds for layer " + std::to_string(i));
  return *mul_[i];
}

const LayerRelaxation& BoundPropagator::relaxation(std::size_t i) const {
  if (!relax_.at(i)) throw ContractError("no relaxation for layer " + std::to_string(i));
  return *relax_[i];
}

const LinearBounds& BoundPropagator::operand_bounds(std::size_t i) const {
  if (!operand_.at(i)) throw ContractError("layer " + std::to_string(i) + " is not a multiplication operand");
  return *operand_[i];
}

void BoundPropagator::ensure_relaxation(std::size_t i) {
  const Layer& l = net_.layer(i);
  if (relax_[i] || (l.kind != LayerKind::ReLU && l.kind != LayerKind::GlobalMaxPool)) return;
  relax_[i] = relax_layer(l, net_.shape(i - 1), bounds(i - 1));
}

LinearBounds BoundPropagator::back_substitute(LinearBounds lb) const {
  while (lb.ref_layer > 0) {
    const std::size_t r = lb.ref_layer;
    const Layer& l = net_.layer(r);
    const Shape& in = net_.shape(r - 1);
    if (is_affine(l.kind)) {
      lb = backprop_affine(lb, l, in);
    } else if (l.kind == LayerKind::Multiplication) {
      lb = compose_at_mul(lb, mul_bounds(r), net_.input_shape());
    } else {
      lb = backprop_nonlinear(lb, relaxation(r), in);
    }
  }
  return lb;
}

void BoundPropagator::compute_mul_layer(std::size_t i) {
  const Layer& l = net_.layer(i);
  const auto terms = net_.product_terms(i);
  mul_[i] = forward_mul_bounds(operand_bounds(l.lhs), operand_bounds(l.rhs), bounds(l.lhs),
                               bounds(l.rhs), terms);
  const MulInputBounds& m = *mul_[i];
  LinearBounds lb;
  lb.target_layer = i;
  lb.ref_layer = 0;
  lb.ref_shape = net_.input_shape();
  lb.window_lo = 0;
  lb.window_hi = lb.ref_shape.rows;
  lb.AL = m.LambdaL;
  lb.AU = m.LambdaU;
  lb.BL = m.ThetaL;
  lb.BU = m.ThetaU;
  bounds_[i] = concretize(lb, spec_);
  if (net_.is_mul_operand()[i]) operand_[i] = std::move(lb);
}

void BoundPropagator::compute_layer(std::size_t i) {
  const Shape& s = net_.shape(i);
  const std::size_t n = s.size();
  const std::size_t n_in = net_.input_shape().size();
  const bool keep = net_.is_mul_operand()[i];

  // Fixed block partition: one point row per block, or chunks of a single row.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // [first neuron, count)
  if (s.rows > 1) {
    for (std::size_t x = 0; x < s.rows; ++x) blocks.emplace_back(x * s.cols, s.cols);
  } else {
    for (std::size_t f = 0; f < n; f += kRowChunk) blocks.emplace_back(f, std::min(kRowChunk, n - f));
  }

  ConcreteBounds out;
  out.lower.resize(static_cast<Eigen::Index>(n));
  out.upper.resize(static_cast<Eigen::Index>(n));
  LinearBounds stored;
  if (keep) {
    stored.target_layer = i;
    stored.ref_layer = 0;
    stored.ref_shape = net_.input_shape();
    stored.window_lo = 0;
    stored.window_hi = stored.ref_shape.rows;
    stored.AL = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_in));
    stored.AU = stored.AL;
    stored.BL = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    stored.BU = stored.BL;
  }

  const auto nblocks = static_cast<std::ptrdiff_t>(blocks.size());
  ErrorSlot errors;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads())
  for (std::ptrdiff_t b = 0; b < nblocks; ++b) errors.run([&] {
    const auto [first, count] = blocks[static_cast<std::size_t>(b)];
    const std::size_t lo = first / s.cols;
    const std::size_t hi = (first + count - 1) / s.cols + 1;
    LinearBounds lb;
    lb.target_layer = i;
    lb.ref_layer = i;
    lb.ref_shape = s;
    lb.window_lo = lo;
    lb.window_hi = hi;
    lb.AL = RowMatrix::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>((hi - lo) * s.cols));
    for (std::size_t k = 0; k < count; ++k)
      lb.AL(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(first - lo * s.cols + k)) = 1.0;
    lb.AU = lb.AL;
    lb.BL = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count));
    lb.BU = lb.BL;

    lb = back_substitute(std::move(lb));
    const ConcreteBounds cb = concretize(lb, spec_);
    const auto f = static_cast<Eigen::Index>(first);
    const auto c = static_cast<Eigen::Index>(count);
    out.lower.segment(f, c) = cb.lower;
    out.upper.segment(f, c) = cb.upper;
    if (keep) {
      const auto col0 = static_cast<Eigen::Index>(lb.window_lo * lb.ref_shape.cols);
      stored.AL.block(f, col0, c, lb.AL.cols()) = lb.AL;
      stored.AU.block(f, col0, c, lb.AU.cols()) = lb.AU;
      stored.BL.segment(f, c) = lb.BL;
      stored.BU.segment(f, c) = lb.BU;
    }
  });
  errors.rethrow();
  clip_to_direct_range(net_.layer(i), net_.shape(i - 1), bounds_[i - 1], out);
  bounds_[i] = std::move(out);
  if (keep) operand_[i] = std::move(stored);
}

void BoundPropagator::run(std::optional<std::size_t> last) {
  const std::size_t target = last.value_or(net_.num_layers());
  if (target > net_.num_layers()) throw ContractError("run: layer index out of range");
  for (std::size_t i = done_ + 1; i <= target; ++i) {
    ensure_relaxation(i);
    if (net_.layer(i).kind == LayerKind::Multiplication) compute_mul_layer(i);
    else compute_layer(i);
    done_ = i;
  }
}

std::vector<double> BoundPropagator::margin_lower_bounds(int true_class, std::span<const int> targets) {
  const std::size_t m = net_.num_layers();
  const auto k = static_cast<int>(net_.num_classes());
  if (true_class < 0 || true_class >= k) throw ContractError("invalid true class " + std::to_string(true_class));
  for (int t : targets)
    if (t < 0 || t >= k || t == true_class) throw ContractError("invalid target class " + std::to_string(t));

  run(m - 1);
  ensure_relaxation(m);
  if (net_.layer(m).kind == LayerKind::Multiplication) run(m);

  const Shape& s = net_.shape(m);
  const auto nt = static_cast<std::ptrdiff_t>(targets.size());
  std::vector<double> result(targets.size());
  ErrorSlot errors;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads())
  for (std::ptrdiff_t j = 0; j < nt; ++j) errors.run([&] {
    LinearBounds lb;
    lb.target_layer = m + 1;  // virtual margin layer
    lb.ref_layer = m;
    lb.ref_shape = s;
    lb.window_lo = 0;
    lb.window_hi = s.rows;
    lb.AL = RowMatrix::Zero(1, static_cast<Eigen::Index>(s.size()));
    lb.AL(0, true_class) += 1.0;
    lb.AL(0, targets[static_cast<std::size_t>(j)]) -= 1.0;
    lb.AU = lb.AL;
    lb.BL = Eigen::VectorXd::Zero(1);
    lb.BU = lb.BL;
    lb = back_substitute(std::move(lb));
    result[static_cast<std::size_t>(j)] = concretize(lb, spec_).lower[0];
  });
  errors.rethrow();
  return result;
}

std::vector<ConcreteBounds> compute_all_bounds(const Network& net, const PerturbationSpec& spec,
                                               EngineOptions opts) {
  BoundPropagator engine(net, spec, opts);
  engine.run();
  return engine.all_bounds();
}

}  // namespace pcv
