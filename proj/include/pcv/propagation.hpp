#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "pcv/bounds.hpp"
#include "pcv/network.hpp"
#include "pcv/relaxation.hpp"

namespace pcv {

/// Relaxation of one non-linear layer: per neuron for ReLU, per pooled
/// feature column for GlobalMaxPool.
using LayerRelaxation = std::variant<std::vector<ScalarRelaxation>, std::vector<MaxPoolRelaxation>>;

/// Builds the relaxation of non-linear layer `layer` from the concrete
/// bounds of its input.
LayerRelaxation relax_layer(const Layer& layer, const Shape& input_shape,
                            const ConcreteBounds& input_bounds);

/// Intersects `out` (bounds of non-linear layer `layer`) with the direct
/// image of its input interval: [relu(l), relu(u)] per neuron, or
/// [max l, max u] per pooled column. No-op for other kinds.
void clip_to_direct_range(const Layer& layer, const Shape& input_shape,
                          const ConcreteBounds& input_bounds, ConcreteBounds& out);

// Single backward-substitution steps. Each consumes bounds referencing the
// output of a layer and returns bounds referencing that layer's input.

LinearBounds backprop_affine(const LinearBounds& lb, const Layer& layer, const Shape& input_shape);

LinearBounds backprop_nonlinear(const LinearBounds& lb, const LayerRelaxation& relax,
                                const Shape& input_shape);

/// Interval of each row of `lb` (which must reference the input layer) over
/// the per-point l_p ball: center value -/+ epsilon * sum over points of the
/// dual norm of that point's coefficients.
ConcreteBounds concretize(const LinearBounds& lb, const PerturbationSpec& spec);

/// Bounds of a multiplication layer over the input, from the input-relative
/// bounds and concrete intervals of both operands.
MulInputBounds forward_mul_bounds(const LinearBounds& lhs_input, const LinearBounds& rhs_input,
                                  const ConcreteBounds& lhs_concrete,
                                  const ConcreteBounds& rhs_concrete,
                                  const std::vector<std::vector<ProductTerm>>& terms);

/// Substitutes the multiplication layer's input-relative bounds into `lb`,
/// which must reference that layer, yielding bounds over the input.
LinearBounds compose_at_mul(const LinearBounds& lb, const MulInputBounds& mul,
                            const Shape& input_shape);

struct EngineOptions {
  int threads = 0;  // 0: OpenMP default
};

/// Layer-by-layer bound computation for one network and perturbation.
///
/// Target neurons are processed in fixed blocks (one point row, or up to
/// kRowChunk neurons of a pooled layer); blocks run in parallel and every
/// block's arithmetic is independent of the schedule.
class BoundPropagator {
 public:
  static constexpr std::size_t kRowChunk = 16;

  BoundPropagator(const Network& net, PerturbationSpec spec, EngineOptions opts = {});

  /// Computes bounds of graph indices 1..last (defaults to the output).
  void run(std::optional<std::size_t> last = std::nullopt);

  const Network& network() const { return net_; }
  const PerturbationSpec& spec() const { return spec_; }
  std::size_t computed_through() const { return done_; }

  /// Concrete bounds of graph index i (0 = input box).
  const ConcreteBounds& bounds(std::size_t i) const;
  const std::vector<ConcreteBounds>& all_bounds() const { return bounds_; }
  const MulInputBounds& mul_bounds(std::size_t i) const;
  const LayerRelaxation& relaxation(std::size_t i) const;
  /// Input-relative bounds kept for multiplication operands.
  const LinearBounds& operand_bounds(std::size_t i) const;

  /// Rewrites `lb` over the input. Needs bounds through lb.ref_layer - 1.
  LinearBounds back_substitute(LinearBounds lb) const;

  /// Lower bound of y_c - y_t over the perturbation set, one per target,
  /// from the row e_c - e_t propagated as a single linear form.
  std::vector<double> margin_lower_bounds(int true_class, std::span<const int> targets);

 private:
  void ensure_relaxation(std::size_t i);
  void compute_layer(std::size_t i);
  void compute_mul_layer(std::size_t i);
  int threads() const;

  Network net_;
  PerturbationSpec spec_;
  EngineOptions opts_;
  std::size_t done_ = 0;
  std::vector<ConcreteBounds> bounds_;
  std::vector<std::optional<LayerRelaxation>> relax_;
  std::vector<std::optional<MulInputBounds>> mul_;
  std::vector<std::optional<LinearBounds>> operand_;
};

/// Concrete bounds of every graph index (entry 0 is the input box).
std::vector<ConcreteBounds> compute_all_bounds(const Network& net, const PerturbationSpec& spec,
                                               EngineOptions opts = {});

}  // namespace pcv
