#pragma once

#include <span>
#include <vector>

#include "pcv/bounds.hpp"
#include "pcv/network.hpp"

namespace pcv::reference {

// Serial dense implementation of the bound computation. Every layer is
// applied through its dense affine view and every form spans the whole
// reference layer. Slow; used to cross-check the blocked engine.

std::vector<ConcreteBounds> all_bounds(const Network& net, const PerturbationSpec& spec);

std::vector<double> margin_lower_bounds(const Network& net, const PerturbationSpec& spec,
                                        int true_class, std::span<const int> targets);

}  // namespace pcv::reference
