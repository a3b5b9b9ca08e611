#pragma once

#include <map>
#include <vector>

#include "pcv/bounds.hpp"
#include "pcv/network.hpp"
#include "pcv/propagation.hpp"

namespace pcv {

struct MarginQuery {
  int true_class = 0;
  std::vector<int> targets;  // empty: every class other than true_class

  /// Validated targets for a network with `num_classes` outputs.
  std::vector<int> resolve(std::size_t num_classes) const;
};

struct SearchStep {
  double epsilon = 0.0;
  bool verified = false;
  double seconds = 0.0;
};

struct CertificationResult {
  double certified_epsilon = 0.0;
  std::map<int, double> per_target_sigma;  // at certified_epsilon
  std::vector<SearchStep> search_trace;
  Norm norm = Norm::Linf;
  int true_class = 0;
  std::size_t iterations_used = 0;

  double min_margin() const;
};

struct Verdict {
  bool verified = false;
  std::map<int, double> per_target_sigma;
};

struct SearchOptions {
  double eps_init = 0.05;
  std::size_t max_iter = 10;
  double cap_factor = 64.0;  // doubling stops at cap_factor * eps_init
  EngineOptions engine;
};

/// Lower bound of y_c - y_t over the perturbation set.
double margin_lower_bound(const Network& net, const PerturbationSpec& spec, int c, int t,
                          EngineOptions opts = {});

/// The true class: the cloud's label if present, else the predicted class.
/// Throws MisclassifiedError when the label disagrees with the prediction.
int checked_true_class(const Network& net, const PointCloud& cloud);

Verdict certify_at_epsilon(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                           const MarginQuery& query, EngineOptions opts = {});
Verdict certify_at_epsilon(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                           EngineOptions opts = {});

CertificationResult certified_radius(const Network& net, const PointCloud& cloud, Norm norm,
                                     const MarginQuery& query, const SearchOptions& opts = {});
CertificationResult certified_radius(const Network& net, const PointCloud& cloud, Norm norm,
                                     const SearchOptions& opts = {});

}  // namespace pcv
