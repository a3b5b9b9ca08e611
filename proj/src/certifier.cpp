#include "pcv/certifier.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <string>

#include "pcv/errors.hpp"

namespace pcv {

std::vector<int> MarginQuery::resolve(std::size_t num_classes) const {
  const auto k = static_cast<int>(num_classes);
  if (true_class < 0 || true_class >= k)
    throw ContractError("true class " + std::to_string(true_class) + " out of range");
  std::vector<int> out;
  if (targets.empty()) {
    for (int t = 0; t < k; ++t)
      if (t != true_class) out.push_back(t);
    return out;
  }
  for (int t : targets) {
    if (t < 0 || t >= k) throw ContractError("target class " + std::to_string(t) + " out of range");
    if (t == true_class) throw ContractError("target class equals the true class");
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

double CertificationResult::min_margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& [t, s] : per_target_sigma) m = std::min(m, s);
  return m;
}

double margin_lower_bound(const Network& net, const PerturbationSpec& spec, int c, int t,
                          EngineOptions opts) {
  if (c == t) throw ContractError("margin_lower_bound: c and t must differ");
  BoundPropagator engine(net, spec, opts);
  const int targets[] = {t};
  return engine.margin_lower_bounds(c, targets).front();
}

int checked_true_class(const Network& net, const PointCloud& cloud) {
  const int predicted = predicted_class(forward_eval(net, cloud));
  if (cloud.label && *cloud.label != predicted) throw MisclassifiedError(predicted, *cloud.label);
  return predicted;
}

Verdict certify_at_epsilon(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                           const MarginQuery& query, EngineOptions opts) {
  const int predicted = predicted_class(forward_eval(net, cloud));
  if (predicted != query.true_class) throw MisclassifiedError(predicted, query.true_class);
  const std::vector<int> targets = query.resolve(net.num_classes());

  BoundPropagator engine(net, PerturbationSpec{cloud, norm, eps}, opts);
  const std::vector<double> sigma = engine.margin_lower_bounds(query.true_class, targets);
  Verdict v;
  v.verified = true;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    v.per_target_sigma[targets[j]] = sigma[j];
    if (!(sigma[j] > 0.0)) v.verified = false;
  }
  return v;
}

Verdict certify_at_epsilon(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                           EngineOptions opts) {
  return certify_at_epsilon(net, cloud, eps, norm, MarginQuery{checked_true_class(net, cloud), {}}, opts);
}

CertificationResult certified_radius(const Network& net, const PointCloud& cloud, Norm norm,
                                     const MarginQuery& query, const SearchOptions& opts) {
  if (!(opts.eps_init > 0.0)) throw ContractError("eps_init must be > 0");
  if (opts.max_iter < 1) throw ContractError("max_iter must be >= 1");

  CertificationResult result;
  result.norm = norm;
  result.true_class = query.true_class;

  auto test = [&](double eps) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v = certify_at_epsilon(net, cloud, eps, norm, query, opts.engine);
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    result.search_trace.push_back({eps, v.verified, took.count()});
    ++result.iterations_used;
    if (v.verified && eps >= result.certified_epsilon) {
      result.certified_epsilon = eps;
      result.per_target_sigma = std::move(v.per_target_sigma);
    }
    return v.verified;
  };

  const double cap = opts.cap_factor * opts.eps_init;
  double lo = 0.0;
  double hi = opts.eps_init;
  while (test(hi)) {
    lo = hi;
    if (hi >= cap) return result;
    hi = std::min(2.0 * hi, cap);
  }
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (test(mid)) lo = mid;
    else hi = mid;
  }
  if (result.certified_epsilon == 0.0) {
    // Nothing verified above zero: report the clean margins.
    result.per_target_sigma = certify_at_epsilon(net, cloud, 0.0, norm, query, opts.engine).per_target_sigma;
  }
  return result;
}

CertificationResult certified_radius(const Network& net, const PointCloud& cloud, Norm norm,
                                     const SearchOptions& opts) {
  return certified_radius(net, cloud, norm, MarginQuery{checked_true_class(net, cloud), {}}, opts);
}

}  // namespace pcv
