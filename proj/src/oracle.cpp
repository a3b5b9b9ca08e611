#include "pcv/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcv/errors.hpp"

namespace pcv::oracle {

namespace {

ConcreteBounds concretize_affine(const RowMatrix& A, const Eigen::VectorXd& b, const PerturbationSpec& spec) {
  const auto rows = spec.center.points.rows(), d = spec.center.points.cols();
  const Eigen::Map<const Eigen::VectorXd> x0(spec.center.points.data(), rows * d);
  ConcreteBounds out;
  const Eigen::VectorXd mid = A * x0 + b;
  Eigen::VectorXd rad = Eigen::VectorXd::Zero(A.rows());
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    for (Eigen::Index x = 0; x < rows; ++x) rad[r] += dual_norm(A.row(r).data() + x * d, static_cast<std::size_t>(d), spec.norm);
  out.lower = mid - spec.epsilon * rad;
  out.upper = mid + spec.epsilon * rad;
  return out;
}

}  // namespace

std::vector<ConcreteBounds> interval_forward(const Network& net, const PerturbationSpec& spec) {
  const Shape& in = net.input_shape();
  if (spec.center.points.rows() != static_cast<Eigen::Index>(in.rows) ||
      spec.center.points.cols() != static_cast<Eigen::Index>(in.cols))
    throw ShapeError("interval_forward: center does not match input " + to_string(in));

  const auto n0 = static_cast<Eigen::Index>(in.size());
  std::vector<ConcreteBounds> out(net.num_layers() + 1);
  RowMatrix A = RowMatrix::Identity(n0, n0);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n0);
  out[0] = concretize_affine(A, b, spec);

  bool symbolic = true;
  for (std::size_t i = 1; i <= net.num_layers(); ++i) {
    const Layer& l = net.layer(i);
    const Shape& s = net.shape(i - 1);
    const ConcreteBounds& prev = out[i - 1];
    if (is_affine(l.kind)) {
      const AffineView v = affine_view(l, s);
      if (symbolic) {
        A = (v.weight * A).eval();
        b = (v.weight * b + v.bias).eval();
        out[i] = concretize_affine(A, b, spec);
      } else {
        const Eigen::VectorXd mid = 0.5 * (prev.lower + prev.upper);
        const Eigen::VectorXd rad = 0.5 * (prev.upper - prev.lower);
        const Eigen::VectorXd c = v.weight * mid + v.bias;
        const Eigen::VectorXd r = v.weight.cwiseAbs() * rad;
        out[i].lower = c - r;
        out[i].upper = c + r;
      }
      continue;
    }
    symbolic = false;
    switch (l.kind) {
      case LayerKind::ReLU:
        out[i].lower = prev.lower.cwiseMax(0.0);
        out[i].upper = prev.upper.cwiseMax(0.0);
        break;
      case LayerKind::GlobalMaxPool: {
        const auto cols = static_cast<Eigen::Index>(s.cols);
        out[i].lower = Eigen::VectorXd::Constant(cols, -std::numeric_limits<double>::infinity());
        out[i].upper = out[i].lower;
        for (std::size_t x = 0; x < s.rows; ++x)
          for (Eigen::Index c = 0; c < cols; ++c) {
            const auto k = static_cast<Eigen::Index>(x) * cols + c;
            out[i].lower[c] = std::max(out[i].lower[c], prev.lower[k]);
            out[i].upper[c] = std::max(out[i].upper[c], prev.upper[k]);
          }
        break;
      }
      case LayerKind::Multiplication: {
        const ConcreteBounds& ya = out[l.lhs];
        const ConcreteBounds& yb = out[l.rhs];
        const auto terms = net.product_terms(i);
        const auto n = static_cast<Eigen::Index>(terms.size());
        out[i].lower = Eigen::VectorXd::Zero(n);
        out[i].upper = Eigen::VectorXd::Zero(n);
        for (Eigen::Index o = 0; o < n; ++o)
          for (const ProductTerm& t : terms[static_cast<std::size_t>(o)]) {
            const auto a = static_cast<Eigen::Index>(t.lhs), c = static_cast<Eigen::Index>(t.rhs);
            const double p[] = {ya.lower[a] * yb.lower[c], ya.lower[a] * yb.upper[c],
                                ya.upper[a] * yb.lower[c], ya.upper[a] * yb.upper[c]};
            out[i].lower[o] += *std::min_element(std::begin(p), std::end(p));
            out[i].upper[o] += *std::max_element(std::begin(p), std::end(p));
          }
        break;
      }
      default:
        throw ContractError("interval_forward: unhandled layer kind");
    }
  }
  return out;
}

PointCloud sample_in_ball(const PointCloud& center, double eps, Norm norm, std::mt19937_64& rng) {
  PointCloud out = center;
  const auto d = center.points.cols();
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  for (Eigen::Index x = 0; x < center.points.rows(); ++x) {
    Eigen::VectorXd delta(d);
    switch (norm) {
      case Norm::Linf:
        for (Eigen::Index j = 0; j < d; ++j) delta[j] = eps * (2.0 * uni(rng) - 1.0);
        break;
      case Norm::L2: {
        double len = 0.0;
        do {
          for (Eigen::Index j = 0; j < d; ++j) delta[j] = gauss(rng);
          len = delta.norm();
        } while (len == 0.0);
        const double radius = eps * std::pow(uni(rng), 1.0 / static_cast<double>(d));
        delta *= radius / len;
        break;
      }
      case Norm::L1: {
        double total = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) total += (delta[j] = expo(rng));
        total += expo(rng);
        for (Eigen::Index j = 0; j < d; ++j) delta[j] *= (uni(rng) < 0.5 ? -eps : eps) / total;
        break;
      }
    }
    out.points.row(x) += delta.transpose();
  }
  return out;
}

double distortion(const PointCloud& center, const PointCloud& perturbed, Norm norm) {
  double worst = 0.0;
  for (Eigen::Index x = 0; x < center.points.rows(); ++x) {
    const Eigen::RowVectorXd diff = perturbed.points.row(x) - center.points.row(x);
    double v = 0.0;
    switch (norm) {
      case Norm::L1: v = diff.lpNorm<1>(); break;
      case Norm::L2: v = diff.norm(); break;
      case Norm::Linf: v = diff.lpNorm<Eigen::Infinity>(); break;
    }
    worst = std::max(worst, v);
  }
  return worst;
}

double logit_margin(const Eigen::VectorXd& logits, int c) {
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < logits.size(); ++t)
    if (t != c) m = std::min(m, logits[c] - logits[t]);
  return m;
}

AttackWitness sample_attack(const Network& net, const PointCloud& cloud, double eps, Norm norm,
                            std::size_t n_samples, std::uint64_t seed, std::optional<int> true_class) {
  if (n_samples < 1) throw ContractError("sample_attack: n_samples must be >= 1");
  const int c = true_class ? *true_class : cloud.label ? *cloud.label : predicted_class(forward_eval(net, cloud));

  std::vector<PointCloud> candidates;
  candidates.reserve(n_samples + 1);
  candidates.push_back(cloud);
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n_samples; ++s) candidates.push_back(sample_in_ball(cloud, eps, norm, rng));

  const auto flat = static_cast<std::size_t>(cloud.points.size());
  if (norm == Norm::Linf && flat <= 12 && eps > 0.0) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << flat); ++mask) {
      PointCloud corner = cloud;
      for (std::size_t j = 0; j < flat; ++j) corner.points.data()[j] += (mask >> j & 1) ? eps : -eps;
      candidates.push_back(std::move(corner));
    }
  }

  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
  std::vector<double> margins(candidates.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < n; ++k)
    margins[static_cast<std::size_t>(k)] = logit_margin(forward_eval(net, candidates[static_cast<std::size_t>(k)]), c);

  std::size_t best = 0;
  for (std::size_t k = 1; k < margins.size(); ++k)
    if (margins[k] < margins[best]) best = k;

  AttackWitness w;
  w.perturbed_cloud = candidates[best];
  w.achieved_margin = margins[best];
  w.distortion = distortion(cloud, w.perturbed_cloud, norm);
  w.sample_index = best;
  return w;
}

namespace {

double grid(double lo, double hi, std::size_t k, std::size_t resolution) {
  if (resolution <= 1) return lo;
  return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(resolution - 1);
}

}  // namespace

double plane_check(const ScalarRelaxation& r, double l, double u, std::size_t resolution) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < std::max<std::size_t>(resolution, 1); ++k) {
    const double y = grid(l, u, k, resolution);
    const double f = std::max(y, 0.0);
    worst = std::max({worst, r.alpha_lower * y + r.beta_lower - f, f - (r.alpha_upper * y + r.beta_upper)});
  }
  return worst;
}

double plane_check(const MulPlanes& p, double lx, double ux, double ly, double uy, std::size_t resolution) {
  double worst = -std::numeric_limits<double>::infinity();
  const std::size_t n = std::max<std::size_t>(resolution, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = grid(lx, ux, i, resolution), y = grid(ly, uy, j, resolution);
      const double f = x * y;
      worst = std::max({worst, p.lower_at(x, y) - f, f - p.upper_at(x, y)});
    }
  return worst;
}

double plane_check(const MaxPoolRelaxation& r, std::span<const double> lowers,
                   std::span<const double> uppers, std::size_t resolution) {
  const std::size_t n = lowers.size();
  const std::size_t res = std::max<std::size_t>(resolution, 1);
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> y(n);
  double worst = -std::numeric_limits<double>::infinity();
  while (true) {
    for (std::size_t j = 0; j < n; ++j) y[j] = grid(lowers[j], uppers[j], idx[j], resolution);
    const double f = *std::max_element(y.begin(), y.end());
    const double lo = y[r.lower_index];
    const double hi = r.mode == MaxPoolRelaxation::Mode::Dominant ? y[r.upper_index] : r.upper_constant;
    worst = std::max({worst, lo - f, f - hi});
    std::size_t j = 0;
    while (j < n && ++idx[j] == res) idx[j++] = 0;
    if (j == n) break;
  }
  return worst;
}

}  // namespace pcv::oracle
