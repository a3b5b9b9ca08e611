#include "pcv/reference.hpp"

#include <optional>

#include "pcv/propagation.hpp"
#include "pcv/relaxation.hpp"

namespace pcv::reference {

namespace {

struct Form {
  RowMatrix AL, AU;
  Eigen::VectorXd BL, BU;
};

class Solver {
 public:
  Solver(const Network& net, const PerturbationSpec& spec) : net_(net), spec_(spec) {
    const std::size_t m = net.num_layers();
    bounds_.resize(m + 1);
    relu_.resize(m + 1);
    pool_.resize(m + 1);
    lambda_.resize(m + 1);
    input_form_.resize(m + 1);
    const auto n0 = static_cast<Eigen::Index>(net.input_shape().size());
    Form id{RowMatrix::Identity(n0, n0), RowMatrix::Identity(n0, n0), Eigen::VectorXd::Zero(n0),
            Eigen::VectorXd::Zero(n0)};
    bounds_[0] = concretize(id);
    input_form_[0] = id;
  }

  void run_through(std::size_t last) {
    for (; done_ < last; ++done_) compute(done_ + 1);
  }

  const std::vector<ConcreteBounds>& bounds() const { return bounds_; }

  double margin(int c, int t) {
    const std::size_t m = net_.num_layers();
    const auto n = static_cast<Eigen::Index>(net_.shape(m).size());
    Form f{RowMatrix::Zero(1, n), RowMatrix::Zero(1, n), Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
    f.AL(0, c) += 1.0;
    f.AL(0, t) -= 1.0;
    f.AU = f.AL;
    prepare(m);
    return concretize(substitute(std::move(f), m)).lower[0];
  }

 private:
  void prepare(std::size_t i) {
    const Layer& l = net_.layer(i);
    const ConcreteBounds& b = bounds_[i - 1];
    const Shape& in = net_.shape(i - 1);
    if (l.kind == LayerKind::ReLU && relu_[i].empty()) {
      for (Eigen::Index k = 0; k < b.lower.size(); ++k) relu_[i].push_back(relax_relu(b.lower[k], b.upper[k]));
    } else if (l.kind == LayerKind::GlobalMaxPool && pool_[i].empty()) {
      for (std::size_t c = 0; c < in.cols; ++c) {
        std::vector<double> lo, hi;
        for (std::size_t x = 0; x < in.rows; ++x) {
          lo.push_back(b.lower[static_cast<Eigen::Index>(x * in.cols + c)]);
          hi.push_back(b.upper[static_cast<Eigen::Index>(x * in.cols + c)]);
        }
        pool_[i].push_back(relax_global_max_pool(lo, hi));
      }
    }
  }

  void compute(std::size_t i) {
    prepare(i);
    const Layer& l = net_.layer(i);
    if (l.kind == LayerKind::Multiplication) {
      mul(i);
      return;
    }
    const auto n = static_cast<Eigen::Index>(net_.shape(i).size());
    Form f{RowMatrix::Identity(n, n), RowMatrix::Identity(n, n), Eigen::VectorXd::Zero(n),
           Eigen::VectorXd::Zero(n)};
    Form g = substitute(std::move(f), i);
    bounds_[i] = concretize(g);
    clip_to_direct_range(l, net_.shape(i - 1), bounds_[i - 1], bounds_[i]);
    input_form_[i] = std::move(g);
  }

  void mul(std::size_t i) {
    const Layer& l = net_.layer(i);
    const Form& y = *input_form_[l.lhs];
    const Form& x = *input_form_[l.rhs];
    const ConcreteBounds& by = bounds_[l.lhs];
    const ConcreteBounds& bx = bounds_[l.rhs];
    const auto terms = net_.product_terms(i);
    const auto n0 = static_cast<Eigen::Index>(net_.input_shape().size());
    const auto n = static_cast<Eigen::Index>(terms.size());
    Form out{RowMatrix::Zero(n, n0), RowMatrix::Zero(n, n0), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (Eigen::Index o = 0; o < n; ++o) {
      for (const ProductTerm& t : terms[static_cast<std::size_t>(o)]) {
        const auto a = static_cast<Eigen::Index>(t.lhs);
        const auto b = static_cast<Eigen::Index>(t.rhs);
        const MulPlanes p = relax_mul(bx.lower[b], bx.upper[b], by.lower[a], by.upper[a]);
        // lower: aL * x + bL * y + cL
        out.AL.row(o) += p.aL >= 0 ? (p.aL * x.AL.row(b)).eval() : (p.aL * x.AU.row(b)).eval();
        out.BL[o] += p.aL >= 0 ? p.aL * x.BL[b] : p.aL * x.BU[b];
        out.AL.row(o) += p.bL >= 0 ? (p.bL * y.AL.row(a)).eval() : (p.bL * y.AU.row(a)).eval();
        out.BL[o] += p.bL >= 0 ? p.bL * y.BL[a] : p.bL * y.BU[a];
        out.BL[o] += p.cL;
        // upper: aU * x + bU * y + cU
        out.AU.row(o) += p.aU >= 0 ? (p.aU * x.AU.row(b)).eval() : (p.aU * x.AL.row(b)).eval();
        out.BU[o] += p.aU >= 0 ? p.aU * x.BU[b] : p.aU * x.BL[b];
        out.AU.row(o) += p.bU >= 0 ? (p.bU * y.AU.row(a)).eval() : (p.bU * y.AL.row(a)).eval();
        out.BU[o] += p.bU >= 0 ? p.bU * y.BU[a] : p.bU * y.BL[a];
        out.BU[o] += p.cU;
      }
    }
    bounds_[i] = concretize(out);
    lambda_[i] = out;
    input_form_[i] = std::move(out);
  }

  // Rewrites a form over graph index `ref` as a form over the input.
  Form substitute(Form f, std::size_t ref) const {
    while (ref > 0) {
      const Layer& l = net_.layer(ref);
      const Shape& in = net_.shape(ref - 1);
      if (is_affine(l.kind)) {
        const AffineView v = affine_view(l, in);
        f.BL += f.AL * v.bias;
        f.BU += f.AU * v.bias;
        f.AL = (f.AL * v.weight).eval();
        f.AU = (f.AU * v.weight).eval();
        --ref;
        continue;
      }
      if (l.kind == LayerKind::Multiplication) {
        const Form& m = *lambda_[ref];
        const RowMatrix posL = f.AL.cwiseMax(0.0), negL = f.AL.cwiseMin(0.0);
        const RowMatrix posU = f.AU.cwiseMax(0.0), negU = f.AU.cwiseMin(0.0);
        f.BL += posL * m.BL + negL * m.BU;
        f.BU += posU * m.BU + negU * m.BL;
        f.AL = posL * m.AL + negL * m.AU;
        f.AU = posU * m.AU + negU * m.AL;
        ref = 0;
        continue;
      }
      // Relaxed layer as two diagonal-or-selection maps plus offsets.
      const auto n_out = static_cast<Eigen::Index>(net_.shape(ref).size());
      const auto n_in = static_cast<Eigen::Index>(in.size());
      RowMatrix WL = RowMatrix::Zero(n_out, n_in), WU = RowMatrix::Zero(n_out, n_in);
      Eigen::VectorXd bL = Eigen::VectorXd::Zero(n_out), bU = Eigen::VectorXd::Zero(n_out);
      if (l.kind == LayerKind::ReLU) {
        for (Eigen::Index k = 0; k < n_out; ++k) {
          const ScalarRelaxation& r = relu_[ref][static_cast<std::size_t>(k)];
          WL(k, k) = r.alpha_lower;
          bL[k] = r.beta_lower;
          WU(k, k) = r.alpha_upper;
          bU[k] = r.beta_upper;
        }
      } else {
        for (Eigen::Index c = 0; c < n_out; ++c) {
          const MaxPoolRelaxation& r = pool_[ref][static_cast<std::size_t>(c)];
          WL(c, static_cast<Eigen::Index>(r.lower_index * in.cols) + c) = 1.0;
          if (r.mode == MaxPoolRelaxation::Mode::Dominant)
            WU(c, static_cast<Eigen::Index>(r.upper_index * in.cols) + c) = 1.0;
          else
            bU[c] = r.upper_constant;
        }
      }
      const RowMatrix posL = f.AL.cwiseMax(0.0), negL = f.AL.cwiseMin(0.0);
      const RowMatrix posU = f.AU.cwiseMax(0.0), negU = f.AU.cwiseMin(0.0);
      f.BL += posL * bL + negL * bU;
      f.BU += posU * bU + negU * bL;
      f.AL = posL * WL + negL * WU;
      f.AU = posU * WU + negU * WL;
      --ref;
    }
    return f;
  }

  ConcreteBounds concretize(const Form& f) const {
    const Shape& s = net_.input_shape();
    const auto rows = static_cast<Eigen::Index>(s.rows), d = static_cast<Eigen::Index>(s.cols);
    const Eigen::Map<const Eigen::VectorXd> x0(spec_.center.points.data(), rows * d);
    ConcreteBounds out;
    out.lower = f.AL * x0 + f.BL;
    out.upper = f.AU * x0 + f.BU;
    for (Eigen::Index r = 0; r < f.AL.rows(); ++r) {
      double radL = 0.0, radU = 0.0;
      for (Eigen::Index x = 0; x < rows; ++x) {
        const auto bl = f.AL.row(r).segment(x * d, d);
        const auto bu = f.AU.row(r).segment(x * d, d);
        switch (spec_.norm) {
          case Norm::Linf: radL += bl.lpNorm<1>(); radU += bu.lpNorm<1>(); break;
          case Norm::L2: radL += bl.norm(); radU += bu.norm(); break;
          case Norm::L1: radL += bl.lpNorm<Eigen::Infinity>(); radU += bu.lpNorm<Eigen::Infinity>(); break;
        }
      }
      out.lower[r] -= spec_.epsilon * radL;
      out.upper[r] += spec_.epsilon * radU;
    }
    return out;
  }

  const Network& net_;
  const PerturbationSpec& spec_;
  std::size_t done_ = 0;
  std::vector<ConcreteBounds> bounds_;
  std::vector<std::vector<ScalarRelaxation>> relu_;
  std::vector<std::vector<MaxPoolRelaxation>> pool_;
  std::vector<std::optional<Form>> lambda_;
  std::vector<std::optional<Form>> input_form_;
};

}  // namespace

std::vector<ConcreteBounds> all_bounds(const Network& net, const PerturbationSpec& spec) {
  Solver s(net, spec);
  s.run_through(net.num_layers());
  return s.bounds();
}

std::vector<double> margin_lower_bounds(const Network& net, const PerturbationSpec& spec,
                                        int true_class, std::span<const int> targets) {
  Solver s(net, spec);
  s.run_through(net.num_layers() - 1);
  if (net.layer(net.num_layers()).kind == LayerKind::Multiplication) s.run_through(net.num_layers());
  std::vector<double> out;
  for (int t : targets) out.push_back(s.margin(true_class, t));
  return out;
}

}  // namespace pcv::reference
