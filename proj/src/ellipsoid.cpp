#include "modup/ellipsoid.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <set>

#include "modup/lmi.hpp"
#include "modup/model.hpp"
#include "modup/ode.hpp"

namespace modup {

namespace {

// Orthonormal basis of the span of the points (columns), via the Gram matrix.
Mat span_basis(const std::vector<Vec>& points, int dim) {
  Mat gram = Mat::Zero(dim, dim);
  for (const auto& p : points) gram += p * p.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  double cut = std::max(1e-12 * lmax, 1e-300);
  std::vector<int> keep;
  for (int i = 0; i < dim; ++i)
    if (es.eigenvalues()(i) > cut) keep.push_back(i);
  Mat b(dim, static_cast<int>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) b.col(static_cast<int>(k)) = es.eigenvectors().col(keep[k]);
  return b;
}

// Keep only hull candidates: maximizers of random directions. The bounding
// ellipsoid depends only on extreme points, so this preserves the solution.
std::vector<Vec> support_subset(const std::vector<Vec>& pts, int cap, std::uint64_t seed) {
  if (static_cast<int>(pts.size()) <= cap) return pts;
  const int d = static_cast<int>(pts.front().size());
  RandomStream rs(seed);
  std::set<std::size_t> chosen;
  auto probe = [&](const Vec& dir) {
    double best = -1e300;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double v = dir.dot(pts[i]);
      if (v > best) {
        best = v;
        arg = i;
      }
    }
    chosen.insert(arg);
  };
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    probe(e);
    probe(-e);
  }
  while (static_cast<int>(chosen.size()) < cap) {
    Vec dir(d);
    for (int i = 0; i < d; ++i) dir(i) = rs.normal();
    probe(dir);
    if (chosen.size() >= pts.size()) break;
  }
  std::vector<Vec> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(pts[i]);
  return out;
}

}  // namespace

Ellipsoid fit_bounding(const std::vector<Vec>& points, const FitOptions& opts) {
  require(!points.empty(), "fit_bounding: need at least one point");
  require(opts.inflation >= 1.0, "fit_bounding: inflation must be >= 1");
  const int d = static_cast<int>(points.front().size());
  for (const auto& p : points) {
    require(p.size() == d, "fit_bounding: inconsistent point dimensions");
    if (!p.allFinite()) throw NumericalError("fit_bounding: non-finite point");
  }

  Mat basis = span_basis(points, d);
  const int r = static_cast<int>(basis.cols());
  Mat complement_fill = Mat::Zero(d, d);
  if (opts.floor_radius > 0.0 && r < d) {
    // Bound unspanned directions by the configured radius.
    Mat proj = Mat::Identity(d, d) - basis * basis.transpose();
    complement_fill = proj / (opts.floor_radius * opts.floor_radius);
  }
  if (r == 0) {
    double rad = opts.floor_radius > 0.0 ? opts.floor_radius : opts.fallback_radius;
    return Ellipsoid(SymMatrix(Mat::Identity(d, d) / (rad * rad)), false);
  }

  std::vector<Vec> reduced;
  reduced.reserve(points.size());
  for (const auto& p : points) reduced.push_back(basis.transpose() * p);
  reduced = support_subset(reduced, opts.max_support_points, opts.seed);

  const double bound = 1.0 / (opts.inflation * opts.inflation);
  Mat shape_r;
  bool solved = false;
  {
    lmi::Problem prob;
    auto f = prob.sym_var("F", r);
    int idx = 0;
    for (const auto& q : reduced) {
      Mat row = q.transpose();
      prob.constrain(lmi::Expr::constant(bound * Mat::Ones(1, 1)) -
                         lmi::Expr::term(f, row, row.transpose()),
                     lmi::Sense::Psd, "pt" + std::to_string(idx++));
    }
    prob.maximize_logdet(f);
    auto sol = prob.solve({.tol = opts.tol});
    if (sol.feasible()) {
      shape_r = sol.value("F");
      solved = true;
    }
  }
  if (!solved) {
    // Scaled-covariance fallback: covariance metric grown until every point
    // satisfies the bound.
    Mat cov = Mat::Zero(r, r);
    for (const auto& q : reduced) cov += q * q.transpose();
    cov /= static_cast<double>(reduced.size());
    cov += 1e-12 * cov.trace() / r * Mat::Identity(r, r);
    Mat icov = cov.inverse();
    double worst = 0.0;
    for (const auto& q : reduced) worst = std::max(worst, q.dot(icov * q));
    shape_r = icov * (bound / std::max(worst, 1e-300));
  }

  Mat shape = basis * shape_r * basis.transpose() + complement_fill;
  bool degenerate = (r < d) && opts.floor_radius <= 0.0;
  return Ellipsoid(SymMatrix(shape), degenerate);
}

bool contains(const Ellipsoid& e, const Vec& v, double tol) {
  require(v.size() == e.dim(), "contains: dimension mismatch");
  return v.dot(e.shape().mat() * v) <= 1.0 + tol;
}

SubsetReport check_subset(const Ellipsoid& inner_p, const Ellipsoid& outer_f) {
  require(inner_p.dim() == outer_f.dim(), "check_subset: dimension mismatch");
  const Mat& p = inner_p.shape().mat();
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success || min_eig(inner_p.shape()) <= 0.0) {
    throw NumericalError("check_subset: inner shape must be positive definite");
  }
  // gamma F <= P  iff  gamma <= 1 / lambda_max(L^{-1} F L^{-T}), P = L L^T.
  Mat l = llt.matrixL();
  Mat a = l.triangularView<Eigen::Lower>().solve(outer_f.shape().mat());
  Mat b = l.triangularView<Eigen::Lower>().solve(a.transpose());
  double lam = max_eig(SymMatrix(0.5 * (b + b.transpose())));
  SubsetReport rep;
  if (lam <= 0.0) {
    rep.holds = true;
    rep.gamma = 1e18;
    return rep;
  }
  rep.gamma = 1.0 / lam;
  rep.holds = rep.gamma >= 1.0 - 1e-9;
  return rep;
}

Vec sample_inside(const Ellipsoid& e, RandomStream& rs) {
  const int d = e.dim();
  Eigen::SelfAdjointEigenSolver<Mat> es(e.shape().mat());
  double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  double cut = std::max(1e-12 * lmax, 1e-300);
  // Ball point, then map through shape^{-1/2} on the bounded span.
  Vec z(d);
  for (int i = 0; i < d; ++i) z(i) = rs.normal();
  int bounded = 0;
  for (int i = 0; i < d; ++i)
    if (es.eigenvalues()(i) > cut) ++bounded;
  if (bounded == 0) return Vec::Zero(d);
  double radius = std::pow(rs.uniform(), 1.0 / bounded);
  double zn = 0.0;
  for (int i = 0; i < d; ++i)
    if (es.eigenvalues()(i) > cut) zn += z(i) * z(i);
  zn = std::sqrt(std::max(zn, 1e-300));
  Vec x = Vec::Zero(d);
  for (int i = 0; i < d; ++i) {
    if (es.eigenvalues()(i) > cut) {
      x += es.eigenvectors().col(i) * (radius * z(i) / zn / std::sqrt(es.eigenvalues()(i)));
    }
  }
  return x;
}

Vec sample_boundary(const Ellipsoid& e, RandomStream& rs) {
  Vec x = sample_inside(e, rs);
  double level = x.dot(e.shape().mat() * x);
  if (level <= 1e-300) return x;
  return x / std::sqrt(level);
}

InvarianceReport empirical_invariance(const ExtendedModel& model, const Ellipsoid& input_set,
                                      int trials, double t_f, double dt, std::uint64_t seed) {
  require(model.certificate.has_value(), "empirical_invariance: certificate required");
  InvarianceReport rep;
  rep.trials = trials;
  if (trials <= 0) {
    rep.vacuous = true;
    return rep;
  }
  const SymMatrix& p = model.certificate->p;
  Ellipsoid inv(p);
  const Mat& pm = p.mat();
  const Mat& u_shape = input_set.shape().mat();
  const int l = model.system.l();
  require(input_set.dim() == l, "empirical_invariance: input set dimension");

  std::vector<double> levels(trials, 0.0);
  std::vector<int> bad(trials, 0);
  parallel_for(trials, [&](int trial) {
    RandomStream rs = RandomStream::substream(seed, "invariance-" + std::to_string(trial));
    Vec x0 = sample_inside(inv, rs);

    // Admissible input: per-channel multisines scaled so u^T U u <= 1 on the
    // whole grid (channels the set leaves unbounded keep their natural size).
    MultisineSpec mspec;
    mspec.t_f = t_f;
    mspec.channels = 1;
    std::vector<MultisineSignal> chans;
    for (int ch = 0; ch < l; ++ch) {
      mspec.seed = rs.next_u64();
      chans.push_back(generate_multisine(mspec));
    }
    auto raw_u = [&](double t) {
      Vec u(l);
      for (int ch = 0; ch < l; ++ch) u(ch) = chans[ch].scalar(t);
      return u;
    };
    double worst = 0.0;
    for (double t = 0.0; t <= t_f; t += std::max(dt, t_f / 2000.0)) {
      Vec u = raw_u(t);
      worst = std::max(worst, u.dot(u_shape * u));
    }
    double scale = worst > 1.0 ? 0.999 / std::sqrt(worst) : 1.0;
    Signal u_adm = [raw_u, scale, l](double t) -> Vec { return scale * raw_u(t); };

    double level_max = 0.0;
    try {
      auto rhs = [&](const Vec& x, const Vec& u) { return eval_extended_rhs(model, x, u); };
      Trajectory tr = integrate(rhs, x0, u_adm, t_f, dt);
      for (const auto& x : tr.states) level_max = std::max(level_max, x.dot(pm * x));
    } catch (const NumericalError&) {
      bad[trial] = 1;
      level_max = std::numeric_limits<double>::infinity();
    }
    levels[trial] = level_max;
  });
  for (int i = 0; i < trials; ++i) {
    rep.violations += bad[i];
    rep.max_level = std::max(rep.max_level, levels[i]);
  }
  return rep;
}

}  // namespace modup
