#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "modup/ellipsoid.hpp"
#include "modup/model.hpp"
#include "modup/rng.hpp"

#include <cmath>

using namespace modup;

TEST_CASE("fit_bounding: cross-polytope vertices give the unit disk") {
  std::vector<Vec> pts;
  for (int i = 0; i < 2; ++i) {
    Vec e = Vec::Zero(2);
    e(i) = 1.0;
    pts.push_back(e);
    pts.push_back(-e);
  }
  FitOptions o;
  o.inflation = 1.0;
  Ellipsoid e = fit_bounding(pts, o);
  CHECK((e.shape().mat() - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 2e-4);
  CHECK_FALSE(e.degenerate());
  for (const auto& p : pts) CHECK(contains(e, p));
}

TEST_CASE("fit_bounding: single zero point falls back to the configured ball") {
  FitOptions o;
  o.fallback_radius = 2.0;
  Ellipsoid e = fit_bounding({Vec::Zero(3)}, o);
  CHECK((e.shape().mat() - 0.25 * Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit_bounding: collinear points yield a degenerate shape") {
  std::vector<Vec> pts;
  for (double s : {-1.0, -0.25, 0.5, 1.0}) {
    Vec p(2);
    p << s, 2.0 * s;
    pts.push_back(p);
  }
  Ellipsoid e = fit_bounding(pts);
  CHECK(e.degenerate());
  CHECK(min_eig(e.shape()) < 1e-10);
  for (const auto& p : pts) CHECK(contains(e, p));

  FitOptions floored;
  floored.floor_radius = 0.5;
  Ellipsoid ef = fit_bounding(pts, floored);
  CHECK_FALSE(ef.degenerate());
  Vec ortho(2);
  ortho << 2.0 / std::sqrt(5.0), -1.0 / std::sqrt(5.0);
  CHECK(ortho.dot(ef.shape().mat() * ortho) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("fit_bounding: every point contained, inflation monotone") {
  RandomStream rs(21);
  std::vector<Vec> pts;
  for (int i = 0; i < 300; ++i) {
    Vec p(3);
    for (int j = 0; j < 3; ++j) p(j) = rs.normal();
    p(0) *= 3.0;
    pts.push_back(p);
  }
  for (double infl : {1.0, 1.05, 1.3}) {
    FitOptions o;
    o.inflation = infl;
    Ellipsoid e = fit_bounding(pts, o);
    for (const auto& p : pts) {
      double level = p.dot(e.shape().mat() * p);
      CHECK(level <= 1.0 / (infl * infl) + 1e-7);
    }
  }
}

TEST_CASE("fit_bounding: scaling equivariance") {
  RandomStream rs(31);
  std::vector<Vec> pts, scaled;
  const double c = 7.5;
  for (int i = 0; i < 60; ++i) {
    Vec p(2);
    p << rs.normal(), 0.3 * rs.normal() + 0.1 * rs.normal();
    pts.push_back(p);
    scaled.push_back(c * p);
  }
  FitOptions o;
  o.tol = 1e-10;
  Ellipsoid e1 = fit_bounding(pts, o);
  Ellipsoid e2 = fit_bounding(scaled, o);
  Mat expected = e1.shape().mat() / (c * c);
  CHECK((e2.shape().mat() - expected).cwiseAbs().maxCoeff() <
        1e-6 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("contains reference cases") {
  Ellipsoid e(SymMatrix::identity(2));
  CHECK(contains(e, Vec::Zero(2)));
  Vec e1 = Vec::Zero(2);
  e1(0) = 1.0;
  CHECK(contains(e, e1));          // boundary
  CHECK_FALSE(contains(e, 2.0 * e1));
}

TEST_CASE("check_subset reference cases") {
  Ellipsoid unit(SymMatrix::identity(2));
  auto r1 = check_subset(unit, unit);
  CHECK(r1.holds);
  CHECK(r1.gamma == doctest::Approx(1.0));

  Ellipsoid p4(SymMatrix(4.0 * Mat::Identity(2, 2)));
  auto r2 = check_subset(p4, unit);
  CHECK(r2.holds);
  CHECK(r2.gamma == doctest::Approx(4.0));

  Ellipsoid pq(SymMatrix(0.25 * Mat::Identity(2, 2)));
  auto r3 = check_subset(pq, unit);
  CHECK_FALSE(r3.holds);
}

TEST_CASE("check_subset implies sampled containment") {
  RandomStream rs(41);
  Mat a(3, 3);
  for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = rs.normal();
  Mat pm = a * a.transpose() + 2.0 * Mat::Identity(3, 3);
  Mat fm = 0.2 * Mat::Identity(3, 3);
  Ellipsoid inner{SymMatrix(pm)}, outer{SymMatrix(fm)};
  auto rep = check_subset(inner, outer);
  if (rep.holds) {
    for (int i = 0; i < 10000; ++i) {
      Vec x = sample_boundary(inner, rs);
      CHECK(x.dot(fm * x) <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("empirical invariance: linear stable model stays in its own level set") {
  SystemModel s;
  s.a = Mat::Zero(2, 2);
  s.a << -1.0, 0.5, -0.5, -1.0;
  s.b_u = Mat::Zero(2, 1);
  s.s_g = Mat::Zero(2, 0);
  s.v_g = Mat::Zero(0, 2);
  s.s_eta = Mat::Zero(2, 0);
  s.v_eta = Mat::Zero(0, 2);
  s.b_omega = Mat::Zero(2, 0);
  s.c = Mat::Identity(2, 2);
  s.d_nu = Mat::Identity(2, 2);

  // Lyapunov shape for the autonomous part: A^T P + P A < 0 holds for P = I
  // since A + A^T = -2 I.
  ExtendedModel em;
  em.system = s;
  em.uncertainty = UncertaintyModel::zero(s, BasisLibrary::empty(0), Mat::Zero(2, 0));
  ModelCertificate cert;
  cert.kind = ModelCertificate::Kind::InvariantSet;
  cert.p = SymMatrix::identity(2);
  em.certificate = cert;

  Ellipsoid u_set(SymMatrix(Mat::Zero(1, 1)));  // u = 0 only channel, unbounded set unused
  InvarianceReport rep = empirical_invariance(em, u_set, 50, 10.0, 0.01, 77);
  CHECK(rep.trials == 50);
  CHECK(rep.violations == 0);
  CHECK(rep.max_level <= 1.0 + 1e-6);

  InvarianceReport empty = empirical_invariance(em, u_set, 0, 1.0, 0.01, 1);
  CHECK(empty.vacuous);
}
