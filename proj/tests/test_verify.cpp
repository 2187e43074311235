#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "modup/verify.hpp"

#include "modup/ode.hpp"

#include <cmath>

#include "test_fixtures.hpp"

using namespace modup;
using namespace modup::testfix;

namespace {

// Solve A'P + PA = -I by stacking (tiny dimensions only).
Mat lyapunov_shape(const Mat& a) {
  const int n = static_cast<int>(a.rows());
  Mat big = Mat::Zero(n * n, n * n);
  Vec rhs = Vec::Zero(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int row = i * n + j;
      rhs(row) = -(i == j ? 1.0 : 0.0);
      for (int k = 0; k < n; ++k) {
        big(row, k * n + j) += a(k, i);  // (A^T P)_{ij} = sum_k a_ki p_kj
        big(row, i * n + k) += a(k, j);  // (P A)_{ij} = sum_k p_ik a_kj
      }
    }
  Vec p = big.fullPivLu().solve(rhs);
  Mat pm(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pm(i, j) = p(i * n + j);
  return 0.5 * (pm + pm.transpose());
}

}  // namespace

TEST_CASE("linear Lyapunov case passes the invariant-set check") {
  SystemModel sys;
  sys.a = Mat(2, 2);
  sys.a << -1.0, 0.5, -0.5, -2.0;
  sys.b_u = Mat::Zero(2, 1);
  sys.s_g = Mat::Zero(2, 0);
  sys.v_g = Mat::Zero(0, 2);
  sys.s_eta = Mat(2, 1);
  sys.s_eta << 1.0, 0.0;
  sys.v_eta = Mat(1, 2);
  sys.v_eta << 0.0, 1.0;
  sys.b_omega = Mat::Zero(2, 0);
  sys.c = Mat::Identity(2, 2);
  sys.d_nu = Mat::Identity(2, 2);

  UncertaintyModel theta = UncertaintyModel::zero(sys, BasisLibrary::empty(1), sys.s_eta);
  Mat pm = lyapunov_shape(sys.a);
  SymMatrix p(pm);
  REQUIRE(min_eig(p) > 0.0);

  // outer set: scaled-down shape so E_inv fits inside it
  Ellipsoid state_set(SymMatrix(0.25 * pm));
  auto sub = check_subset(Ellipsoid(p), state_set);
  REQUIRE(sub.holds);
  Ellipsoid input_set(SymMatrix::identity(1));

  Certificate cert = check_invariant_set(sys, theta, p, /*alpha=*/0.0, /*beta=*/0.0, sub.gamma,
                                         /*lbar_hx=*/0.0, {0.0, 0.0}, {0.0, 0.0}, state_set,
                                         input_set, 1e-7);
  CHECK(cert.pass);
}

TEST_CASE("unstable scalar plant fails the ISS check for any shape") {
  SystemModel sys = scalar_plant(1.0);
  UncertaintyModel theta = UncertaintyModel::zero(sys, BasisLibrary::empty(1), sys.s_eta);
  for (double pv : {0.1, 1.0, 7.5}) {
    Certificate cert = check_iss(sys, theta, SymMatrix(pv * Mat::Ones(1, 1)), 0.0, {0.0, 0.0},
                                 {0.0, 0.0}, 1e-7);
    CHECK_FALSE(cert.pass);
  }
}

TEST_CASE("zero Lipschitz constants collapse the quadratic form to the linear expression") {
  PlanarFixture f = planar_fixture();
  UncertaintyModel theta = UncertaintyModel::zero(f.sys, BasisLibrary::empty(1), f.sys.s_eta);
  theta.theta_l(0, 0) = 0.4;
  Mat pm = lyapunov_shape(f.sys.a);
  Mat delta = stability_quadratic_form(f.sys, theta, pm, 0.0, 0.0, {0.0, 0.0});
  Mat cross = pm * f.sys.s_eta * theta.theta_l * f.sys.v_eta;
  Mat expect = f.sys.a.transpose() * pm + pm * f.sys.a + cross + cross.transpose();
  CHECK((delta - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("learned invariant-set certificates verify against the original conditions") {
  PlanarFixture f = planar_fixture();

  LearnResult cost_mod = learn_cost_mod_local(f.sys, f.ds, f.cfg);
  Certificate c1 =
      verify_learn_result(f.sys, cost_mod, f.cfg.lip_g, f.cfg.lip_h, f.cfg.state_set,
                          f.cfg.input_set);
  INFO(c1.summary());
  CHECK(c1.pass);

  LearnResult con_mod = learn_constraint_mod_local(f.sys, f.ds, f.cfg);
  Certificate c2 = verify_learn_result(f.sys, con_mod, f.cfg.lip_g, f.cfg.lip_h, f.cfg.state_set,
                                       f.cfg.input_set);
  INFO(c2.summary());
  CHECK(c2.pass);

  LearnResult scp = learn_scp(f.sys, f.ds, f.cfg, cost_mod);
  Certificate c3 = verify_learn_result(f.sys, scp, f.cfg.lip_g, f.cfg.lip_h, f.cfg.state_set,
                                       f.cfg.input_set);
  INFO(c3.summary());
  CHECK(c3.pass);
}

TEST_CASE("learned ISS certificates verify against the original conditions") {
  LearnConfig cfg = scalar_cfg();
  SystemModel sys = scalar_plant(-1.0);
  LabeledDataset ds = scalar_linear_data(0.5);

  LearnResult r2 = learn_cost_mod_global(sys, ds, cfg);
  Certificate c2 = verify_learn_result(sys, r2, cfg.lip_g, cfg.lip_h, {}, {});
  INFO(c2.summary());
  CHECK(c2.pass);

  LearnResult r4 = learn_constraint_mod_global(sys, ds, cfg);
  Certificate c4 = verify_learn_result(sys, r4, cfg.lip_g, cfg.lip_h, {}, {});
  INFO(c4.summary());
  CHECK(c4.pass);
}

TEST_CASE("inflating the nonlinear parameters breaks the norm cap") {
  PlanarFixture f = planar_fixture();
  LearnResult r = learn_cost_mod_local(f.sys, f.ds, f.cfg);
  LearnResult tampered = r;
  tampered.model.theta_n *= 10.0 * (1.0 + r.certificate->lbar_hx / f.cfg.lip_h.x);
  Certificate cert = verify_learn_result(f.sys, tampered, f.cfg.lip_g, f.cfg.lip_h,
                                         f.cfg.state_set, f.cfg.input_set);
  CHECK_FALSE(cert.pass);
  bool cap_violated = false;
  for (const auto& c : cert.checks) {
    if (c.name == "theta_n norm" && !c.pass) cap_violated = true;
  }
  CHECK(cap_violated);
}

TEST_CASE("sampled Lyapunov decrease follows from a passing invariance block") {
  PlanarFixture f = planar_fixture();
  LearnResult r = learn_cost_mod_local(f.sys, f.ds, f.cfg);
  Certificate cert = verify_learn_result(f.sys, r, f.cfg.lip_g, f.cfg.lip_h, f.cfg.state_set,
                                         f.cfg.input_set);
  REQUIRE(cert.pass);

  const Mat& pm = cert.p.mat();
  const UncertaintyModel& th = r.model;
  double lbar_hu = derived_lbar_hu(cert.lbar_hx, f.cfg.lip_h);
  Mat delta = stability_quadratic_form(f.sys, th, pm, cert.lbar_hx, lbar_hu, f.cfg.lip_g);
  Mat pb = pm * (f.sys.b_u + th.s_eta_l * th.b_l);

  RandomStream rs(2718);
  Ellipsoid inv{cert.p};
  for (int i = 0; i < 1000; ++i) {
    Vec x = sample_boundary(inv, rs);
    Vec u = sample_inside(f.cfg.input_set, rs);
    double vdot_bound = x.dot(delta * x) + 2.0 * x.dot(pb * u) +
                        (f.cfg.lip_g.u + lbar_hu) * u.squaredNorm();
    CHECK(vdot_bound <= 1e-6);
  }
}

TEST_CASE("ISS simulation: bounded inputs give bounded responses") {
  LearnConfig cfg = scalar_cfg();
  SystemModel sys = scalar_plant(-1.0);
  LabeledDataset ds = scalar_linear_data(0.5);
  LearnResult r = learn_cost_mod_global(sys, ds, cfg);

  ExtendedModel model;
  model.system = sys;
  model.uncertainty = r.model;
  ModelCertificate mc;
  mc.kind = ModelCertificate::Kind::Iss;
  mc.p = r.certificate->p;
  model.certificate = mc;

  IssSimReport rep = iss_bound_simulation(model, 20, 20.0, 1e-3, 515);
  CHECK(rep.pass());
  CHECK(rep.max_norm < 1e6);

  IssSimReport empty = iss_bound_simulation(model, 0, 1.0, 1e-3, 1);
  CHECK(empty.vacuous);

  // zero input: the Lyapunov level decreases monotonically
  auto rhs = [&](const Vec& x, const Vec& u) { return eval_extended_rhs(model, x, u); };
  Signal zero1 = [](double) { return Vec::Zero(1); };
  Trajectory tr = integrate(rhs, Vec::Ones(1), zero1, 10.0, 1e-3);
  const Mat& pm = r.certificate->p.mat();
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& x : tr.states) {
    double level = x.dot(pm * x);
    CHECK(level <= prev + 1e-12);
    prev = level;
  }
}
