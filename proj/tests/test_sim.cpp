#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "modup/model.hpp"
#include "modup/ode.hpp"
#include "modup/rng.hpp"

#include <cmath>

using namespace modup;

namespace {

SystemModel scalar_system(double a, double bu) {
  SystemModel s;
  s.a = a * Mat::Ones(1, 1);
  s.b_u = bu * Mat::Ones(1, 1);
  s.s_g = Mat::Zero(1, 0);
  s.v_g = Mat::Zero(0, 1);
  s.s_eta = Mat::Zero(1, 0);
  s.v_eta = Mat::Zero(0, 1);
  s.b_omega = Mat::Zero(1, 0);
  s.c = Mat::Ones(1, 1);
  s.d_nu = Mat::Ones(1, 1);
  return s;
}

Signal zero_signal(int dim) {
  return [dim](double) { return Vec::Zero(dim); };
}

}  // namespace

TEST_CASE("rk4 single step on xdot = -x") {
  auto rhs = [](const Vec& x, const Vec&) -> Vec { return -x; };
  Trajectory tr = integrate(rhs, Vec::Ones(1), zero_signal(0), 0.1, 0.1);
  REQUIRE(tr.size() == 2);
  CHECK(tr.states[1](0) == doctest::Approx(0.904837418035959573).epsilon(1e-6));
}

TEST_CASE("rk4 constant field and exact polynomial integration") {
  auto rhs0 = [](const Vec& x, const Vec&) -> Vec { return Vec::Zero(x.size()); };
  Trajectory c = integrate(rhs0, 3.5 * Vec::Ones(1), zero_signal(0), 1.0, 0.01);
  for (const auto& x : c.states) CHECK(x(0) == 3.5);

  auto rhs1 = [](const Vec&, const Vec& u) -> Vec { return u; };
  Signal ones = [](double) { return Vec::Ones(1); };
  Trajectory tr = integrate(rhs1, 0.25 * Vec::Ones(1), ones, 1.0, 0.05);
  CHECK(tr.states.back()(0) == doctest::Approx(1.25).epsilon(1e-9));
}

TEST_CASE("rk4 order: halving dt shrinks the error at least 14x") {
  auto rhs = [](const Vec& x, const Vec&) -> Vec { return -x; };
  auto final_err = [&](double dt) {
    Trajectory tr = integrate(rhs, Vec::Ones(1), zero_signal(0), 1.0, dt);
    return std::abs(tr.states.back()(0) - std::exp(-1.0));
  };
  double e1 = final_err(0.1);
  double e2 = final_err(0.05);
  CHECK(e1 / e2 >= 14.0);
}

TEST_CASE("rk4 divergence guard") {
  auto rhs = [](const Vec& x, const Vec&) -> Vec { return x.array().square().matrix() + Vec::Ones(1); };
  CHECK_THROWS_AS(integrate(rhs, 10.0 * Vec::Ones(1), zero_signal(0), 10.0, 0.01),
                  NumericalError);
}

TEST_CASE("multisine: forced single term and determinism") {
  MultisineSpec spec;
  spec.count_lo = spec.count_hi = 1;
  spec.amp_lo = spec.amp_hi = 0.05;
  spec.phase_lo = spec.phase_hi = 0.0;
  spec.seed = 11;
  MultisineSignal sig = generate_multisine(spec);
  REQUIRE(sig.amp.size() == 1);
  CHECK(sig.norm_coeff == doctest::Approx(1.0));
  double w = sig.freq[0];
  for (double t : {0.3, 1.7, 9.1}) {
    CHECK(sig(t)(0) == doctest::Approx(0.05 * std::sin(w * t)).epsilon(1e-12));
    CHECK(sig(t)(1) == 0.0);
  }

  MultisineSignal again = generate_multisine(spec);
  for (double t : {0.1, 5.0, 19.9}) CHECK(sig(t)(0) == again(t)(0));
}

TEST_CASE("multisine amplitude bound over many draws") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    MultisineSpec spec;
    spec.seed = seed;
    MultisineSignal sig = generate_multisine(spec);
    double peak = 0.0;
    for (double t = 0.0; t <= 20.0; t += 0.01) peak = std::max(peak, std::abs(sig.scalar(t)));
    CHECK(peak <= 0.1 + 1e-12);
  }
}

TEST_CASE("output_error reference values and pseudometric properties") {
  Trajectory a, b;
  for (int k = 0; k < 5; ++k) {
    a.times.push_back(0.1 * k);
    b.times.push_back(0.1 * k);
    a.outputs.push_back(Vec::Ones(2));
    b.outputs.push_back(Vec::Ones(2));
  }
  CHECK(output_error(a, b) == 0.0);

  for (auto& y : b.outputs) y = y + Vec::Constant(2, 3.0 / 5.0);  // offset e
  double e_norm = Vec::Constant(2, 3.0 / 5.0).norm();
  CHECK(output_error(a, b) == doctest::Approx(5.0 * e_norm).epsilon(1e-12));

  std::vector<Vec> ys, ym;
  double pi = 3.14159265358979323846;
  for (double t : {0.0, pi / 2.0, pi}) {
    ys.push_back(Vec::Constant(1, std::sin(t)));
    ym.push_back(Vec::Zero(1));
  }
  CHECK(output_error(ys, ym) == doctest::Approx(1.0).epsilon(1e-12));

  // symmetry + triangle inequality on random triples
  RandomStream rs(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> u, v, w;
    for (int k = 0; k < 7; ++k) {
      u.push_back(Vec::Constant(3, rs.normal()));
      v.push_back(Vec::Constant(3, rs.normal()));
      w.push_back(Vec::Constant(3, rs.normal()));
    }
    CHECK(output_error(u, v) == doctest::Approx(output_error(v, u)));
    CHECK(output_error(u, w) <= output_error(u, v) + output_error(v, w) + 1e-12);
  }

  Trajectory c = a;
  c.times.back() += 0.05;
  CHECK_THROWS_AS(output_error(a, c), DimensionError);
}

TEST_CASE("system rhs: zero equilibrium and scalar case") {
  SystemModel s = scalar_system(-1.0, 1.0);
  s.validate();
  CHECK(eval_system_rhs(s, Vec::Zero(1), Vec::Zero(1), Vec::Zero(0))(0) == 0.0);
  // A=-1, B_u=1, x=2, u=3 -> -2 + 3 = 1
  CHECK(eval_system_rhs(s, 2.0 * Vec::Ones(1), 3.0 * Vec::Ones(1), Vec::Zero(0))(0) ==
        doctest::Approx(1.0));
}

TEST_CASE("extended rhs: zero parameters reduce to the known part") {
  SystemModel s = scalar_system(-0.5, 2.0);
  s.s_eta = Mat::Ones(1, 1);
  s.v_eta = Mat::Ones(1, 1);
  s.eta_true = [](const Vec& sx, const Vec&) -> Vec { return 0.0 * sx; };
  BasisLibrary basis = BasisLibrary::from_tags({"cubic"}, 1);
  UncertaintyModel zero = UncertaintyModel::zero(s, basis, Mat::Identity(1, 1));
  RandomStream rs(3);
  for (int i = 0; i < 50; ++i) {
    Vec x = Vec::Constant(1, rs.normal());
    Vec u = Vec::Constant(1, rs.normal());
    Vec lhs = eval_extended_rhs(s, zero, x, u);
    Vec rhs = eval_system_rhs(s, x, u, Vec::Zero(0));
    CHECK(lhs(0) == rhs(0));
  }
  CHECK(eval_extended_rhs(s, zero, Vec::Zero(1), Vec::Zero(1))(0) == 0.0);
}

TEST_CASE("extended rhs: scalar linear correction") {
  SystemModel s = scalar_system(1.0, 0.0);
  s.s_eta = Mat::Ones(1, 1);
  s.v_eta = Mat::Ones(1, 1);
  UncertaintyModel um = UncertaintyModel::zero(s, BasisLibrary::empty(1), Mat::Identity(1, 1));
  um.theta_l(0, 0) = -2.0;
  CHECK(eval_extended_rhs(s, um, Vec::Ones(1), Vec::Zero(1))(0) == doctest::Approx(-1.0));
}

TEST_CASE("basis library blocks vanish at the origin") {
  BasisLibrary b = BasisLibrary::from_tags({"quad", "expm1", "cubic"}, 2);
  CHECK(b.n_h() == 6);
  CHECK(b.eval(Vec::Zero(2), Vec::Zero(1)).norm() == 0.0);
  Vec s(2);
  s << 0.5, -0.25;
  Vec h = b.eval(s, Vec::Zero(1));
  CHECK(h(0) == doctest::Approx(0.25));
  CHECK(h(2) == doctest::Approx(std::exp(0.5) - 1.0));
  CHECK(h(5) == doctest::Approx(-0.015625));
  CHECK_THROWS_AS(BasisLibrary::from_tags({"sin"}, 2), ConfigError);
}

TEST_CASE("basis lipschitz declaration validated by sampling") {
  // cubic on |s| <= 1: state slope sup |3 s^2| = 3
  BasisLibrary b = BasisLibrary::from_tags({"cubic"}, 1);
  Ellipsoid xs(SymMatrix::identity(1));
  Ellipsoid us(SymMatrix::identity(1));
  RandomStream rs(17);
  double l_hx = 3.0;
  for (int i = 0; i < 10000; ++i) {
    Vec x1 = sample_inside(xs, rs), x2 = sample_inside(xs, rs);
    Vec u1 = sample_inside(us, rs), u2 = sample_inside(us, rs);
    double lhs = (b.eval(x1, u1) - b.eval(x2, u2)).norm();
    CHECK(lhs <= l_hx * (x1 - x2).norm() + 0.0 * (u1 - u2).norm() + 1e-12);
  }
}

TEST_CASE("estimate_lipschitz on identity, cubic, and zero maps") {
  Ellipsoid xs(SymMatrix::identity(1));
  Ellipsoid us(SymMatrix::identity(1));

  auto ident = [](const Vec& s, const Vec&) -> Vec { return s; };
  auto lp = estimate_lipschitz(ident, Mat::Identity(1, 1), xs, us, 4000);
  CHECK(lp.x == doctest::Approx(1.2).epsilon(0.02));
  CHECK(lp.u == doctest::Approx(0.0));

  auto cubic = [](const Vec& s, const Vec&) -> Vec { return s.array().cube().matrix(); };
  auto lc = estimate_lipschitz(cubic, Mat::Identity(1, 1), xs, us, 20000);
  CHECK(lc.x == doctest::Approx(3.0 * 1.2).epsilon(0.05));

  auto zero = [](const Vec& s, const Vec&) -> Vec { return 0.0 * s; };
  auto lz = estimate_lipschitz(zero, Mat::Identity(1, 1), xs, us, 2000);
  CHECK(lz.x == 0.0);
  CHECK(lz.u == 0.0);

  CHECK_THROWS_AS(estimate_lipschitz(ident, Mat::Identity(1, 1), xs, us, 10), DimensionError);
}
