#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "modup/estimator.hpp"
#include "modup/rng.hpp"

#include <cmath>

using namespace modup;

namespace {

// Scalar plant with a scalar uncertainty channel and full state measurement.
SystemModel chain_plant() {
  SystemModel s;
  s.a = -1.0 * Mat::Ones(1, 1);
  s.b_u = Mat::Zero(1, 1);
  s.s_g = Mat::Zero(1, 0);
  s.v_g = Mat::Zero(0, 1);
  s.s_eta = Mat::Ones(1, 1);
  s.v_eta = Mat::Ones(1, 1);
  s.b_omega = Mat::Zero(1, 0);
  s.c = Mat::Ones(1, 1);
  s.d_nu = Mat::Ones(1, 1);
  return s;
}

}  // namespace

TEST_CASE("augment: companion structure") {
  SystemModel s = chain_plant();
  s.a = Mat::Zero(1, 1);
  AugmentedSystem a2 = augment(s, 2);
  Mat expect(3, 3);
  expect << 0, 1, 0, 0, 0, 1, 0, 0, 0;
  CHECK((a2.a_a - expect).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a2.n_z() == 3);
  CHECK(a2.d_n() == 1);
  CHECK((a2.c_a - Mat::Identity(1, 3).row(0)).cwiseAbs().maxCoeff() == 0.0);

  AugmentedSystem a1 = augment(s, 1);
  CHECK(a1.d_n() == 0);
  CHECK(a1.n_z() == 2);
  Mat expect1(2, 2);
  expect1 << 0, 1, 0, 0;
  CHECK((a1.a_a - expect1).cwiseAbs().maxCoeff() == 0.0);

  // disturbance channel: eta^(r) enters the last chain stage
  CHECK(a2.b_omega_a.rows() == 3);
  CHECK(a2.b_omega_a.cols() == 1);
  CHECK(a2.b_omega_a(2, 0) == 1.0);
  CHECK(a2.b_omega_a(0, 0) == 0.0);

  CHECK(a2.c_bar1().rows() == 1);
  CHECK(a2.c_bar1()(0, 1) == 1.0);
  CHECK(a2.c_bar2()(0, 0) == 1.0);
}

TEST_CASE("filter algebra identities hold for arbitrary gains") {
  SystemModel s = chain_plant();
  AugmentedSystem aug = augment(s, 2);
  RandomStream rs(5);
  for (int trial = 0; trial < 20; ++trial) {
    Mat e(3, 1), k(3, 1);
    for (int i = 0; i < 3; ++i) {
      e(i, 0) = rs.normal();
      k(i, 0) = rs.normal();
    }
    EstimatorFilter f = make_filter(s, aug, e, k, Mat::Zero(0, 1), 1.0, 1.0, 1.0);
    Mat m_ref = Mat::Identity(3, 3) + e * aug.c_a;
    Mat n_ref = m_ref * aug.a_a - k * aug.c_a;
    Mat g_ref = m_ref * aug.b_ua;
    Mat l_ref = k * (Mat::Identity(1, 1) + aug.c_a * e) - m_ref * aug.a_a * e;
    double scale = std::max(1.0, n_ref.norm());
    CHECK((f.m - m_ref).norm() <= 1e-9 * scale);
    CHECK((f.n - n_ref).norm() <= 1e-9 * scale);
    CHECK((f.g - g_ref).norm() <= 1e-9 * scale);
    CHECK((f.l - l_ref).norm() <= 1e-9 * scale);
  }
}

TEST_CASE("design_filter on the scalar chain: feasible with certified gains") {
  SystemModel s = chain_plant();
  AugmentedSystem aug = augment(s, 2);
  EstimatorConfig cfg;
  cfg.r = 2;
  EstimatorFilter f = design_filter(s, aug, cfg);
  CHECK(std::isfinite(f.l2_gain_bound()));
  CHECK(f.l2_gain_bound() > 0.0);
  CHECK(f.sigma <= cfg.sigma_max * (1.0 + 1e-9));

  GainBoundReport rep = verify_gain_bounds(f, aug, 20, 20.0, 1e-3, 2024);
  CHECK(rep.l2_ratio_max <= rep.l2_bound + 1e-9);
  CHECK(rep.peak_ratio_max <= rep.peak_bound + 1e-9);
  CHECK(rep.pass());
}

TEST_CASE("run_filter: zero data keeps the filter at the origin") {
  SystemModel s = chain_plant();
  AugmentedSystem aug = augment(s, 2);
  EstimatorFilter f = design_filter(s, aug, {.r = 2});
  Signal zero1 = [](double) { return Vec::Zero(1); };
  FilterRun run = run_filter(f, zero1, zero1, Vec::Zero(3), 2.0, 1e-3);
  for (const auto& v : run.eta_hat) CHECK(v.norm() == 0.0);
  for (const auto& v : run.x_hat) CHECK(v.norm() == 0.0);
}

TEST_CASE("run_filter: polynomial uncertainty is recovered exactly in the limit") {
  // eta(t) = u(t) quadratic in t, so the third derivative vanishes and the
  // r = 3 internal model is exact: the estimation error decays to zero.
  SystemModel s = chain_plant();
  s.eta_true = [](const Vec&, const Vec& u) -> Vec { return u; };
  AugmentedSystem aug = augment(s, 3);
  EstimatorFilter f = design_filter(s, aug, {.r = 3});

  Signal u = [](double t) { return Vec::Constant(1, 0.3 + 0.2 * t - 0.01 * t * t); };
  auto rhs = [&](const Vec& x, const Vec& uu) { return eval_system_rhs(s, x, uu, Vec::Zero(0)); };
  IntegrateOptions io;
  Mat cmat = s.c;
  io.output = &cmat;
  Trajectory plant = integrate(rhs, Vec::Zero(1), u, 20.0, 1e-3, io);

  FilterRun run = run_filter(f, plant, Vec::Zero(aug.n_z()));
  double err_tail = 0.0;
  for (std::size_t i = run.times.size() - 200; i < run.times.size(); ++i) {
    Vec eta_true = u(run.times[i]);
    Vec x_true = plant.states[i];
    err_tail = std::max(err_tail, (run.eta_hat[i] - eta_true).norm() +
                                      (run.x_hat[i] - x_true).norm());
  }
  CHECK(err_tail <= 1e-3);
}

TEST_CASE("error dynamics match the joint plant-filter simulation") {
  SystemModel s = chain_plant();
  AugmentedSystem aug = augment(s, 2);
  EstimatorFilter f = design_filter(s, aug, {.r = 2});
  const int nz = aug.n_z();

  // analytic disturbance on the chain tail (plays eta^(r))
  MultisineSpec mspec;
  mspec.seed = 17;
  mspec.channels = 1;
  mspec.t_f = 5.0;
  MultisineSignal wa_sig = generate_multisine(mspec);

  // joint state (x_a; z), input (u; wa)
  Signal joint_in = [&](double t) {
    Vec v(2);
    v(0) = 0.1 * std::sin(2.0 * t);
    v(1) = wa_sig.scalar(t);
    return v;
  };
  auto joint_rhs = [&](const Vec& xz, const Vec& in) -> Vec {
    Vec x_a = xz.head(nz);
    Vec z = xz.tail(nz);
    Vec u = in.head(1);
    Vec wa = in.tail(1);
    Vec y = aug.c_a * x_a;
    Vec dxa = aug.a_a * x_a + aug.b_ua * u + aug.b_omega_a * wa;
    Vec dz = f.n * z + f.g * u + f.l * y;
    Vec out(2 * nz);
    out << dxa, dz;
    return out;
  };
  Vec xz0 = Vec::Zero(2 * nz);  // e(0) = z0 - E y(0) - x_a(0) = 0
  Trajectory joint = integrate(joint_rhs, xz0, joint_in, 5.0, 1e-3);

  auto err_rhs = [&](const Vec& e, const Vec& in) -> Vec {
    return f.n * e - f.m * (f.b_omega_a * in.tail(1));
  };
  Trajectory direct = integrate(err_rhs, Vec::Zero(nz), joint_in, 5.0, 1e-3);

  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    Vec x_a = joint.states[i].head(nz);
    Vec z = joint.states[i].tail(nz);
    Vec y = aug.c_a * x_a;
    Vec e_joint = (z - f.e * y) - x_a;
    worst = std::max(worst, (e_joint - direct.states[i]).norm());
    scale = std::max(scale, direct.states[i].norm());
  }
  CHECK(worst <= 1e-6 * (1.0 + scale));
}

TEST_CASE("certified filter keeps the error bounded over long horizons") {
  SystemModel s = chain_plant();
  AugmentedSystem aug = augment(s, 2);
  EstimatorFilter f = design_filter(s, aug, {.r = 2});
  MultisineSpec mspec;
  mspec.seed = 31;
  mspec.channels = 2;
  MultisineSpec nspec = mspec;
  nspec.seed = 32;
  MultisineSignal wa_sig = generate_multisine(mspec);
  MultisineSignal nu_sig = generate_multisine(nspec);
  Mat b_nu(f.n_z, 2);
  b_nu.col(0) = f.k * f.d_nu;
  b_nu.col(1) = -f.e * f.d_nu;
  Signal in = [&](double t) {
    Vec v(3);
    v(0) = wa_sig.scalar(t);
    v(1) = nu_sig.scalar(t);
    v(2) = 0.0;  // nudot left out; boundedness is the point here
    return v;
  };
  auto rhs = [&](const Vec& e, const Vec& v) -> Vec {
    return f.n * e - f.m * (f.b_omega_a * v.head(1)) + b_nu * v.tail(2);
  };
  Trajectory tr = integrate(rhs, Vec::Zero(f.n_z), in, 100.0, 1e-2);
  CHECK(tr.states.back().allFinite());
}

TEST_CASE("make_labeled_dataset: cut and decimation arithmetic") {
  FilterRun run;
  for (int i = 0; i <= 100; ++i) {
    run.times.push_back(0.01 * i);
    run.eta_hat.push_back(Vec::Constant(1, static_cast<double>(i)));
    run.x_hat.push_back(Vec::Constant(2, 1.0));
    run.inputs.push_back(Vec::Constant(1, 0.5));
  }
  Mat v_eta = Mat::Ones(1, 2);
  BasisLibrary basis = BasisLibrary::empty(1);

  LabeledDataset full = make_labeled_dataset(run, basis, v_eta, 0.0, 1);
  CHECK(full.count() == 101);

  LabeledDataset dec = make_labeled_dataset(run, basis, v_eta, 0.0, 10);
  CHECK(dec.count() == 11);

  LabeledDataset cut = make_labeled_dataset(run, basis, v_eta, 0.5, 1);
  CHECK(cut.count() == 51);

  CHECK_THROWS_AS(make_labeled_dataset(run, basis, v_eta, 10.0, 1), ConfigError);
}
