#pragma once

// Shared test plants and datasets.

#include "modup/learning.hpp"
#include "modup/rng.hpp"

namespace modup::testfix {

// n = 1 plant with scalar uncertainty channel and one (inactive) input.
inline SystemModel scalar_plant(double a) {
  SystemModel s;
  s.a = a * Mat::Ones(1, 1);
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

inline LabeledDataset scalar_linear_data(double slope, int count = 40) {
  LabeledDataset ds;
  ds.v_eta = Mat::Ones(1, 1);
  ds.basis = BasisLibrary::empty(1);
  RandomStream rs(303);
  for (int i = 0; i < count; ++i) {
    LabeledSample s;
    s.x_hat = Vec::Constant(1, rs.uniform(-1.5, 1.5));
    s.u = Vec::Zero(1);
    s.eta_hat = slope * s.x_hat;
    ds.samples.push_back(s);
  }
  return ds;
}

inline LearnConfig scalar_cfg() {
  LearnConfig cfg;
  cfg.lbar_hx_grid = {1.0};
  cfg.beta_grid = {0.5};
  cfg.mu_grid = {0.1, 1.0, 10.0};
  cfg.gamma_bar_grid = {0.3, 1.0, 3.0, 10.0};
  cfg.lip_g = {0.0, 0.0};
  cfg.lip_h = {0.0, 0.0};
  cfg.solver_tol = 1e-9;
  return cfg;
}

// Two-state plant with a scalar uncertainty channel driven by x1 and a cubic
// nonlinearity in the truth; data sampled directly from the true map.
struct PlanarFixture {
  SystemModel sys;
  LabeledDataset ds;
  LearnConfig cfg;
};

inline PlanarFixture planar_fixture(bool zero_labels = false) {
  PlanarFixture f;
  f.sys.a = Mat(2, 2);
  f.sys.a << -2.0, 0.2, 0.0, -2.5;
  f.sys.b_u = Mat(2, 1);
  f.sys.b_u << 0.5, 1.0;
  f.sys.s_g = Mat::Zero(2, 0);
  f.sys.v_g = Mat::Zero(0, 2);
  f.sys.s_eta = Mat(2, 1);
  f.sys.s_eta << 1.0, 0.5;
  f.sys.v_eta = Mat(1, 2);
  f.sys.v_eta << 1.0, 0.0;
  f.sys.b_omega = Mat::Zero(2, 0);
  f.sys.c = Mat::Identity(2, 2);
  f.sys.d_nu = Mat::Identity(2, 2);
  f.sys.eta_true = [](const Vec& s, const Vec&) -> Vec {
    return 0.2 * s - 0.1 * s.array().cube().matrix();
  };

  f.ds.v_eta = f.sys.v_eta;
  f.ds.basis = BasisLibrary::from_tags({"cubic"}, 1);
  RandomStream rs(909);
  std::vector<Vec> xs, us;
  for (int i = 0; i < 300; ++i) {
    LabeledSample s;
    s.x_hat = Vec(2);
    s.x_hat << rs.uniform(-0.5, 0.5), rs.uniform(-0.5, 0.5);
    s.u = Vec::Constant(1, rs.uniform(-0.5, 0.5));
    double v = (f.sys.v_eta * s.x_hat)(0);
    double eta = zero_labels ? 0.0 : 0.2 * v - 0.1 * v * v * v;
    s.eta_hat = Vec::Constant(1, eta);
    f.ds.samples.push_back(s);
    xs.push_back(s.x_hat);
    us.push_back(s.u);
  }

  f.cfg.state_set = fit_bounding(xs, {.inflation = 1.05});
  f.cfg.input_set = fit_bounding(us, {.inflation = 1.05});
  // cubic block over |v_eta x| <= ~0.55
  f.cfg.lip_g = {0.0, 0.0};
  f.cfg.lip_h = {3.0 * 0.55 * 0.55, 0.0};
  f.cfg.lbar_hx_grid = {0.1, 0.3, 1.0};
  f.cfg.beta_grid = {0.05, 0.2, 1.0};
  f.cfg.mu_grid = {0.5, 1.5, 4.0};
  f.cfg.gamma_bar_grid = {0.5, 2.0, 8.0};
  f.cfg.solver_tol = 1e-9;
  return f;
}

}  // namespace modup::testfix
