#include "modup/estimator.hpp"

#include <Eigen/Cholesky>

#include <cmath>

#include "modup/lmi.hpp"
#include "modup/rng.hpp"

namespace modup {

Mat AugmentedSystem::c_bar1() const {
  Mat c1 = Mat::Zero(n_eta, n_z());
  c1.block(0, n, n_eta, n_eta).setIdentity();
  return c1;
}

Mat AugmentedSystem::c_bar2() const {
  Mat c2 = Mat::Zero(n, n_z());
  c2.leftCols(n).setIdentity();
  return c2;
}

Mat AugmentedSystem::c_bar_a() const {
  Mat c(n_eta + n, n_z());
  c.topRows(n_eta) = c_bar1();
  c.bottomRows(n) = c_bar2();
  return c;
}

AugmentedSystem augment(const SystemModel& sys, int r) {
  sys.validate();
  require(r >= 1, "augment: r must be at least 1");
  require(sys.n_eta() >= 1, "augment: system has no uncertainty channel");
  AugmentedSystem a;
  a.r = r;
  a.n = sys.n();
  a.n_eta = sys.n_eta();
  const int nz = a.n_z();
  const int dn = a.d_n();

  a.a_a = Mat::Zero(nz, nz);
  a.a_a.topLeftCorner(a.n, a.n) = sys.a;
  a.a_a.block(0, a.n, a.n, a.n_eta) = sys.s_eta;
  if (dn > 0) a.a_a.block(a.n, a.n + a.n_eta, dn, dn).setIdentity();

  a.b_ua = Mat::Zero(nz, sys.l());
  a.b_ua.topRows(a.n) = sys.b_u;

  a.s_ga = Mat::Zero(nz, sys.n_g());
  a.s_ga.topRows(a.n) = sys.s_g;

  a.v_ga = Mat::Zero(sys.n_vg(), nz);
  a.v_ga.leftCols(a.n) = sys.v_g;

  a.v_eta_a = Mat::Zero(sys.n_veta(), nz);
  a.v_eta_a.leftCols(a.n) = sys.v_eta;

  a.b_omega_a = Mat::Zero(nz, sys.n_omega() + a.n_eta);
  a.b_omega_a.block(0, 0, a.n, sys.n_omega()) = sys.b_omega;
  a.b_omega_a.block(nz - a.n_eta, sys.n_omega(), a.n_eta, a.n_eta).setIdentity();

  a.c_a = Mat::Zero(sys.m(), nz);
  a.c_a.leftCols(a.n) = sys.c;
  return a;
}

void EstimatorConfig::validate() const {
  if (r < 1) throw ConfigError("EstimatorConfig: r must be at least 1");
  if (a <= 0.0) throw ConfigError("EstimatorConfig: a must be positive");
  if (b == 0.0) throw ConfigError("EstimatorConfig: b must be nonzero");
  if (sigma_max <= 0.0) throw ConfigError("EstimatorConfig: sigma_max must be positive");
}

EstimatorFilter make_filter(const SystemModel& sys, const AugmentedSystem& aug, const Mat& e,
                            const Mat& k, const Mat& h, double rho, double sigma, double b) {
  const int nz = aug.n_z();
  require(e.rows() == nz && e.cols() == sys.m(), "make_filter: E shape");
  require(k.rows() == nz && k.cols() == sys.m(), "make_filter: K shape");
  EstimatorFilter f;
  f.e = e;
  f.k = k;
  f.h = h;
  f.m = Mat::Identity(nz, nz) + e * aug.c_a;
  f.n = f.m * aug.a_a - k * aug.c_a;
  f.g = f.m * aug.b_ua;
  f.l = k * (Mat::Identity(sys.m(), sys.m()) + aug.c_a * e) - f.m * aug.a_a * e;
  f.c_a = aug.c_a;
  f.s_ga = aug.s_ga;
  f.v_ga = aug.v_ga;
  f.b_ua = aug.b_ua;
  f.b_omega_a = aug.b_omega_a;
  f.d_nu = sys.d_nu;
  f.c_bar1 = aug.c_bar1();
  f.c_bar2 = aug.c_bar2();
  f.c_bar_a = aug.c_bar_a();
  f.g_fn = sys.g;
  f.n_z = nz;
  f.r = aug.r;
  f.rho = rho;
  f.sigma = sigma;
  f.b = b;
  return f;
}

EstimatorFilter design_filter(const SystemModel& sys, const AugmentedSystem& aug,
                              const EstimatorConfig& cfg) {
  using lmi::BlockForm;
  using lmi::Expr;
  using lmi::Sense;
  cfg.validate();
  const int nz = aug.n_z();
  const int m = sys.m();
  const int n_vg = sys.n_vg();
  const int n_g = sys.n_g();
  const int n_wa = static_cast<int>(aug.b_omega_a.cols());
  const int m_nu = sys.m_nu();
  const double lip = sys.lip_g.x;
  const bool with_g = n_g > 0 && lip > 0.0;

  lmi::Problem prob;
  auto pi = prob.sym_var("Pi", nz);
  auto rbar = prob.rect_var("Rbar", nz, m);
  auto qbar = prob.rect_var("Qbar", nz, m);
  lmi::VarRef hvar;
  if (with_g) hvar = prob.rect_var("H", n_vg, m);
  auto rho = prob.scalar_var("rho");
  auto sigma = prob.scalar_var("sigma");

  Mat id_nz = Mat::Identity(nz, nz);
  auto x11 = [&]() {
    Expr e = symmetrize(Expr::term(pi, id_nz, aug.a_a)) +
             symmetrize(Expr::term(rbar, id_nz, aug.c_a * aug.a_a)) -
             symmetrize(Expr::term(qbar, id_nz, aug.c_a));
    if (with_g) {
      e = e + Expr::constant(lip * aug.v_ga.transpose() * aug.v_ga) -
          lip * symmetrize(Expr::term(hvar, aug.v_ga.transpose(), aug.c_a));
    }
    return e;
  };
  // Lipschitz slack columns: sqrt(2 lip) (Pi + Rbar C_a) S_ga and
  // sqrt(lip) C_a^T H^T.
  auto x12_cols = [&](BlockForm& bf, int row, int col_g, int col_h) {
    bf.set(row, col_g,
           std::sqrt(2.0 * lip) *
               (Expr::term(pi, id_nz, aug.s_ga) + Expr::term(rbar, id_nz, aug.c_a * aug.s_ga)));
    bf.set(col_g, col_g, Expr::constant(-Mat::Identity(n_g, n_g)));
    bf.set(row, col_h,
           std::sqrt(lip) * Expr::term(hvar, aug.c_a.transpose(), Mat::Identity(n_vg, n_vg),
                                       /*transpose=*/true));
    bf.set(col_h, col_h, Expr::constant(-Mat::Identity(n_vg, n_vg)));
  };

  // Internal stability with the Lipschitz S-procedure slack.
  {
    std::vector<int> dims{nz};
    if (with_g) {
      dims.push_back(n_g);
      dims.push_back(n_vg);
    }
    BlockForm bf(dims);
    bf.set(0, 0, x11());
    if (with_g) x12_cols(bf, 0, 1, 2);
    prob.constrain(bf.assemble(), Sense::NsdStrict, "internal stability");
  }
  // Disturbance attenuation: L2 gain from the augmented disturbance.
  {
    std::vector<int> dims{nz, n_wa};
    if (with_g) {
      dims.push_back(n_g);
      dims.push_back(n_vg);
    }
    BlockForm bf(dims);
    bf.set(0, 0, x11() + Expr::constant(cfg.a * aug.c_bar_a().transpose() * aug.c_bar_a()));
    bf.set(0, 1,
           -(Expr::term(pi, id_nz, aug.b_omega_a) +
             Expr::term(rbar, id_nz, aug.c_a * aug.b_omega_a)));
    bf.set(1, 1, Expr::scalar_term(rho, -cfg.a * Mat::Identity(n_wa, n_wa)));
    if (with_g) x12_cols(bf, 0, 2, 3);
    prob.constrain(bf.assemble(), Sense::Nsd, "disturbance attenuation");
  }
  // Noise rejection: energy bound on the (nu, nudot) channel.
  {
    std::vector<int> dims{nz, 2 * m_nu};
    if (with_g) {
      dims.push_back(n_vg);
      dims.push_back(n_g);
      dims.push_back(n_vg);
    }
    BlockForm bf(dims);
    bf.set(0, 0, x11());
    Mat sel_nu = Mat::Zero(m_nu, 2 * m_nu);
    sel_nu.leftCols(m_nu).setIdentity();
    Mat sel_nudot = Mat::Zero(m_nu, 2 * m_nu);
    sel_nudot.rightCols(m_nu).setIdentity();
    bf.set(0, 1,
           Expr::term(qbar, id_nz, sys.d_nu * sel_nu) -
               Expr::term(rbar, id_nz, sys.d_nu * sel_nudot));
    bf.set(1, 1, Expr::constant(-cfg.b * cfg.b * Mat::Identity(2 * m_nu, 2 * m_nu)));
    if (with_g) {
      Mat t_nu = Mat::Zero(m, 2 * m_nu);
      t_nu.leftCols(m_nu) = sys.d_nu;
      bf.set(1, 2, Expr::term(hvar, t_nu.transpose(), Mat::Identity(n_vg, n_vg),
                              /*transpose=*/true));
      bf.set(2, 2, Expr::constant(-Mat::Identity(n_vg, n_vg)));
      x12_cols(bf, 0, 3, 4);
    }
    prob.constrain(bf.assemble(), Sense::Nsd, "noise rejection");
  }
  // Energy-to-peak certificate for the reconstructed error.
  {
    BlockForm bf({nz, aug.n_eta + aug.n});
    bf.set(0, 0, Expr::var(pi, nz, nz));
    bf.set(0, 1, Expr::constant(aug.c_bar_a().transpose()));
    bf.set(1, 1, Expr::scalar_term(sigma, Mat::Identity(aug.n_eta + aug.n, aug.n_eta + aug.n)));
    prob.constrain(bf.assemble(), Sense::Psd, "peak certificate");
  }
  prob.constrain(Expr::constant(cfg.sigma_max * Mat::Ones(1, 1)) - Expr::var(sigma, 1, 1),
                 Sense::Psd, "sigma cap");
  prob.constrain(Expr::var(pi, nz, nz), Sense::PsdStrict, "Pi pd");
  prob.minimize(Expr::var(rho, 1, 1));

  lmi::SolveOptions so;
  so.tol = cfg.solver_tol;
  so.strict_margin = cfg.strict_margin;
  auto sol = prob.solve(so);
  if (!sol.feasible()) {
    std::string which = "filter synthesis";
    if (!sol.message.empty()) which += " (" + sol.message + ")";
    throw InfeasibleError(which + ": semidefinite program infeasible");
  }
  Mat pival = sol.value("Pi");
  Eigen::LLT<Mat> llt(pival);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("design_filter: recovered Pi is not positive definite");
  }
  Mat e = llt.solve(sol.value("Rbar"));
  Mat k = llt.solve(sol.value("Qbar"));
  Mat h = with_g ? sol.value("H") : Mat::Zero(n_vg, m);
  return make_filter(sys, aug, e, k, h, sol.scalar("rho"), sol.scalar("sigma"), cfg.b);
}

FilterRun run_filter(const EstimatorFilter& f, const Signal& u, const Signal& y, const Vec& z0,
                     double t_f, double dt) {
  require(z0.size() == f.n_z, "run_filter: z0 dimension");
  const int l = static_cast<int>(f.b_ua.cols());
  const int m = static_cast<int>(f.c_a.rows());
  Signal combined = [&u, &y, l, m](double t) {
    Vec uy(l + m);
    uy.head(l) = u(t);
    uy.tail(m) = y(t);
    return uy;
  };
  const bool with_g = f.s_ga.cols() > 0 && static_cast<bool>(f.g_fn);
  auto rhs = [&](const Vec& z, const Vec& uy) -> Vec {
    Vec uu = uy.head(l);
    Vec yy = uy.tail(m);
    Vec dz = f.n * z + f.g * uu + f.l * yy;
    if (with_g) {
      Vec xhat_a = z - f.e * yy;
      Vec arg = f.v_ga * xhat_a + f.h * (yy - f.c_a * xhat_a);
      dz += f.m * (f.s_ga * f.g_fn(arg, uu));
    }
    return dz;
  };
  Trajectory tr = integrate(rhs, z0, combined, t_f, dt);

  FilterRun run;
  run.times = tr.times;
  run.eta_hat.reserve(tr.size());
  run.x_hat.reserve(tr.size());
  run.inputs.reserve(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    Vec yy = tr.inputs[i].tail(m);
    Vec xhat_a = tr.states[i] - f.e * yy;
    run.eta_hat.push_back(f.c_bar1 * xhat_a);
    run.x_hat.push_back(f.c_bar2 * xhat_a);
    run.inputs.push_back(tr.inputs[i].head(l));
  }
  return run;
}

FilterRun run_filter(const EstimatorFilter& f, const Trajectory& data, const Vec& z0) {
  require(!data.times.empty(), "run_filter: empty trajectory");
  require(!data.outputs.empty(), "run_filter: trajectory carries no outputs");
  Signal u = interpolate_signal(data.times, data.inputs);
  Signal y = interpolate_signal(data.times, data.outputs);
  double t_f = data.times.back();
  double dt = data.dt();
  return run_filter(f, u, y, z0, t_f, dt);
}

LabeledDataset make_labeled_dataset(const FilterRun& run, const BasisLibrary& basis,
                                    const Mat& v_eta, double transient_cut, int decimation) {
  require(decimation >= 1, "make_labeled_dataset: decimation must be >= 1");
  LabeledDataset ds;
  ds.basis = basis;
  ds.v_eta = v_eta;
  for (std::size_t i = 0; i < run.times.size(); i += static_cast<std::size_t>(decimation)) {
    if (run.times[i] < transient_cut) continue;
    LabeledSample s;
    s.t = run.times[i];
    s.u = run.inputs[i];
    s.x_hat = run.x_hat[i];
    s.eta_hat = run.eta_hat[i];
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) {
    throw ConfigError("make_labeled_dataset: no samples left after the transient cut");
  }
  return ds;
}

namespace {

double l2_norm_sq(const std::vector<double>& t, const std::vector<double>& v2) {
  double acc = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    acc += 0.5 * (v2[i] + v2[i - 1]) * (t[i] - t[i - 1]);
  }
  return acc;
}

MultisineSignal smooth_channel(RandomStream& rs, double t_f) {
  MultisineSpec spec;
  spec.amp_lo = 0.2;
  spec.amp_hi = 1.0;
  spec.freq_lo = 0.2;
  spec.freq_hi = 6.0;
  spec.phase_lo = 0.0;
  spec.phase_hi = 3.1;
  spec.count_lo = 2;
  spec.count_hi = 6;
  spec.t_f = t_f;
  spec.channels = 1;
  spec.seed = rs.next_u64();
  return generate_multisine(spec);
}

}  // namespace

GainBoundReport verify_gain_bounds(const EstimatorFilter& f, const AugmentedSystem& aug,
                                   int trials, double t_f, double dt, std::uint64_t seed) {
  GainBoundReport rep;
  rep.trials = trials;
  rep.l2_bound = f.l2_gain_bound();
  rep.peak_bound = f.energy_to_peak_bound();
  const int n_wa = static_cast<int>(f.b_omega_a.cols());
  const int m_nu = static_cast<int>(f.d_nu.cols());

  std::vector<double> l2_ratio(trials, 0.0), peak_ratio(trials, 0.0);
  parallel_for(trials, [&](int trial) {
    RandomStream rs = RandomStream::substream(seed, "gain-" + std::to_string(trial));

    // Disturbance run: error dynamics driven by -M B_omega_a omega_a.
    {
      std::vector<MultisineSignal> chans;
      for (int c = 0; c < n_wa; ++c) chans.push_back(smooth_channel(rs, t_f));
      Signal wa = [&chans, n_wa](double t) {
        Vec w(n_wa);
        for (int c = 0; c < n_wa; ++c) w(c) = chans[c].scalar(t);
        return w;
      };
      auto rhs = [&](const Vec& e, const Vec& w) -> Vec { return f.n * e - f.m * (f.b_omega_a * w); };
      Trajectory tr = integrate(rhs, Vec::Zero(f.n_z), wa, t_f, dt);
      std::vector<double> ed2(tr.size()), w2(tr.size());
      for (std::size_t i = 0; i < tr.size(); ++i) {
        ed2[i] = (f.c_bar_a * tr.states[i]).squaredNorm();
        w2[i] = tr.inputs[i].squaredNorm();
      }
      double num = l2_norm_sq(tr.times, ed2);
      double den = l2_norm_sq(tr.times, w2);
      l2_ratio[trial] = den > 1e-300 ? std::sqrt(num / den) : 0.0;
    }

    // Noise run: B_nu_a nu_a with nu_a = (nu, nudot), nudot analytic.
    {
      std::vector<MultisineSignal> chans;
      for (int c = 0; c < m_nu; ++c) chans.push_back(smooth_channel(rs, t_f));
      auto nu_pair = [&chans, m_nu](double t) {
        Vec v(2 * m_nu);
        for (int c = 0; c < m_nu; ++c) {
          double val = 0.0, dval = 0.0;
          for (std::size_t i = 0; i < chans[c].amp.size(); ++i) {
            val += chans[c].amp[i] * std::sin(chans[c].freq[i] * t + chans[c].phase[i]);
            dval += chans[c].amp[i] * chans[c].freq[i] *
                    std::cos(chans[c].freq[i] * t + chans[c].phase[i]);
          }
          v(c) = chans[c].norm_coeff * val;
          v(m_nu + c) = chans[c].norm_coeff * dval;
        }
        return v;
      };
      Mat b_nu(f.n_z, 2 * m_nu);
      b_nu.leftCols(m_nu) = f.k * f.d_nu;
      b_nu.rightCols(m_nu) = -f.e * f.d_nu;
      auto rhs = [&](const Vec& e, const Vec& va) -> Vec { return f.n * e + b_nu * va; };
      Trajectory tr = integrate(rhs, Vec::Zero(f.n_z), nu_pair, t_f, dt);
      std::vector<double> va2(tr.size());
      double peak = 0.0;
      for (std::size_t i = 0; i < tr.size(); ++i) {
        peak = std::max(peak, (f.c_bar_a * tr.states[i]).norm());
        va2[i] = tr.inputs[i].squaredNorm();
      }
      double den = std::sqrt(l2_norm_sq(tr.times, va2));
      peak_ratio[trial] = den > 1e-300 ? peak / den : 0.0;
    }
  });
  for (int i = 0; i < trials; ++i) {
    rep.l2_ratio_max = std::max(rep.l2_ratio_max, l2_ratio[i]);
    rep.peak_ratio_max = std::max(rep.peak_ratio_max, peak_ratio[i]);
  }
  return rep;
}

}  // namespace modup
