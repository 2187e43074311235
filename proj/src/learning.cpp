#include "modup/learning.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <optional>

namespace modup {

namespace {

using lmi::BlockForm;
using lmi::Expr;
using lmi::Problem;
using lmi::Sense;
using lmi::VarRef;

Expr trace_of(VarRef v, int dim) {
  Expr e = Expr::zero(1, 1);
  for (int i = 0; i < dim; ++i) {
    Mat row = Mat::Zero(1, dim);
    row(0, i) = 1.0;
    e = e + Expr::term(v, row, row.transpose());
  }
  return e;
}

Mat solve_spd(const Mat& p, const Mat& rhs) {
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("variable recovery: Lyapunov shape is not positive definite");
  }
  return llt.solve(rhs);
}

lmi::SolveOptions solver_options(const LearnConfig& cfg) {
  lmi::SolveOptions o;
  o.tol = cfg.solver_tol;
  o.strict_margin = cfg.strict_margin;
  return o;
}

struct Candidate {
  bool feasible = false;
  LearnResult result;
  std::string note;
};

/// Full scan of the hyperparameter grid; the best feasible point (smallest
/// cost bound, then lowest grid index) wins. Points solve concurrently.
LearnResult grid_search(const std::vector<GridChoice>& grid,
                        const std::function<Candidate(const GridChoice&)>& solve_point,
                        int max_threads, const char* what) {
  std::vector<Candidate> cands(grid.size());
  parallel_for(static_cast<int>(grid.size()), [&](int i) {
    try {
      cands[i] = solve_point(grid[i]);
    } catch (const std::exception& e) {
      cands[i].note = e.what();
    }
  }, max_threads);

  int best = -1;
  int feasible_count = 0;
  for (int i = 0; i < static_cast<int>(cands.size()); ++i) {
    if (!cands[i].feasible) continue;
    ++feasible_count;
    if (best < 0 || cands[i].result.cost_bound < cands[best].result.cost_bound) best = i;
  }
  if (best < 0) {
    std::string detail;
    for (const auto& c : cands) {
      if (!c.note.empty()) {
        detail = " (" + c.note + ")";
        break;
      }
    }
    throw InfeasibleError(std::string(what) + ": no feasible hyperparameter grid point out of " +
                          std::to_string(grid.size()) + detail);
  }
  LearnResult res = cands[best].result;
  res.diag.grid_points_tried = static_cast<int>(grid.size());
  res.diag.grid_points_feasible = feasible_count;
  return res;
}

std::vector<GridChoice> make_grid(const std::vector<double>& lbar, const std::vector<double>& beta,
                                  const std::vector<double>& mu,
                                  const std::vector<double>& gbar) {
  std::vector<GridChoice> g;
  for (double a : lbar)
    for (double b : beta)
      for (double m : mu)
        for (double c : gbar) g.push_back({a, b, m, c});
  return g;
}

const std::vector<double> kUnused{0.0};

// Splits the data factor into per-block rows of factor^T (q x rank).
struct FactorBlocks {
  Mat x, u, label, h;
  int rank;
};

FactorBlocks factor_blocks(const DataMatrix& dm) {
  FactorBlocks fb;
  fb.rank = static_cast<int>(dm.factor.rows());
  fb.x = dm.factor.middleCols(dm.off_x(), dm.n_veta).transpose();
  fb.u = dm.factor.middleCols(dm.off_u(), dm.l).transpose();
  fb.label = dm.factor.middleCols(dm.off_label(), dm.n_label).transpose();
  if (dm.n_h > 0) fb.h = dm.factor.middleCols(dm.off_h(), dm.n_h).transpose();
  return fb;
}

// ---------------------------------------------------------------------------
// Cost-modification programs (change of variables S = P Theta_l, R = P B_l,
// Z = P Theta_n; S_eta_l = I). dm must be in state-equation label units.
// ---------------------------------------------------------------------------

struct CostModVars {
  VarRef p, s, r, z, w, alpha, gamma;
  bool has_z = false;
};

// Main stability block shared by the invariant-set (with S-procedure rows)
// and ISS (bare) variants.
Expr cost_mod_stability_block(const SystemModel& sys, const LearnConfig& cfg,
                              const GridChoice& gc, const CostModVars& v, bool local) {
  struct {
    int n, l, n_g;
  } d{sys.n(), sys.l(), sys.n_g()};
  const double lbar_hx = v.has_z ? gc.lbar_hx : 0.0;
  const double lbar_hu = v.has_z ? derived_lbar_hu(gc.lbar_hx, cfg.lip_h) : 0.0;
  const double coef_g = cfg.lip_g.x + cfg.lip_g.u;
  const double coef_h = lbar_hx + lbar_hu;

  std::vector<int> bdims;
  bdims.push_back(d.n);
  int u_cell = -1, one_cell = -1, g_cell = -1, h_cell = -1;
  int at = 1;
  if (local) {
    u_cell = at++;
    bdims.push_back(d.l);
    one_cell = at++;
    bdims.push_back(1);
  }
  if (coef_g > 0.0) {
    g_cell = at++;
    bdims.push_back(d.n_g);
  }
  if (coef_h > 0.0) {
    h_cell = at++;
    bdims.push_back(d.n);
  }

  BlockForm bf(bdims);
  Expr m1 = symmetrize(Expr::term(v.p, sys.a.transpose(), Mat::Identity(d.n, d.n))) +
            symmetrize(Expr::term(v.s, Mat::Identity(d.n, d.n), sys.v_eta));
  Mat m1_const = cfg.lip_g.x * sys.v_g.transpose() * sys.v_g +
                 lbar_hx * sys.v_eta.transpose() * sys.v_eta;
  if (m1_const.cwiseAbs().maxCoeff() > 0.0) m1 = m1 + Expr::constant(m1_const);
  if (local && gc.beta != 0.0) {
    m1 = m1 + Expr::term(v.p, gc.beta * Mat::Identity(d.n, d.n), Mat::Identity(d.n, d.n));
  }
  bf.set(0, 0, m1);
  if (local) {
    bf.set(0, u_cell, Expr::term(v.p, Mat::Identity(d.n, d.n), sys.b_u) + Expr::var(v.r, d.n, d.l));
    Mat u_const = (cfg.lip_g.u + lbar_hu) * Mat::Identity(d.l, d.l);
    Expr cell_uu = Expr::scalar_term(v.alpha, -cfg.input_set.shape().mat());
    if (u_const.cwiseAbs().maxCoeff() > 0.0) cell_uu = cell_uu + Expr::constant(u_const);
    bf.set(u_cell, u_cell, cell_uu);
    bf.set(one_cell, one_cell,
           Expr::scalar_term(v.alpha, Mat::Ones(1, 1)) +
               Expr::constant(-gc.beta * Mat::Ones(1, 1)));
  }
  if (g_cell >= 0) {
    bf.set(0, g_cell, Expr::term(v.p, std::sqrt(coef_g) * Mat::Identity(d.n, d.n), sys.s_g));
    bf.set(g_cell, g_cell, Expr::constant(-Mat::Identity(d.n_g, d.n_g)));
  }
  if (h_cell >= 0) {
    bf.set(0, h_cell,
           Expr::term(v.p, std::sqrt(coef_h) * Mat::Identity(d.n, d.n), Mat::Identity(d.n, d.n)));
    bf.set(h_cell, h_cell, Expr::constant(-Mat::Identity(d.n, d.n)));
  }
  return bf.assemble();
}

void add_theta_n_bound_pz(Problem& prob, const CostModVars& v, const LearnConfig& cfg,
                          const GridChoice& gc, int n, int n_h) {
  // [[lbar I, l_hx Z^T], [*, lbar (2 mu P - mu^2 I)]] >= 0
  if (!v.has_z || cfg.lip_h.x <= 0.0) return;
  BlockForm bf({n_h, n});
  bf.set(0, 0, Expr::constant(gc.lbar_hx * Mat::Identity(n_h, n_h)));
  bf.set(0, 1, cfg.lip_h.x * Expr::var(v.z, n, n_h, /*transpose=*/true));
  bf.set(1, 1,
         Expr::term(v.p, 2.0 * gc.mu * gc.lbar_hx * Mat::Identity(n, n), Mat::Identity(n, n)) +
             Expr::constant(-gc.lbar_hx * gc.mu * gc.mu * Mat::Identity(n, n)));
  prob.constrain(bf.assemble(), Sense::Psd, "theta_n bound");
}

void add_cost_epigraph_pw(Problem& prob, const CostModVars& v, const FactorBlocks& fb,
                          const GridChoice& gc, int n) {
  // [[2 mu P, Ttil Dtil^T, mu I], [*, I, 0], [*, *, W]] >= 0 with
  // Ttil = [S R -P Z] acting on the data factor blocks.
  if (fb.rank == 0) {
    prob.constrain(Expr::var(v.w, n, n), Sense::Psd, "cost epigraph");
    return;
  }
  BlockForm bf({n, fb.rank, n});
  bf.set(0, 0, Expr::term(v.p, 2.0 * gc.mu * Mat::Identity(n, n), Mat::Identity(n, n)));
  Expr td = Expr::term(v.s, Mat::Identity(n, n), fb.x) +
            Expr::term(v.r, Mat::Identity(n, n), fb.u) -
            Expr::term(v.p, Mat::Identity(n, n), fb.label);
  if (v.has_z) td = td + Expr::term(v.z, Mat::Identity(n, n), fb.h);
  bf.set(0, 1, td);
  bf.set(0, 2, Expr::constant(gc.mu * Mat::Identity(n, n)));
  bf.set(1, 1, Expr::constant(Mat::Identity(fb.rank, fb.rank)));
  bf.set(2, 2, Expr::var(v.w, n, n));
  prob.constrain(bf.assemble(), Sense::Psd, "cost epigraph");
}

Problem build_cost_mod(const SystemModel& sys, const DataMatrix& dm, const LearnConfig& cfg,
                       const GridChoice& gc, bool local, CostModVars& v) {
  const int n = sys.n();
  Problem prob;
  v.p = prob.sym_var("P", n);
  v.s = prob.rect_var("S", n, sys.n_veta());
  v.r = prob.rect_var("R", n, sys.l());
  v.has_z = dm.n_h > 0;
  if (v.has_z) v.z = prob.rect_var("Z", n, dm.n_h);
  v.w = prob.sym_var("W", n);
  if (local) {
    v.alpha = prob.scalar_var("alpha");
    v.gamma = prob.scalar_var("gamma");
  }

  prob.constrain(cost_mod_stability_block(sys, cfg, gc, v, local),
                 local ? Sense::Nsd : Sense::NsdStrict, "stability");
  add_theta_n_bound_pz(prob, v, cfg, gc, n, dm.n_h);
  if (local) {
    // [[gamma F - P, 0], [*, 1 - gamma]] <= 0
    BlockForm bf({n, 1});
    bf.set(0, 0, Expr::scalar_term(v.gamma, cfg.state_set.shape().mat()) - Expr::var(v.p, n, n));
    bf.set(1, 1, Expr::constant(Mat::Ones(1, 1)) + Expr::scalar_term(v.gamma, -Mat::Ones(1, 1)));
    prob.constrain(bf.assemble(), Sense::Nsd, "set containment");
    prob.constrain(Expr::var(v.alpha, 1, 1), Sense::Psd, "alpha >= 0");
    prob.constrain(Expr::var(v.gamma, 1, 1), Sense::Psd, "gamma >= 0");
  }
  add_cost_epigraph_pw(prob, v, factor_blocks(dm), gc, n);
  prob.constrain(Expr::var(v.p, n, n), Sense::PsdStrict, "P pd");
  prob.minimize(trace_of(v.w, n));
  return prob;
}

Candidate solve_cost_mod_point(const SystemModel& sys, const DataMatrix& dm,
                               const LearnConfig& cfg, const GridChoice& gc, bool local,
                               const LabeledDataset& ds) {
  CostModVars v;
  Problem prob = build_cost_mod(sys, dm, cfg, gc, local, v);
  auto sol = prob.solve(solver_options(cfg));
  Candidate cand;
  if (!sol.feasible()) {
    cand.note = sol.status == lmi::SolveStatus::Infeasible ? "" : sol.message;
    return cand;
  }
  const int n = sys.n();
  Mat p = sol.value("P");
  UncertaintyModel model;
  model.theta_l = solve_spd(p, sol.value("S"));
  model.b_l = solve_spd(p, sol.value("R"));
  model.theta_n = dm.n_h > 0 ? Mat(solve_spd(p, sol.value("Z"))) : Mat::Zero(n, 0);
  model.s_eta_l = Mat::Identity(n, n);
  model.basis = ds.basis;

  ModelCertificate cert;
  cert.kind = local ? ModelCertificate::Kind::InvariantSet : ModelCertificate::Kind::Iss;
  cert.p = SymMatrix(p);
  cert.beta = local ? gc.beta : 0.0;
  cert.alpha = local ? sol.scalar("alpha") : 0.0;
  cert.gamma = local ? sol.scalar("gamma") : 0.0;
  cert.lbar_hx = dm.n_h > 0 ? gc.lbar_hx : 0.0;
  cert.margin = cfg.strict_margin;

  cand.feasible = true;
  cand.result.model = std::move(model);
  cand.result.certificate = cert;
  cand.result.cost_bound = sol.objective;
  cand.result.realized_cost = model_fit_cost(cand.result.model, dm);
  cand.result.chosen = gc;
  cand.result.diag.residuals = sol.residuals;
  cand.result.diag.duality_gap = sol.duality_gap;
  cand.result.diag.newton_iterations = sol.newton_iterations;
  return cand;
}

// ---------------------------------------------------------------------------
// Constraint-modification programs (theta direct, Q = P^{-1}, Young bound;
// S_eta_l = S_eta). dm stays in raw uncertainty-estimate units.
// ---------------------------------------------------------------------------

struct ConstraintModVars {
  VarRef q, theta_l, b_l, theta_n, w, alpha, gamma;
  bool has_theta_n = false;
};

Expr constraint_mod_stability_block(const SystemModel& sys, const LearnConfig& cfg,
                                    const GridChoice& gc, const ConstraintModVars& v,
                                    bool local) {
  const int n = sys.n();
  const int l = sys.l();
  const double lbar_hx = v.has_theta_n ? gc.lbar_hx : 0.0;
  const double lbar_hu = v.has_theta_n ? derived_lbar_hu(gc.lbar_hx, cfg.lip_h) : 0.0;
  const double coef_g = cfg.lip_g.x + cfg.lip_g.u;
  const double coef_h = lbar_hx + lbar_hu;

  std::vector<int> bdims{n};
  int u_cell = -1, one_cell = -1, young_cell = -1, vg_cell = -1, veta_cell = -1;
  int at = 1;
  if (local) {
    u_cell = at++;
    bdims.push_back(l);
    one_cell = at++;
    bdims.push_back(1);
  }
  young_cell = at++;
  bdims.push_back(n);
  if (cfg.lip_g.x > 0.0) {
    vg_cell = at++;
    bdims.push_back(sys.n_vg());
  }
  if (lbar_hx > 0.0) {
    veta_cell = at++;
    bdims.push_back(sys.n_veta());
  }

  BlockForm bf(bdims);
  Expr n1 = symmetrize(Expr::term(v.q, sys.a, Mat::Identity(n, n)));
  Mat n1_const = coef_g * sys.s_g * sys.s_g.transpose() +
                 coef_h * sys.s_eta * sys.s_eta.transpose();
  if (n1_const.cwiseAbs().maxCoeff() > 0.0) n1 = n1 + Expr::constant(n1_const);
  if (local && gc.beta != 0.0) {
    n1 = n1 + Expr::term(v.q, gc.beta * Mat::Identity(n, n), Mat::Identity(n, n));
  }
  bf.set(0, 0, n1);
  if (local) {
    Expr cell_u = Expr::term(v.b_l, sys.s_eta, Mat::Identity(l, l));
    if (sys.b_u.cwiseAbs().maxCoeff() > 0.0) cell_u = cell_u + Expr::constant(sys.b_u);
    bf.set(0, u_cell, cell_u);
    Mat u_const = (cfg.lip_g.u + lbar_hu) * Mat::Identity(l, l);
    Expr cell_uu = Expr::scalar_term(v.alpha, -cfg.input_set.shape().mat());
    if (u_const.cwiseAbs().maxCoeff() > 0.0) cell_uu = cell_uu + Expr::constant(u_const);
    bf.set(u_cell, u_cell, cell_uu);
    bf.set(one_cell, one_cell,
           Expr::scalar_term(v.alpha, Mat::Ones(1, 1)) +
               Expr::constant(-gc.beta * Mat::Ones(1, 1)));
  }
  bf.set(0, young_cell,
         Expr::term(v.theta_l, sys.s_eta, sys.v_eta) +
             Expr::term(v.q, gc.gamma_bar * Mat::Identity(n, n), Mat::Identity(n, n)));
  bf.set(young_cell, young_cell, Expr::constant(-2.0 * gc.gamma_bar * Mat::Identity(n, n)));
  if (vg_cell >= 0) {
    bf.set(0, vg_cell,
           Expr::term(v.q, std::sqrt(cfg.lip_g.x) * Mat::Identity(n, n), sys.v_g.transpose()));
    bf.set(vg_cell, vg_cell, Expr::constant(-Mat::Identity(sys.n_vg(), sys.n_vg())));
  }
  if (veta_cell >= 0) {
    bf.set(0, veta_cell,
           Expr::term(v.q, std::sqrt(lbar_hx) * Mat::Identity(n, n), sys.v_eta.transpose()));
    bf.set(veta_cell, veta_cell, Expr::constant(-Mat::Identity(sys.n_veta(), sys.n_veta())));
  }
  return bf.assemble();
}

void add_theta_n_bound_direct(Problem& prob, const ConstraintModVars& v, const LearnConfig& cfg,
                              const GridChoice& gc, int n_eta, int n_h) {
  // [[lbar I, l_hx Theta_n^T], [*, lbar I]] >= 0
  if (!v.has_theta_n || cfg.lip_h.x <= 0.0) return;
  BlockForm bf({n_h, n_eta});
  bf.set(0, 0, Expr::constant(gc.lbar_hx * Mat::Identity(n_h, n_h)));
  bf.set(0, 1, cfg.lip_h.x * Expr::var(v.theta_n, n_eta, n_h, /*transpose=*/true));
  bf.set(1, 1, Expr::constant(gc.lbar_hx * Mat::Identity(n_eta, n_eta)));
  prob.constrain(bf.assemble(), Sense::Psd, "theta_n bound");
}

void add_cost_epigraph_direct(Problem& prob, VarRef w, VarRef theta_l, VarRef b_l, VarRef theta_n,
                              bool has_theta_n, const FactorBlocks& fb, int n_label) {
  // [[W, T Dtil^T], [*, I]] >= 0, T = [Theta_l B_l -I Theta_n]
  if (fb.rank == 0) {
    prob.constrain(Expr::var(w, n_label, n_label), Sense::Psd, "cost epigraph");
    return;
  }
  BlockForm bf({n_label, fb.rank});
  bf.set(0, 0, Expr::var(w, n_label, n_label));
  Expr td = Expr::term(theta_l, Mat::Identity(n_label, n_label), fb.x) +
            Expr::term(b_l, Mat::Identity(n_label, n_label), fb.u) + Expr::constant(-fb.label);
  if (has_theta_n) td = td + Expr::term(theta_n, Mat::Identity(n_label, n_label), fb.h);
  bf.set(0, 1, td);
  bf.set(1, 1, Expr::constant(Mat::Identity(fb.rank, fb.rank)));
  prob.constrain(bf.assemble(), Sense::Psd, "cost epigraph");
}

Problem build_constraint_mod(const SystemModel& sys, const DataMatrix& dm, const LearnConfig& cfg,
                             const GridChoice& gc, bool local, ConstraintModVars& v) {
  const int n = sys.n();
  const int n_eta = sys.n_eta();
  Problem prob;
  v.q = prob.sym_var("Q", n);
  v.theta_l = prob.rect_var("Theta_l", n_eta, sys.n_veta());
  v.b_l = prob.rect_var("B_l", n_eta, sys.l());
  v.has_theta_n = dm.n_h > 0;
  if (v.has_theta_n) v.theta_n = prob.rect_var("Theta_n", n_eta, dm.n_h);
  v.w = prob.sym_var("W", n_eta);
  if (local) {
    v.alpha = prob.scalar_var("alpha");
    v.gamma = prob.scalar_var("gamma");
  }

  prob.constrain(constraint_mod_stability_block(sys, cfg, gc, v, local),
                 local ? Sense::Nsd : Sense::NsdStrict, "stability");
  add_theta_n_bound_direct(prob, v, cfg, gc, n_eta, dm.n_h);
  if (local) {
    // [[gamma F - 2 mu I + mu^2 Q, 0], [*, 1 - gamma]] <= 0
    BlockForm bf({n, 1});
    bf.set(0, 0,
           Expr::scalar_term(v.gamma, cfg.state_set.shape().mat()) +
               Expr::constant(-2.0 * gc.mu * Mat::Identity(n, n)) +
               Expr::term(v.q, gc.mu * gc.mu * Mat::Identity(n, n), Mat::Identity(n, n)));
    bf.set(1, 1, Expr::constant(Mat::Ones(1, 1)) + Expr::scalar_term(v.gamma, -Mat::Ones(1, 1)));
    prob.constrain(bf.assemble(), Sense::Nsd, "set containment");
    prob.constrain(Expr::var(v.alpha, 1, 1), Sense::Psd, "alpha >= 0");
    prob.constrain(Expr::var(v.gamma, 1, 1), Sense::Psd, "gamma >= 0");
  }
  add_cost_epigraph_direct(prob, v.w, v.theta_l, v.b_l, v.theta_n, v.has_theta_n,
                           factor_blocks(dm), n_eta);
  prob.constrain(Expr::var(v.q, n, n), Sense::PsdStrict, "Q pd");
  prob.minimize(trace_of(v.w, n_eta));
  return prob;
}

Candidate solve_constraint_mod_point(const SystemModel& sys, const DataMatrix& dm,
                                     const LearnConfig& cfg, const GridChoice& gc, bool local,
                                     const LabeledDataset& ds) {
  ConstraintModVars v;
  Problem prob = build_constraint_mod(sys, dm, cfg, gc, local, v);
  auto sol = prob.solve(solver_options(cfg));
  Candidate cand;
  if (!sol.feasible()) {
    cand.note = sol.status == lmi::SolveStatus::Infeasible ? "" : sol.message;
    return cand;
  }
  UncertaintyModel model;
  model.theta_l = sol.value("Theta_l");
  model.b_l = sol.value("B_l");
  model.theta_n = dm.n_h > 0 ? sol.value("Theta_n") : Mat::Zero(sys.n_eta(), 0);
  model.s_eta_l = sys.s_eta;
  model.basis = ds.basis;

  Mat q = sol.value("Q");
  Eigen::LLT<Mat> llt(q);
  if (llt.info() != Eigen::Success) {
    cand.note = "recovered Q is not positive definite";
    return cand;
  }
  Mat p = llt.solve(Mat::Identity(sys.n(), sys.n()));

  ModelCertificate cert;
  cert.kind = local ? ModelCertificate::Kind::InvariantSet : ModelCertificate::Kind::Iss;
  cert.p = SymMatrix(p);
  cert.beta = local ? gc.beta : 0.0;
  cert.alpha = local ? sol.scalar("alpha") : 0.0;
  cert.gamma = local ? sol.scalar("gamma") : 0.0;
  cert.lbar_hx = dm.n_h > 0 ? gc.lbar_hx : 0.0;
  cert.margin = cfg.strict_margin;

  cand.feasible = true;
  cand.result.model = std::move(model);
  cand.result.certificate = cert;
  cand.result.cost_bound = sol.objective;
  cand.result.realized_cost = model_fit_cost(cand.result.model, dm);
  cand.result.chosen = gc;
  cand.result.diag.residuals = sol.residuals;
  cand.result.diag.duality_gap = sol.duality_gap;
  cand.result.diag.newton_iterations = sol.newton_iterations;
  return cand;
}

void check_local_sets(const SystemModel& sys, const LearnConfig& cfg, const char* what) {
  if (cfg.state_set.dim() != sys.n()) {
    throw ConfigError(std::string(what) + ": state set dimension does not match the system");
  }
  if (cfg.input_set.dim() != sys.l()) {
    throw ConfigError(std::string(what) + ": input set dimension does not match the system");
  }
}

}  // namespace

void LearnConfig::validate_for(LearnMethod m, ModelClass klass, int n_h) const {
  auto positive = [](const std::vector<double>& g, const char* name) {
    if (g.empty()) throw ConfigError(std::string("LearnConfig: empty grid for ") + name);
    for (double v : g)
      if (v <= 0.0) throw ConfigError(std::string("LearnConfig: nonpositive value in ") + name);
  };
  if (m == LearnMethod::Unconstrained) return;
  if (n_h > 0) positive(lbar_hx_grid, "lbar_hx");
  if (m == LearnMethod::CostMod) positive(mu_grid, "mu");
  if (m == LearnMethod::ConstraintMod) {
    positive(gamma_bar_grid, "gamma_bar");
    if (klass == ModelClass::Local) positive(mu_grid, "mu");
  }
  if (klass == ModelClass::Local) positive(beta_grid, "beta");
  if (strict_margin <= 0.0) throw ConfigError("LearnConfig: strict_margin must be positive");
  if (solver_tol <= 0.0) throw ConfigError("LearnConfig: solver_tol must be positive");
}

bool is_hurwitz(const Mat& a) {
  Eigen::EigenSolver<Mat> es(a, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff() < 0.0;
}

LearnResult learn_cost_mod_local(const SystemModel& sys, const LabeledDataset& ds,
                                 const LearnConfig& cfg) {
  sys.validate();
  cfg.validate_for(LearnMethod::CostMod, ModelClass::Local, ds.basis.n_h());
  check_local_sets(sys, cfg, "learn_cost_mod_local");
  DataMatrix dm = build_data_matrix(ds).lifted(sys.s_eta);
  const auto lbar = dm.n_h > 0 ? cfg.lbar_hx_grid : kUnused;
  auto grid = make_grid(lbar, cfg.beta_grid, cfg.mu_grid, kUnused);
  return grid_search(
      grid,
      [&](const GridChoice& gc) {
        return solve_cost_mod_point(sys, dm, cfg, gc, /*local=*/true, ds);
      },
      cfg.max_threads, "cost-modification (invariant set)");
}

LearnResult learn_cost_mod_global(const SystemModel& sys, const LabeledDataset& ds,
                                  const LearnConfig& cfg) {
  sys.validate();
  cfg.validate_for(LearnMethod::CostMod, ModelClass::Global, ds.basis.n_h());
  DataMatrix dm = build_data_matrix(ds).lifted(sys.s_eta);
  const auto lbar = dm.n_h > 0 ? cfg.lbar_hx_grid : kUnused;
  auto grid = make_grid(lbar, kUnused, cfg.mu_grid, kUnused);
  return grid_search(
      grid,
      [&](const GridChoice& gc) {
        return solve_cost_mod_point(sys, dm, cfg, gc, /*local=*/false, ds);
      },
      cfg.max_threads, "cost-modification (ISS)");
}

LearnResult learn_constraint_mod_local(const SystemModel& sys, const LabeledDataset& ds,
                                       const LearnConfig& cfg) {
  sys.validate();
  cfg.validate_for(LearnMethod::ConstraintMod, ModelClass::Local, ds.basis.n_h());
  check_local_sets(sys, cfg, "learn_constraint_mod_local");
  if (!is_hurwitz(sys.a)) {
    throw InfeasibleError("constraint-modification: A is not Hurwitz");
  }
  DataMatrix dm = build_data_matrix(ds);
  const auto lbar = dm.n_h > 0 ? cfg.lbar_hx_grid : kUnused;
  auto grid = make_grid(lbar, cfg.beta_grid, cfg.mu_grid, cfg.gamma_bar_grid);
  return grid_search(
      grid,
      [&](const GridChoice& gc) {
        return solve_constraint_mod_point(sys, dm, cfg, gc, /*local=*/true, ds);
      },
      cfg.max_threads, "constraint-modification (invariant set)");
}

LearnResult learn_constraint_mod_global(const SystemModel& sys, const LabeledDataset& ds,
                                        const LearnConfig& cfg) {
  sys.validate();
  cfg.validate_for(LearnMethod::ConstraintMod, ModelClass::Global, ds.basis.n_h());
  if (!is_hurwitz(sys.a)) {
    throw InfeasibleError("constraint-modification: A is not Hurwitz");
  }
  DataMatrix dm = build_data_matrix(ds);
  const auto lbar = dm.n_h > 0 ? cfg.lbar_hx_grid : kUnused;
  auto grid = make_grid(lbar, kUnused, kUnused, cfg.gamma_bar_grid);
  return grid_search(
      grid,
      [&](const GridChoice& gc) {
        return solve_constraint_mod_point(sys, dm, cfg, gc, /*local=*/false, ds);
      },
      cfg.max_threads, "constraint-modification (ISS)");
}

namespace {

LearnResult unconstrained_from_dm(const DataMatrix& dm, const BasisLibrary& basis,
                                  const Mat& s_eta_l) {
  // Partitioned normal equations on the Gram matrix: features are the
  // (V_eta x, u, h) blocks, labels the remaining block. Rank deficiency falls
  // back to the minimum-norm solution.
  const int p = dm.n_veta + dm.l + dm.n_h;
  std::vector<int> feat;
  feat.reserve(p);
  for (int i = 0; i < dm.n_veta + dm.l; ++i) feat.push_back(i);
  for (int i = 0; i < dm.n_h; ++i) feat.push_back(dm.off_h() + i);
  Mat g(p, p), cross(p, dm.n_label);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) g(i, j) = dm.d(feat[i], feat[j]);
    for (int j = 0; j < dm.n_label; ++j) cross(i, j) = dm.d(feat[i], dm.off_label() + j);
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(g);
  Vec ev = es.eigenvalues();
  double cut = std::max(1e-12 * std::max(ev.maxCoeff(), 0.0), 1e-300);
  Mat ginv = Mat::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    if (ev(i) > cut)
      ginv += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / ev(i);
  }
  Mat theta_t = ginv * cross;  // p x n_label

  LearnResult res;
  res.model.theta_l = theta_t.topRows(dm.n_veta).transpose();
  res.model.b_l = theta_t.middleRows(dm.n_veta, dm.l).transpose();
  res.model.theta_n = dm.n_h > 0 ? Mat(theta_t.bottomRows(dm.n_h).transpose())
                                 : Mat::Zero(dm.n_label, 0);
  res.model.s_eta_l = s_eta_l;
  res.model.basis = basis;
  res.realized_cost = model_fit_cost(res.model, dm);
  res.cost_bound = res.realized_cost;
  res.diag.notes = "unconstrained least squares (no stability certificate)";
  return res;
}

}  // namespace

LearnResult learn_unconstrained(const LabeledDataset& ds) {
  DataMatrix dm = build_data_matrix(ds);
  // The caller wires the learned term back into the dynamics through the
  // system's uncertainty gain; left empty here since the dataset alone does
  // not carry it.
  return unconstrained_from_dm(dm, ds.basis, Mat());
}

LearnResult learn_unconstrained(const LabeledDataset& ds, const Mat& s_eta_l) {
  DataMatrix dm = build_data_matrix(ds);
  return unconstrained_from_dm(dm, ds.basis, s_eta_l);
}

LearnResult learn_unconstrained_lifted(const SystemModel& sys, const LabeledDataset& ds) {
  DataMatrix dm = build_data_matrix(ds).lifted(sys.s_eta);
  return unconstrained_from_dm(dm, ds.basis, Mat::Identity(sys.n(), sys.n()));
}

// ---------------------------------------------------------------------------
// Sequential convex refinement
// ---------------------------------------------------------------------------

namespace {

struct ScpContext {
  const SystemModel& sys;
  const DataMatrix& dm;
  const LearnConfig& cfg;
  Mat s_eta_l;
  double lbar_hx, lbar_hu, beta;
  bool local;
};

// Step 1: theta fixed, feasibility in (P, alpha, gamma). The quadratic terms
// P S S^T P of the original condition are Schur-reblocked so the problem is
// an LMI in P.
struct Step1Out {
  Mat p;
  bool feasible = false;
};

Step1Out scp_step1(const ScpContext& ctx, const UncertaintyModel& theta) {
  const SystemModel& sys = ctx.sys;
  const int n = sys.n();
  const int l = sys.l();
  const int n_el = theta.n_eta_l();
  const double coef_g = ctx.cfg.lip_g.x + ctx.cfg.lip_g.u;
  const double coef_h = ctx.lbar_hx + ctx.lbar_hu;

  Problem prob;
  VarRef p = prob.sym_var("P", n);
  VarRef alpha, gamma;
  if (ctx.local) {
    alpha = prob.scalar_var("alpha");
    gamma = prob.scalar_var("gamma");
  }

  std::vector<int> bdims{n};
  int u_cell = -1, one_cell = -1, g_cell = -1, h_cell = -1;
  int at = 1;
  if (ctx.local) {
    u_cell = at++;
    bdims.push_back(l);
    one_cell = at++;
    bdims.push_back(1);
  }
  if (coef_g > 0.0) {
    g_cell = at++;
    bdims.push_back(sys.n_g());
  }
  if (coef_h > 0.0) {
    h_cell = at++;
    bdims.push_back(n_el);
  }
  BlockForm bf(bdims);
  Mat a_cl = sys.a + ctx.s_eta_l * theta.theta_l * sys.v_eta;
  Expr m = symmetrize(Expr::term(p, Mat::Identity(n, n), a_cl));
  Mat m_const = ctx.cfg.lip_g.x * sys.v_g.transpose() * sys.v_g +
                ctx.lbar_hx * sys.v_eta.transpose() * sys.v_eta;
  if (m_const.cwiseAbs().maxCoeff() > 0.0) m = m + Expr::constant(m_const);
  if (ctx.local && ctx.beta != 0.0) {
    m = m + Expr::term(p, ctx.beta * Mat::Identity(n, n), Mat::Identity(n, n));
  }
  bf.set(0, 0, m);
  if (ctx.local) {
    bf.set(0, u_cell,
           Expr::term(p, Mat::Identity(n, n), sys.b_u + ctx.s_eta_l * theta.b_l));
    Mat u_const = (ctx.cfg.lip_g.u + ctx.lbar_hu) * Mat::Identity(l, l);
    Expr cell_uu = Expr::scalar_term(alpha, -ctx.cfg.input_set.shape().mat());
    if (u_const.cwiseAbs().maxCoeff() > 0.0) cell_uu = cell_uu + Expr::constant(u_const);
    bf.set(u_cell, u_cell, cell_uu);
    bf.set(one_cell, one_cell,
           Expr::scalar_term(alpha, Mat::Ones(1, 1)) +
               Expr::constant(-ctx.beta * Mat::Ones(1, 1)));
  }
  if (g_cell >= 0) {
    bf.set(0, g_cell, Expr::term(p, std::sqrt(coef_g) * Mat::Identity(n, n), sys.s_g));
    bf.set(g_cell, g_cell, Expr::constant(-Mat::Identity(sys.n_g(), sys.n_g())));
  }
  if (h_cell >= 0) {
    bf.set(0, h_cell, Expr::term(p, std::sqrt(coef_h) * Mat::Identity(n, n), ctx.s_eta_l));
    bf.set(h_cell, h_cell, Expr::constant(-Mat::Identity(n_el, n_el)));
  }
  prob.constrain(bf.assemble(), ctx.local ? Sense::Nsd : Sense::NsdStrict, "stability");
  if (ctx.local) {
    BlockForm sf({n, 1});
    sf.set(0, 0, Expr::scalar_term(gamma, ctx.cfg.state_set.shape().mat()) - Expr::var(p, n, n));
    sf.set(1, 1, Expr::constant(Mat::Ones(1, 1)) + Expr::scalar_term(gamma, -Mat::Ones(1, 1)));
    prob.constrain(sf.assemble(), Sense::Nsd, "set containment");
    prob.constrain(Expr::var(alpha, 1, 1), Sense::Psd, "alpha >= 0");
    prob.constrain(Expr::var(gamma, 1, 1), Sense::Psd, "gamma >= 0");
  }
  prob.constrain(Expr::var(p, n, n), Sense::PsdStrict, "P pd");

  auto sol = prob.solve(solver_options(ctx.cfg));
  Step1Out out;
  if (sol.feasible()) {
    out.feasible = true;
    out.p = sol.value("P");
  }
  return out;
}

struct Step2Out {
  bool feasible = false;
  UncertaintyModel theta;
  double cost_bound = 0.0;
  double alpha = 0.0, gamma = 0.0;
  std::vector<lmi::ConstraintResidual> residuals;
};

// Step 2: P fixed, minimize the fit cost over theta; the quadratic P-terms
// are constants now so the original conditions are affine in theta.
Step2Out scp_step2(const ScpContext& ctx, const Mat& p_fix, const BasisLibrary& basis) {
  const SystemModel& sys = ctx.sys;
  const int n = sys.n();
  const int l = sys.l();
  const int n_el = static_cast<int>(ctx.s_eta_l.cols());
  const int n_h = ctx.dm.n_h;
  const double coef_g = ctx.cfg.lip_g.x + ctx.cfg.lip_g.u;
  const double coef_h = ctx.lbar_hx + ctx.lbar_hu;

  Problem prob;
  VarRef theta_l = prob.rect_var("Theta_l", n_el, sys.n_veta());
  VarRef b_l = prob.rect_var("B_l", n_el, l);
  VarRef theta_n;
  if (n_h > 0) theta_n = prob.rect_var("Theta_n", n_el, n_h);
  VarRef w = prob.sym_var("W", n_el);
  VarRef alpha, gamma;
  if (ctx.local) {
    alpha = prob.scalar_var("alpha");
    gamma = prob.scalar_var("gamma");
  }

  Mat delta_const = sys.a.transpose() * p_fix + p_fix * sys.a +
                    ctx.cfg.lip_g.x * sys.v_g.transpose() * sys.v_g +
                    ctx.lbar_hx * sys.v_eta.transpose() * sys.v_eta +
                    coef_g * p_fix * sys.s_g * sys.s_g.transpose() * p_fix +
                    coef_h * p_fix * ctx.s_eta_l * ctx.s_eta_l.transpose() * p_fix;
  if (ctx.local) {
    BlockForm bf({n, l, 1});
    bf.set(0, 0,
           Expr::constant(delta_const + ctx.beta * p_fix) +
               symmetrize(Expr::term(theta_l, p_fix * ctx.s_eta_l, sys.v_eta)));
    bf.set(0, 1,
           Expr::constant(p_fix * sys.b_u) + Expr::term(b_l, p_fix * ctx.s_eta_l, Mat::Identity(l, l)));
    Mat u_const = (ctx.cfg.lip_g.u + ctx.lbar_hu) * Mat::Identity(l, l);
    Expr cell_uu = Expr::scalar_term(alpha, -ctx.cfg.input_set.shape().mat());
    if (u_const.cwiseAbs().maxCoeff() > 0.0) cell_uu = cell_uu + Expr::constant(u_const);
    bf.set(1, 1, cell_uu);
    bf.set(2, 2,
           Expr::scalar_term(alpha, Mat::Ones(1, 1)) +
               Expr::constant(-ctx.beta * Mat::Ones(1, 1)));
    prob.constrain(bf.assemble(), Sense::Nsd, "stability");

    BlockForm sf({n, 1});
    sf.set(0, 0, Expr::constant(Mat(-p_fix)) +
                     Expr::scalar_term(gamma, ctx.cfg.state_set.shape().mat()));
    sf.set(1, 1, Expr::constant(Mat::Ones(1, 1)) + Expr::scalar_term(gamma, -Mat::Ones(1, 1)));
    prob.constrain(sf.assemble(), Sense::Nsd, "set containment");
    prob.constrain(Expr::var(alpha, 1, 1), Sense::Psd, "alpha >= 0");
    prob.constrain(Expr::var(gamma, 1, 1), Sense::Psd, "gamma >= 0");
  } else {
    BlockForm bf({n});
    bf.set(0, 0, Expr::constant(delta_const) +
                     symmetrize(Expr::term(theta_l, p_fix * ctx.s_eta_l, sys.v_eta)));
    prob.constrain(bf.assemble(), Sense::NsdStrict, "stability");
  }
  if (n_h > 0 && ctx.cfg.lip_h.x > 0.0) {
    BlockForm bf({n_h, n_el});
    bf.set(0, 0, Expr::constant(ctx.lbar_hx * Mat::Identity(n_h, n_h)));
    bf.set(0, 1, ctx.cfg.lip_h.x * Expr::var(theta_n, n_el, n_h, /*transpose=*/true));
    bf.set(1, 1, Expr::constant(ctx.lbar_hx * Mat::Identity(n_el, n_el)));
    prob.constrain(bf.assemble(), Sense::Psd, "theta_n bound");
  }
  add_cost_epigraph_direct(prob, w, theta_l, b_l, theta_n, n_h > 0, factor_blocks(ctx.dm), n_el);
  prob.minimize(trace_of(w, n_el));

  auto sol = prob.solve(solver_options(ctx.cfg));
  Step2Out out;
  if (!sol.feasible()) return out;
  out.feasible = true;
  out.theta.theta_l = sol.value("Theta_l");
  out.theta.b_l = sol.value("B_l");
  out.theta.theta_n = n_h > 0 ? sol.value("Theta_n") : Mat::Zero(n_el, 0);
  out.theta.s_eta_l = ctx.s_eta_l;
  out.theta.basis = basis;
  out.cost_bound = sol.objective;
  if (ctx.local) {
    out.alpha = sol.scalar("alpha");
    out.gamma = sol.scalar("gamma");
  }
  out.residuals = sol.residuals;
  return out;
}

}  // namespace

LearnResult learn_scp(const SystemModel& sys, const LabeledDataset& ds, const LearnConfig& cfg,
                      const LearnResult& init) {
  sys.validate();
  require(init.model.theta_l.size() > 0, "learn_scp: initializer carries no model");
  const bool local = cfg.model_class == ModelClass::Local;
  if (local) check_local_sets(sys, cfg, "learn_scp");

  const bool lifted = init.model.n_eta_l() == sys.n();
  DataMatrix dm_raw = build_data_matrix(ds);
  DataMatrix dm = lifted ? dm_raw.lifted(sys.s_eta) : dm_raw;

  ScpContext ctx{sys, dm, cfg,
                 lifted ? Mat(Mat::Identity(sys.n(), sys.n())) : sys.s_eta,
                 0.0, 0.0, 0.0, local};
  std::string notes;
  if (init.certificate.has_value()) {
    ctx.lbar_hx = init.certificate->lbar_hx;
    ctx.beta = init.certificate->beta;
  } else {
    ctx.lbar_hx = dm.n_h > 0 ? cfg.lbar_hx_grid.front() : 0.0;
    ctx.beta = local ? cfg.beta_grid.front() : 0.0;
    notes = "initializer carries no certificate; scalars taken from the grid front. ";
  }
  if (dm.n_h == 0) ctx.lbar_hx = 0.0;
  ctx.lbar_hu = derived_lbar_hu(ctx.lbar_hx, cfg.lip_h);

  UncertaintyModel theta = init.model;
  if (theta.s_eta_l.size() == 0) theta.s_eta_l = ctx.s_eta_l;
  double j_prev = init.realized_cost;
  LearnResult res;
  int k = 0;
  for (k = 1; k <= cfg.scp_max_iters; ++k) {
    Step1Out s1 = scp_step1(ctx, theta);
    if (!s1.feasible) {
      throw InfeasibleError("scp: step 1 (Lyapunov shape with theta fixed) infeasible at iteration " +
                            std::to_string(k));
    }
    Step2Out s2 = scp_step2(ctx, s1.p, ds.basis);
    if (!s2.feasible) {
      throw InfeasibleError("scp: step 2 (theta with shape fixed) infeasible at iteration " +
                            std::to_string(k));
    }
    double j_k = model_fit_cost(s2.theta, dm);
    if (j_k > j_prev + 1e-8 * (1.0 + std::abs(j_prev))) {
      throw NumericalError("scp: cost increased across step 2 (" + std::to_string(j_prev) +
                           " -> " + std::to_string(j_k) + ")");
    }
    theta = s2.theta;
    ModelCertificate cert;
    cert.kind = local ? ModelCertificate::Kind::InvariantSet : ModelCertificate::Kind::Iss;
    cert.p = SymMatrix(s1.p);
    cert.alpha = s2.alpha;
    cert.beta = ctx.beta;
    cert.gamma = s2.gamma;
    cert.lbar_hx = ctx.lbar_hx;
    cert.margin = cfg.strict_margin;
    res.certificate = cert;
    res.cost_bound = s2.cost_bound;
    res.diag.residuals = s2.residuals;
    bool converged = std::abs(j_k - j_prev) <= cfg.scp_rtol * (1.0 + std::abs(j_k));
    j_prev = j_k;
    if (converged) break;
  }
  res.model = theta;
  res.realized_cost = j_prev;
  res.chosen = {ctx.lbar_hx, ctx.beta, 0.0, 0.0};
  res.diag.scp_iterations = std::min(k, cfg.scp_max_iters);
  res.diag.notes = notes + "sequential refinement of the nonconvex program";
  return res;
}

namespace detail {

lmi::CompiledProblem compile_cost_mod_global(const SystemModel& sys, const DataMatrix& dm,
                                             const LearnConfig& cfg, const GridChoice& gc) {
  CostModVars v;
  Problem prob = build_cost_mod(sys, dm, cfg, gc, /*local=*/false, v);
  return prob.compile(solver_options(cfg));
}

lmi::CompiledProblem compile_constraint_mod_global(const SystemModel& sys, const DataMatrix& dm,
                                                   const LearnConfig& cfg, const GridChoice& gc) {
  ConstraintModVars v;
  Problem prob = build_constraint_mod(sys, dm, cfg, gc, /*local=*/false, v);
  return prob.compile(solver_options(cfg));
}

}  // namespace detail

}  // namespace modup
