#pragma once

#include "modup/dataset.hpp"
#include "modup/ellipsoid.hpp"
#include "modup/lmi.hpp"
#include "modup/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace modup {

enum class ModelClass { Local, Global };  // invariant-set vs ISS guarantee
enum class LearnMethod { CostMod, ConstraintMod, Scp, Unconstrained };

/// Hyperparameters of the stability-constrained programs. The scalar knobs
/// are tuned by a full line-search scan over logarithmic grids; each method
/// consumes the subset it needs.
struct LearnConfig {
  ModelClass model_class = ModelClass::Local;
  LearnMethod method = LearnMethod::CostMod;

  std::vector<double> lbar_hx_grid{1e-2, 1e-1, 1.0, 1e1, 1e2};
  std::vector<double> beta_grid{1e-3, 1e-2, 1e-1, 1.0, 1e1};
  std::vector<double> mu_grid{1e-2, 1e-1, 1.0, 1e1, 1e2};  // mu1 = mu2 = mu3
  std::vector<double> gamma_bar_grid{1e-1, 1.0, 1e1, 1e2};

  Ellipsoid state_set;  // F (local class)
  Ellipsoid input_set;  // U (local class)
  LipschitzPair lip_g;
  LipschitzPair lip_h;

  double strict_margin = 1e-7;
  double solver_tol = 1e-8;
  int scp_max_iters = 20;
  double scp_rtol = 1e-4;
  int max_threads = 0;

  void validate_for(LearnMethod method, ModelClass klass, int n_h) const;
};

struct GridChoice {
  double lbar_hx = 0.0;
  double beta = 0.0;
  double mu = 0.0;
  double gamma_bar = 0.0;
};

struct LearnDiagnostics {
  int grid_points_tried = 0;
  int grid_points_feasible = 0;
  std::vector<lmi::ConstraintResidual> residuals;  // at the chosen grid point
  double duality_gap = 0.0;
  int newton_iterations = 0;
  int scp_iterations = 0;
  std::string notes;
};

struct LearnResult {
  UncertaintyModel model;
  std::optional<ModelCertificate> certificate;
  double cost_bound = 0.0;     // tr(W*) of the chosen program
  double realized_cost = 0.0;  // J(theta*) re-evaluated on the data matrix
  GridChoice chosen;
  LearnDiagnostics diag;
};

/// lbar_hu derived from lbar_hx; zero slope when the basis has no state
/// slope at all (removes the 0/0 the ratio would otherwise produce).
inline double derived_lbar_hu(double lbar_hx, const LipschitzPair& lip_h) {
  return lip_h.x > 0.0 ? lbar_hx * lip_h.u / lip_h.x : 0.0;
}

/// Invariant-set learning via change of variables (S = P Theta_l, R = P B_l,
/// Z = P Theta_n) and a rewritten cost; the learned term enters every state
/// equation directly (S_eta_l = I). Throws InfeasibleError when no grid point
/// is feasible.
LearnResult learn_cost_mod_local(const SystemModel& sys, const LabeledDataset& ds,
                                 const LearnConfig& cfg);

/// ISS learning, same change of variables; no state/input sets needed.
LearnResult learn_cost_mod_global(const SystemModel& sys, const LabeledDataset& ds,
                                  const LearnConfig& cfg);

/// Invariant-set learning keeping theta as decision variables; the stability
/// condition is replaced by a sufficient linear condition (Young bound) in
/// Q = P^{-1}, and the uncertainty structure S_eta_l = S_eta is kept.
/// Requires A Hurwitz.
LearnResult learn_constraint_mod_local(const SystemModel& sys, const LabeledDataset& ds,
                                       const LearnConfig& cfg);

/// ISS counterpart of the above. Requires A Hurwitz.
LearnResult learn_constraint_mod_global(const SystemModel& sys, const LabeledDataset& ds,
                                        const LearnConfig& cfg);

/// Exact unconstrained minimizer of the fit cost (closed-form least squares
/// on the partitioned normal equations); no stability certificate. Labels are
/// the raw uncertainty estimates. The bare overload leaves the model's
/// uncertainty gain empty (the dataset does not carry it); pass the system's
/// S_eta to obtain a simulatable model.
LearnResult learn_unconstrained(const LabeledDataset& ds);
LearnResult learn_unconstrained(const LabeledDataset& ds, const Mat& s_eta_l);

/// Unconstrained least squares in state-equation units (labels S_eta * eta,
/// S_eta_l = I): the cost-modification methods optimize in this space, so
/// this is their dominance baseline.
LearnResult learn_unconstrained_lifted(const SystemModel& sys, const LabeledDataset& ds);

/// Sequential convex refinement of the original nonconvex program by
/// alternating (1) a feasibility solve in the Lyapunov shape with theta
/// fixed and (2) a cost minimization over theta with the shape fixed. The
/// label convention and scalars are inherited from the initializer.
LearnResult learn_scp(const SystemModel& sys, const LabeledDataset& ds, const LearnConfig& cfg,
                      const LearnResult& init);

bool is_hurwitz(const Mat& a);

namespace detail {
/// Compiled main stability block of the ISS programs, exposed so tests can
/// check the zero-Lipschitz collapse blockwise.
lmi::CompiledProblem compile_cost_mod_global(const SystemModel& sys, const DataMatrix& dm,
                                             const LearnConfig& cfg, const GridChoice& gc);
lmi::CompiledProblem compile_constraint_mod_global(const SystemModel& sys, const DataMatrix& dm,
                                                   const LearnConfig& cfg, const GridChoice& gc);
}  // namespace detail

}  // namespace modup
