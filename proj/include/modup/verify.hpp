#pragma once

#include "modup/ellipsoid.hpp"
#include "modup/learning.hpp"
#include "modup/model.hpp"

#include <string>
#include <vector>

namespace modup {

struct ConditionCheck {
  std::string name;
  double lambda_max = 0.0;  // recomputed, never copied from a solver
  double tolerance = 0.0;
  bool pass = false;
};

struct Certificate {
  bool pass = false;
  ModelCertificate::Kind kind = ModelCertificate::Kind::InvariantSet;
  SymMatrix p;
  double alpha = 0.0, beta = 0.0, gamma = 0.0, lbar_hx = 0.0;
  std::vector<ConditionCheck> checks;

  std::string summary() const;
};

/// The original quadratic stability form
///   Delta = A'P + PA + sym(P S_el Theta_l V_eta)
///         + (l_gx + l_gu) P S_g S_g' P + (lbar_hx + lbar_hu) P S_el S_el' P
///         + l_gx V_g' V_g + lbar_hx V_eta' V_eta,
/// assembled directly from raw matrices (no shared code with the learning
/// programs' block assembly).
Mat stability_quadratic_form(const SystemModel& sys, const UncertaintyModel& theta,
                             const Mat& p, double lbar_hx, double lbar_hu,
                             const LipschitzPair& lip_g);

/// Post-hoc invariant-set certification: the block S-procedure condition, the
/// set containment block, and the nonlinear-parameter norm bound, each
/// evaluated by eigenvalues at tolerance 2 * margin (scaled by block size).
Certificate check_invariant_set(const SystemModel& sys, const UncertaintyModel& theta,
                                const SymMatrix& p, double alpha, double beta, double gamma,
                                double lbar_hx, const LipschitzPair& lip_g,
                                const LipschitzPair& lip_h, const Ellipsoid& state_set,
                                const Ellipsoid& input_set, double margin);

/// Post-hoc ISS certification: the quadratic form must be negative definite
/// with margin, plus the nonlinear-parameter norm bound.
Certificate check_iss(const SystemModel& sys, const UncertaintyModel& theta, const SymMatrix& p,
                      double lbar_hx, const LipschitzPair& lip_g, const LipschitzPair& lip_h,
                      double margin);

/// Re-verifies a learning result against the original conditions using the
/// scalars recorded in its certificate.
Certificate verify_learn_result(const SystemModel& sys, const LearnResult& result,
                                const LipschitzPair& lip_g, const LipschitzPair& lip_h,
                                const Ellipsoid& state_set, const Ellipsoid& input_set);

struct IssSimReport {
  int trials = 0;
  int divergences = 0;
  double max_final_norm = 0.0;
  double max_norm = 0.0;
  bool vacuous = false;
  bool pass() const { return !vacuous && divergences == 0; }
};

/// Simulates the certified model from random initial states under bounded
/// inputs; bounded responses (and decay to a ball) are the observable ISS
/// footprint.
IssSimReport iss_bound_simulation(const ExtendedModel& model, int trials, double t_f, double dt,
                                  std::uint64_t seed);

}  // namespace modup
