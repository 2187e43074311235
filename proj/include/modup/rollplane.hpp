#pragma once

#include "modup/estimator.hpp"
#include "modup/learning.hpp"
#include "modup/model.hpp"
#include "modup/ode.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace modup {

/// Four-degree-of-freedom vehicle roll-plane parameters (sprung mass on two
/// suspensions over two tires). Stiffness in N/m, damping in N s/m, masses in
/// kg, lengths in m.
struct RollPlaneParams {
  double body_mass = 580.0;
  double tire_mass_1 = 36.26;
  double tire_mass_2 = 36.26;
  double roll_inertia = 63.3316;
  double track_length = 1.524;
  double damping_1 = 710.70;
  double damping_2 = 710.70;
  double damping_nl_1 = 0.71;
  double damping_nl_2 = 0.71;
  double spring_1 = 19357.2;
  double spring_2 = 19357.2;
  double tire_spring_1 = 96319.76;
  double tire_spring_2 = 96319.76;
  double spring_cubic_1 = 15000.0;
  double spring_cubic_2 = 15000.0;
  double spring_uncertainty_1 = 5807.2;
  double spring_uncertainty_2 = 5807.2;

  void validate() const;
};

/// State ordering (q1..q4, q1dot..q4dot); outputs are the relative
/// displacements and velocities between the roll bar and the tires. The
/// known nonlinearity is a tanh damper on the relative velocities; the true
/// uncertainty (used only to generate data) is the stiffness error plus the
/// cubic spring on the relative displacements.
SystemModel build_roll_plane(const RollPlaneParams& params = {});

struct ExperimentSpec {
  int train_sets = 5;
  int test_sets = 200;
  std::vector<std::string> basis_tags{"cubic"};
  std::uint64_t seed = 1;
  double t_f = 20.0;
  double dt = 1e-3;
  double noise_level = 0.0;  // measurement-noise amplitude (m); 0 disables

  EstimatorConfig estimator;
  double transient_cut = 2.0;
  int decimation = 10;

  LearnConfig learn;       // grids and tolerances; sets and slopes filled in
  bool run_scp = true;
  double inflation = 1.05;
  int max_threads = 0;

  void validate() const;
};

struct MethodStats {
  std::string name;
  std::vector<double> errors;  // per test set, aligned with test indices
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  int failures = 0;  // test sets where this model diverged
};

struct ExperimentReport {
  std::vector<MethodStats> methods;
  Ellipsoid state_set, input_set;
  LipschitzPair lip_g, lip_h;
  GainBoundReport filter_gains;
  LearnResult unconstrained;
  LearnResult cost_mod;
  LearnResult scp;
  int training_samples = 0;
  std::string notes;

  const MethodStats& method(const std::string& name) const;
};

/// Full benchmark protocol: excite the true plant with seeded multisines,
/// estimate uncertainty/state trajectories with the synthesized filter, learn
/// uncertainty models (unconstrained, stability-constrained, sequentially
/// refined), then score every model by the accumulated output error on fresh
/// test inputs.
ExperimentReport run_experiment(const ExperimentSpec& spec);

/// Uniform bins over [0, max(values)]; counts sum to the sample count.
std::vector<int> histogram(const std::vector<double>& values, int bins);

}  // namespace modup
