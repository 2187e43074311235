#pragma once

#include "modup/dataset.hpp"
#include "modup/model.hpp"
#include "modup/ode.hpp"

#include <cmath>
#include <cstdint>

namespace modup {

/// Plant state augmented with an r-stage integrator chain whose first stage
/// is the uncertainty signal; the chain's last derivative enters as a
/// disturbance. Block companion layout:
///   A_a = [[A, S_eta, 0], [0, 0, I], [0, 0, 0]],  C_a = [C, 0].
struct AugmentedSystem {
  Mat a_a;        // n_z x n_z
  Mat b_ua;       // n_z x l
  Mat s_ga;       // n_z x n_g
  Mat v_ga;       // n_vg x n_z
  Mat b_omega_a;  // n_z x (n_omega + n_eta)
  Mat c_a;        // m x n_z
  Mat v_eta_a;    // n_veta x n_z
  int r = 1;
  int n = 0;
  int n_eta = 0;

  int d_n() const { return (r - 1) * n_eta; }
  int n_z() const { return n + r * n_eta; }
  Mat c_bar1() const;   // selects the uncertainty stage: [0 I 0]
  Mat c_bar2() const;   // selects the plant state: [I 0]
  Mat c_bar_a() const;  // stacked reconstruction selector
};

AugmentedSystem augment(const SystemModel& sys, int r);

struct EstimatorConfig {
  int r = 3;
  double a = 1.0;         // trades decay rate against the attenuation level
  double b = 1.0;         // noise-channel weight (nonzero)
  double sigma_max = 1e3;
  double solver_tol = 1e-8;
  double strict_margin = 1e-7;

  void validate() const;
};

/// Uncertainty-state observer
///   zdot = N z + G u + L y + M S_ga g(V_ga xhat_a + H (y - C_a xhat_a), u),
///   xhat_a = z - E y,  etahat = Cbar1 xhat_a,  xhat = Cbar2 xhat_a,
/// with N = M A_a - K C_a, M = I + E C_a, G = M B_ua,
/// L = K (I + C_a E) - M A_a E.
struct EstimatorFilter {
  Mat e, k, h;        // design gains
  Mat n, m, g, l;     // derived filter matrices
  Mat c_a, s_ga, v_ga, b_ua, b_omega_a, d_nu;
  Mat c_bar1, c_bar2, c_bar_a;
  SystemModel::Nonlinearity g_fn;
  int n_z = 0;
  int r = 1;

  double rho = 0.0;    // certified squared L2 gain (omega, eta^(r)) -> e_d
  double sigma = 0.0;  // certified peak factor
  double b = 1.0;

  double l2_gain_bound() const { return std::sqrt(rho); }
  double energy_to_peak_bound() const { return std::sqrt(b * sigma); }
};

EstimatorFilter make_filter(const SystemModel& sys, const AugmentedSystem& aug, const Mat& e,
                            const Mat& k, const Mat& h, double rho, double sigma, double b);

/// Synthesizes the observer gains by the robust-filter semidefinite program:
/// minimizes the L2 gain from the augmented disturbance to the estimation
/// error subject to an ISS certificate and an energy-to-peak cap on the noise
/// channel. Throws InfeasibleError when the program has no solution.
EstimatorFilter design_filter(const SystemModel& sys, const AugmentedSystem& aug,
                              const EstimatorConfig& cfg);

struct FilterRun {
  std::vector<double> times;
  std::vector<Vec> eta_hat;
  std::vector<Vec> x_hat;
  std::vector<Vec> inputs;
};

FilterRun run_filter(const EstimatorFilter& f, const Signal& u, const Signal& y, const Vec& z0,
                     double t_f, double dt);
/// Runs on measured data: inputs/outputs of the trajectory drive the filter
/// on the same grid (linear interpolation at half steps).
FilterRun run_filter(const EstimatorFilter& f, const Trajectory& data, const Vec& z0);

/// Packages filter outputs as training data, dropping the transient and
/// decimating. Throws ConfigError when nothing is left after the cut.
LabeledDataset make_labeled_dataset(const FilterRun& run, const BasisLibrary& basis,
                                    const Mat& v_eta, double transient_cut, int decimation);

struct GainBoundReport {
  int trials = 0;
  double l2_ratio_max = 0.0;    // ||e_d||_L2 / ||omega_a||_L2, disturbance runs
  double peak_ratio_max = 0.0;  // sup_t ||e_d|| / ||nu_a||_L2, noise runs
  double l2_bound = 0.0;
  double peak_bound = 0.0;
  bool pass(double tol = 1e-9) const {
    return l2_ratio_max <= l2_bound + tol && peak_ratio_max <= peak_bound + tol;
  }
};

/// Monte-Carlo lower bound on the certified gains: simulates the estimation
/// error dynamics from zero error under random smooth disturbances (noise off)
/// and random smooth noise (disturbances off) and compares the empirical
/// ratios against the certificates.
GainBoundReport verify_gain_bounds(const EstimatorFilter& f, const AugmentedSystem& aug,
                                   int trials, double t_f, double dt, std::uint64_t seed);

}  // namespace modup
