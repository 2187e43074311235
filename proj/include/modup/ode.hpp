#pragma once

#include "modup/common.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace modup {

/// Time-indexed record of one simulation on a uniform grid.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  std::vector<Vec> outputs;  // empty when no output map was supplied
  std::uint64_t seed = 0;
  std::string model_id;

  std::size_t size() const { return times.size(); }
  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
};

using Signal = std::function<Vec(double)>;

struct IntegrateOptions {
  double divergence_guard = 1e12;  // throw when any |state| exceeds this
  const Mat* output = nullptr;     // y = C x recorded when given
};

/// Classic fixed-step fourth-order Runge-Kutta for xdot = rhs(x, u(t)).
Trajectory integrate(const std::function<Vec(const Vec&, const Vec&)>& rhs, const Vec& x0,
                     const Signal& u, double t_f, double dt,
                     const IntegrateOptions& opts = {});

/// Linear interpolation of a sampled signal (zero-order hold past the ends).
Signal interpolate_signal(const std::vector<double>& times, const std::vector<Vec>& values);

/// Sum over grid points of the Euclidean norm of the output difference.
double output_error(const Trajectory& sys, const Trajectory& model);
double output_error(const std::vector<Vec>& y_sys, const std::vector<Vec>& y_model);

struct MultisineSpec {
  double amp_lo = 0.01, amp_hi = 0.1;          // m
  double freq_lo = 0.6 * 3.14159265358979323846,
         freq_hi = 3.0 * 3.14159265358979323846;  // rad/s
  double phase_lo = 0.0, phase_hi = 0.94 * 3.14159265358979323846;  // rad
  int count_lo = 2, count_hi = 10;
  double t_f = 20.0;
  std::uint64_t seed = 0;
  int channels = 2;
  int active_channel = 0;  // remaining channels stay identically zero

  void validate() const;
};

/// Normalized sum of sinusoids on one channel:
///   u_a(t) = (max a_i / sum a_i) * sum_i a_i sin(w_i t + p_i)
/// so the peak never exceeds the largest drawn amplitude.
struct MultisineSignal {
  std::vector<double> amp, freq, phase;
  double norm_coeff = 1.0;
  int channels = 1;
  int active_channel = 0;

  Vec operator()(double t) const;
  double scalar(double t) const;
};

MultisineSignal generate_multisine(const MultisineSpec& spec);

}  // namespace modup
