#include "modup/ode.hpp"

#include <algorithm>
#include <cmath>

#include "modup/rng.hpp"

namespace modup {

Trajectory integrate(const std::function<Vec(const Vec&, const Vec&)>& rhs, const Vec& x0,
                     const Signal& u, double t_f, double dt, const IntegrateOptions& opts) {
  require(dt > 0.0 && t_f >= dt, "integrate: need dt > 0 and t_f >= dt");
  const int steps = static_cast<int>(std::llround(t_f / dt));
  Trajectory tr;
  tr.times.reserve(steps + 1);
  tr.states.reserve(steps + 1);
  tr.inputs.reserve(steps + 1);

  Vec x = x0;
  auto guard = [&](const Vec& v, double t) {
    if (!v.allFinite() || v.cwiseAbs().maxCoeff() > opts.divergence_guard) {
      throw NumericalError("integrate: state diverged at t = " + std::to_string(t));
    }
  };
  for (int k = 0; k <= steps; ++k) {
    double t = k * dt;
    Vec uk = u(t);
    guard(x, t);
    tr.times.push_back(t);
    tr.states.push_back(x);
    tr.inputs.push_back(uk);
    if (opts.output) tr.outputs.push_back((*opts.output) * x);
    if (k == steps) break;

    Vec um = u(t + 0.5 * dt);
    Vec ue = u(t + dt);
    Vec k1 = rhs(x, uk);
    Vec k2 = rhs(x + 0.5 * dt * k1, um);
    Vec k3 = rhs(x + 0.5 * dt * k2, um);
    Vec k4 = rhs(x + dt * k3, ue);
    x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return tr;
}

Signal interpolate_signal(const std::vector<double>& times, const std::vector<Vec>& values) {
  require(!times.empty() && times.size() == values.size(),
          "interpolate_signal: empty or mismatched samples");
  return [times, values](double t) -> Vec {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t hi = static_cast<std::size_t>(it - times.begin());
    std::size_t lo = hi - 1;
    double span = times[hi] - times[lo];
    double w = span > 0.0 ? (t - times[lo]) / span : 0.0;
    return (1.0 - w) * values[lo] + w * values[hi];
  };
}

double output_error(const std::vector<Vec>& y_sys, const std::vector<Vec>& y_model) {
  require(y_sys.size() == y_model.size(), "output_error: grid mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < y_sys.size(); ++k) {
    require(y_sys[k].size() == y_model[k].size(), "output_error: output dim mismatch");
    total += (y_sys[k] - y_model[k]).norm();
  }
  return total;
}

double output_error(const Trajectory& sys, const Trajectory& model) {
  require(sys.times.size() == model.times.size(), "output_error: grid mismatch");
  for (std::size_t k = 0; k < sys.times.size(); ++k) {
    require(std::abs(sys.times[k] - model.times[k]) <= 1e-12 * (1.0 + std::abs(sys.times[k])),
            "output_error: grids differ");
  }
  return output_error(sys.outputs, model.outputs);
}

void MultisineSpec::validate() const {
  require(amp_hi >= amp_lo && freq_hi >= freq_lo && phase_hi >= phase_lo,
          "multisine: empty parameter range");
  require(count_lo >= 1 && count_hi >= count_lo, "multisine: bad component count range");
  require(t_f > 0.0, "multisine: t_f must be positive");
  require(channels >= 1 && active_channel >= 0 && active_channel < channels,
          "multisine: bad channel layout");
}

double MultisineSignal::scalar(double t) const {
  double s = 0.0;
  for (std::size_t i = 0; i < amp.size(); ++i) s += amp[i] * std::sin(freq[i] * t + phase[i]);
  return norm_coeff * s;
}

Vec MultisineSignal::operator()(double t) const {
  Vec u = Vec::Zero(channels);
  u(active_channel) = scalar(t);
  return u;
}

MultisineSignal generate_multisine(const MultisineSpec& spec) {
  spec.validate();
  RandomStream rs(spec.seed);
  MultisineSignal sig;
  sig.channels = spec.channels;
  sig.active_channel = spec.active_channel;
  int count = rs.uniform_int(spec.count_lo, spec.count_hi);
  sig.amp.resize(count);
  sig.freq.resize(count);
  sig.phase.resize(count);
  for (int i = 0; i < count; ++i) sig.amp[i] = rs.uniform(spec.amp_lo, spec.amp_hi);
  for (int i = 0; i < count; ++i) sig.freq[i] = rs.uniform(spec.freq_lo, spec.freq_hi);
  for (int i = 0; i < count; ++i) sig.phase[i] = rs.uniform(spec.phase_lo, spec.phase_hi);
  double amax = *std::max_element(sig.amp.begin(), sig.amp.end());
  double asum = 0.0;
  for (double a : sig.amp) asum += a;
  sig.norm_coeff = asum > 0.0 ? amax / asum : 0.0;
  return sig;
}

}  // namespace modup
