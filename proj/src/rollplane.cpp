#include "modup/rollplane.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "modup/rng.hpp"
#include "modup/verify.hpp"

namespace modup {

void RollPlaneParams::validate() const {
  for (double v : {body_mass, tire_mass_1, tire_mass_2, roll_inertia, track_length, damping_1,
                   damping_2, damping_nl_1, damping_nl_2, spring_1, spring_2, tire_spring_1,
                   tire_spring_2, spring_cubic_1, spring_cubic_2, spring_uncertainty_1,
                   spring_uncertainty_2}) {
    if (v <= 0.0) throw ConfigError("RollPlaneParams: all parameters must be positive");
  }
}

SystemModel build_roll_plane(const RollPlaneParams& p) {
  p.validate();
  const double hl = 0.5 * p.track_length;

  Mat mass(4, 4);
  mass << 0.5 * p.body_mass, 0.5 * p.body_mass, 0, 0,
      -p.roll_inertia / p.track_length, p.roll_inertia / p.track_length, 0, 0,
      0, 0, p.tire_mass_1, 0,
      0, 0, 0, p.tire_mass_2;

  Mat stiff(4, 4);
  stiff << p.spring_1, p.spring_2, -p.spring_1, -p.spring_2,
      -hl * p.spring_1, hl * p.spring_2, hl * p.spring_1, -hl * p.spring_2,
      -p.spring_1, 0, p.spring_1 + p.tire_spring_1, 0,
      0, -p.spring_2, 0, p.spring_2 + p.tire_spring_2;

  Mat damp(4, 4);
  damp << p.damping_1, p.damping_2, -p.damping_1, -p.damping_2,
      -hl * p.damping_1, hl * p.damping_2, hl * p.damping_1, -hl * p.damping_2,
      -p.damping_1, 0, p.damping_1, 0,
      0, -p.damping_2, 0, p.damping_2;

  Mat k_u(4, 2);
  k_u << 0, 0, 0, 0, p.tire_spring_1, 0, 0, p.tire_spring_2;

  Mat s_tilde(4, 2);
  s_tilde << 1, 1, -hl, hl, -1, 0, 0, -1;

  Mat sel(2, 4);
  sel << 1, 0, -1, 0, 0, 1, 0, -1;

  Eigen::FullPivLU<Mat> lu(mass);
  if (!lu.isInvertible()) throw NumericalError("build_roll_plane: singular mass matrix");

  SystemModel sys;
  sys.a = Mat::Zero(8, 8);
  sys.a.topRightCorner(4, 4).setIdentity();
  sys.a.bottomLeftCorner(4, 4) = -lu.solve(stiff);
  sys.a.bottomRightCorner(4, 4) = -lu.solve(damp);

  sys.b_u = Mat::Zero(8, 2);
  sys.b_u.bottomRows(4) = lu.solve(k_u);

  Mat s_block = Mat::Zero(8, 2);
  s_block.bottomRows(4) = -lu.solve(s_tilde);
  sys.s_g = s_block;
  sys.s_eta = s_block;

  sys.v_g = Mat::Zero(2, 8);
  sys.v_g.rightCols(4) = 10.0 * sel;
  sys.v_eta = Mat::Zero(2, 8);
  sys.v_eta.leftCols(4) = sel;

  sys.c = Mat::Zero(4, 8);
  sys.c.topLeftCorner(2, 4) = sel;
  sys.c.bottomRightCorner(2, 4) = sel;
  sys.d_nu = Mat::Identity(4, 4);
  sys.b_omega = Mat::Zero(8, 0);

  const double g_amp = 0.2 * p.damping_nl_1;
  sys.g = [g_amp](const Vec& s, const Vec&) -> Vec {
    return g_amp * s.array().tanh().matrix();
  };
  sys.lip_g = {g_amp, 0.0};
  sys.g_tag = "scaled-tanh " + std::to_string(g_amp);

  const double dk = p.spring_uncertainty_1;
  const double kn = p.spring_cubic_1;
  sys.eta_true = [dk, kn](const Vec& s, const Vec&) -> Vec {
    return dk * s + kn * s.array().cube().matrix();
  };
  sys.eta_tag = "spring-cubic " + std::to_string(dk) + " " + std::to_string(kn);

  sys.validate();
  return sys;
}

void ExperimentSpec::validate() const {
  if (train_sets < 1 || test_sets < 1) throw ConfigError("ExperimentSpec: positive set counts");
  if (t_f <= 0.0 || dt <= 0.0) throw ConfigError("ExperimentSpec: positive horizon and step");
  if (decimation < 1) throw ConfigError("ExperimentSpec: decimation >= 1");
  if (inflation < 1.0) throw ConfigError("ExperimentSpec: inflation >= 1");
  estimator.validate();
}

namespace {

Signal noisy_output_off(const Signal& clean) { return clean; }

/// Per-block analytic Lipschitz slopes of the basis over the state set:
/// ranges of each selector row over the ellipsoid give the slope of the
/// cubic/quadratic/exponential blocks; stacked blocks combine in quadrature.
LipschitzPair basis_lipschitz(const BasisLibrary& basis, const Ellipsoid& state_set,
                              const Mat& v_eta) {
  if (basis.n_h() == 0) return {0.0, 0.0};
  Eigen::SelfAdjointEigenSolver<Mat> es(state_set.shape().mat());
  // max of v' x over the (possibly degenerate) set along spanned directions
  double r = 0.0;
  for (int j = 0; j < v_eta.rows(); ++j) {
    Vec v = v_eta.row(j).transpose();
    double acc = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
      double lam = es.eigenvalues()(i);
      if (lam > 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())) {
        double c = v.dot(es.eigenvectors().col(i));
        acc += c * c / lam;
      }
    }
    r = std::max(r, std::sqrt(acc));
  }
  double sumsq = 0.0;
  for (const auto& tag : basis.tags) {
    double slope = 0.0;
    if (tag == "cubic") slope = 3.0 * r * r;
    if (tag == "quad") slope = 2.0 * r;
    if (tag == "expm1") slope = std::exp(r);
    sumsq += slope * slope;
  }
  return {std::sqrt(sumsq), 0.0};
}

MethodStats finalize_stats(std::string name, std::vector<double> errors, int failures) {
  MethodStats st;
  st.name = std::move(name);
  st.errors = std::move(errors);
  st.failures = failures;
  if (!st.errors.empty()) {
    std::vector<double> sorted = st.errors;
    std::sort(sorted.begin(), sorted.end());
    st.median = sorted[sorted.size() / 2];
    st.max = sorted.back();
    double s = 0.0;
    for (double e : sorted) s += e;
    st.mean = s / static_cast<double>(sorted.size());
  }
  return st;
}

}  // namespace

const MethodStats& ExperimentReport::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.name == name) return m;
  }
  throw DimensionError("ExperimentReport: no method named " + name);
}

std::vector<int> histogram(const std::vector<double>& values, int bins) {
  require(bins >= 1, "histogram: need at least one bin");
  require(!values.empty(), "histogram: empty input");
  double hi = *std::max_element(values.begin(), values.end());
  std::vector<int> counts(bins, 0);
  if (hi <= 0.0) {
    counts[0] = static_cast<int>(values.size());
    return counts;
  }
  for (double v : values) {
    int b = static_cast<int>(std::floor(v / hi * bins));
    if (b >= bins) b = bins - 1;
    if (b < 0) b = 0;
    ++counts[b];
  }
  return counts;
}

ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentReport rep;
  SystemModel sys = build_roll_plane();
  const Mat out_map = sys.c;

  // Training data from the true plant.
  auto make_input = [&](const std::string& stream, int k) {
    MultisineSpec ms;
    ms.t_f = spec.t_f;
    ms.channels = 2;
    ms.active_channel = 0;
    ms.seed = RandomStream::derive(spec.seed, stream + "-" + std::to_string(k));
    return generate_multisine(ms);
  };
  auto simulate_true = [&](const MultisineSignal& u) {
    IntegrateOptions io;
    io.output = &out_map;
    auto rhs = [&](const Vec& x, const Vec& uu) {
      return eval_system_rhs(sys, x, uu, Vec::Zero(0));
    };
    return integrate(rhs, Vec::Zero(8), [&u](double t) { return u(t); }, spec.t_f, spec.dt, io);
  };

  std::vector<Trajectory> train(spec.train_sets);
  std::vector<MultisineSignal> train_u;
  for (int k = 0; k < spec.train_sets; ++k) train_u.push_back(make_input("train-input", k));
  parallel_for(spec.train_sets, [&](int k) { train[k] = simulate_true(train_u[k]); },
               spec.max_threads);

  // Optional band-limited measurement noise on the filter's inputs.
  std::vector<Signal> train_y(spec.train_sets);
  for (int k = 0; k < spec.train_sets; ++k) {
    Signal clean = interpolate_signal(train[k].times, train[k].outputs);
    if (spec.noise_level > 0.0) {
      MultisineSpec ns;
      ns.t_f = spec.t_f;
      ns.channels = 1;
      ns.amp_lo = 0.2 * spec.noise_level;
      ns.amp_hi = spec.noise_level;
      ns.freq_lo = 6.0;
      ns.freq_hi = 60.0;
      std::vector<MultisineSignal> chans;
      for (int c = 0; c < sys.m(); ++c) {
        ns.seed = RandomStream::derive(spec.seed, "measurement-noise-" + std::to_string(k) +
                                                      "-" + std::to_string(c));
        chans.push_back(generate_multisine(ns));
      }
      train_y[k] = [clean, chans](double t) {
        Vec y = clean(t);
        for (std::size_t c = 0; c < chans.size(); ++c) y(static_cast<int>(c)) += chans[c].scalar(t);
        return y;
      };
    } else {
      train_y[k] = noisy_output_off(clean);
    }
  }

  // Uncertainty-state estimation.
  AugmentedSystem aug = augment(sys, spec.estimator.r);
  EstimatorFilter filter = design_filter(sys, aug, spec.estimator);
  rep.filter_gains = verify_gain_bounds(filter, aug, 5, 5.0, spec.dt, spec.seed + 13);

  BasisLibrary basis = BasisLibrary::from_tags(spec.basis_tags, sys.n_veta());
  LabeledDataset pooled;
  pooled.basis = basis;
  pooled.v_eta = sys.v_eta;
  std::vector<Vec> x_samples, u_samples;
  for (int k = 0; k < spec.train_sets; ++k) {
    Signal u_sig = [&, k](double t) { return train_u[k](t); };
    FilterRun run = run_filter(filter, u_sig, train_y[k], Vec::Zero(aug.n_z()), spec.t_f, spec.dt);
    LabeledDataset part =
        make_labeled_dataset(run, basis, sys.v_eta, spec.transient_cut, spec.decimation);
    for (auto& s : part.samples) {
      x_samples.push_back(s.x_hat);
      u_samples.push_back(s.u);
      pooled.samples.push_back(std::move(s));
    }
  }
  rep.training_samples = pooled.count();

  rep.state_set = fit_bounding(x_samples, {.inflation = spec.inflation});
  rep.input_set = fit_bounding(u_samples, {.inflation = spec.inflation});
  rep.lip_g = sys.lip_g;
  rep.lip_h = basis_lipschitz(basis, rep.state_set, sys.v_eta);

  LearnConfig cfg = spec.learn;
  cfg.model_class = ModelClass::Local;
  cfg.state_set = rep.state_set;
  cfg.input_set = rep.input_set;
  cfg.lip_g = rep.lip_g;
  cfg.lip_h = rep.lip_h;
  cfg.max_threads = spec.max_threads;

  rep.unconstrained = learn_unconstrained(pooled, sys.s_eta);
  rep.cost_mod = learn_cost_mod_local(sys, pooled, cfg);
  if (spec.run_scp) {
    rep.scp = learn_scp(sys, pooled, cfg, rep.cost_mod);
  }

  // Evaluation on fresh test inputs.
  struct Entry {
    std::string name;
    const UncertaintyModel* model;  // null = prior only
  };
  UncertaintyModel prior_zero = UncertaintyModel::zero(sys, basis, sys.s_eta);
  std::vector<Entry> entries{{"prior-only", &prior_zero},
                             {"unconstrained", &rep.unconstrained.model},
                             {"cost-mod", &rep.cost_mod.model}};
  if (spec.run_scp) entries.push_back({"scp", &rep.scp.model});

  std::vector<std::vector<double>> errs(entries.size(),
                                        std::vector<double>(spec.test_sets, 0.0));
  std::vector<std::vector<int>> fails(entries.size(), std::vector<int>(spec.test_sets, 0));
  parallel_for(spec.test_sets, [&](int k) {
    MultisineSignal u = make_input("test-input", k);
    Trajectory truth = simulate_true(u);
    for (std::size_t e = 0; e < entries.size(); ++e) {
      try {
        IntegrateOptions io;
        io.output = &out_map;
        auto rhs = [&](const Vec& x, const Vec& uu) {
          return eval_extended_rhs(sys, *entries[e].model, x, uu);
        };
        Trajectory model_tr =
            integrate(rhs, Vec::Zero(8), [&u](double t) { return u(t); }, spec.t_f, spec.dt, io);
        errs[e][k] = output_error(truth, model_tr);
      } catch (const NumericalError&) {
        fails[e][k] = 1;
        errs[e][k] = std::numeric_limits<double>::infinity();
      }
    }
  }, spec.max_threads);

  for (std::size_t e = 0; e < entries.size(); ++e) {
    int nf = 0;
    for (int k = 0; k < spec.test_sets; ++k) nf += fails[e][k];
    rep.methods.push_back(finalize_stats(entries[e].name, errs[e], nf));
  }
  return rep;
}

}  // namespace modup
