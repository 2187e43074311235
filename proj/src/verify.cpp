#include "modup/verify.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>

#include "modup/ode.hpp"
#include "modup/rng.hpp"

namespace modup {

namespace {

double tol_scaled(double margin, const Mat& block) {
  return 2.0 * margin * std::max(1.0, block.norm());
}

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

}  // namespace

std::string Certificate::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " ["
     << (kind == ModelCertificate::Kind::InvariantSet ? "invariant-set" : "ISS") << "]";
  for (const auto& c : checks) {
    os << " " << c.name << ": lambda_max=" << c.lambda_max << " tol=" << c.tolerance
       << (c.pass ? " ok" : " VIOLATED") << ";";
  }
  return os.str();
}

Mat stability_quadratic_form(const SystemModel& sys, const UncertaintyModel& theta,
                             const Mat& p, double lbar_hx, double lbar_hu,
                             const LipschitzPair& lip_g) {
  const Mat& a = sys.a;
  const Mat& s_el = theta.s_eta_l;
  Mat delta = a.transpose() * p + p * a;
  Mat cross = p * s_el * theta.theta_l * sys.v_eta;
  delta += cross + cross.transpose();
  if (lip_g.x + lip_g.u > 0.0) {
    delta += (lip_g.x + lip_g.u) * p * sys.s_g * sys.s_g.transpose() * p;
  }
  if (lbar_hx + lbar_hu > 0.0) {
    delta += (lbar_hx + lbar_hu) * p * s_el * s_el.transpose() * p;
  }
  if (lip_g.x > 0.0) delta += lip_g.x * sys.v_g.transpose() * sys.v_g;
  if (lbar_hx > 0.0) delta += lbar_hx * sys.v_eta.transpose() * sys.v_eta;
  return delta;
}

Certificate check_invariant_set(const SystemModel& sys, const UncertaintyModel& theta,
                                const SymMatrix& p, double alpha, double beta, double gamma,
                                double lbar_hx, const LipschitzPair& lip_g,
                                const LipschitzPair& lip_h, const Ellipsoid& state_set,
                                const Ellipsoid& input_set, double margin) {
  Certificate cert;
  cert.kind = ModelCertificate::Kind::InvariantSet;
  cert.p = p;
  cert.alpha = alpha;
  cert.beta = beta;
  cert.gamma = gamma;
  cert.lbar_hx = lbar_hx;
  const int n = sys.n();
  const int l = sys.l();
  const double lbar_hu = derived_lbar_hu(lbar_hx, lip_h);

  // Block S-procedure condition over (x, u, 1).
  Mat delta = stability_quadratic_form(sys, theta, p.mat(), lbar_hx, lbar_hu, lip_g);
  Mat big = Mat::Zero(n + l + 1, n + l + 1);
  big.topLeftCorner(n, n) = delta + beta * p.mat();
  big.block(0, n, n, l) = p.mat() * (sys.b_u + theta.s_eta_l * theta.b_l);
  big.block(n, 0, l, n) = big.block(0, n, n, l).transpose();
  big.block(n, n, l, l) =
      (lip_g.u + lbar_hu) * Mat::Identity(l, l) - alpha * input_set.shape().mat();
  big(n + l, n + l) = alpha - beta;
  ConditionCheck decay{"invariance block", max_eig(SymMatrix(big)), tol_scaled(margin, big),
                       false};
  decay.pass = decay.lambda_max <= decay.tolerance;
  cert.checks.push_back(decay);

  // Containment of the invariant ellipsoid in the data set.
  Mat sub = Mat::Zero(n + 1, n + 1);
  sub.topLeftCorner(n, n) = gamma * state_set.shape().mat() - p.mat();
  sub(n, n) = 1.0 - gamma;
  ConditionCheck subset{"set containment", max_eig(SymMatrix(sub)), tol_scaled(margin, sub),
                        false};
  subset.pass = subset.lambda_max <= subset.tolerance;
  cert.checks.push_back(subset);

  // Norm cap on the nonlinear parameters.
  if (theta.theta_n.cols() > 0 && lip_h.x > 0.0) {
    double lhs = lip_h.x * spectral_norm(theta.theta_n);
    ConditionCheck cap{"theta_n norm", lhs - lbar_hx, 1e-6 * std::max(1.0, lbar_hx), false};
    cap.pass = cap.lambda_max <= cap.tolerance;
    cert.checks.push_back(cap);
  }

  cert.pass = true;
  for (const auto& c : cert.checks) cert.pass = cert.pass && c.pass;
  return cert;
}

Certificate check_iss(const SystemModel& sys, const UncertaintyModel& theta, const SymMatrix& p,
                      double lbar_hx, const LipschitzPair& lip_g, const LipschitzPair& lip_h,
                      double margin) {
  Certificate cert;
  cert.kind = ModelCertificate::Kind::Iss;
  cert.p = p;
  cert.lbar_hx = lbar_hx;
  const double lbar_hu = derived_lbar_hu(lbar_hx, lip_h);

  Mat delta = stability_quadratic_form(sys, theta, p.mat(), lbar_hx, lbar_hu, lip_g);
  double thresh = -0.5 * margin * std::max(1.0, delta.norm());
  ConditionCheck decay{"negative definiteness", max_eig(SymMatrix(delta)), thresh, false};
  decay.pass = decay.lambda_max <= decay.tolerance;
  cert.checks.push_back(decay);

  if (theta.theta_n.cols() > 0 && lip_h.x > 0.0) {
    double lhs = lip_h.x * spectral_norm(theta.theta_n);
    ConditionCheck cap{"theta_n norm", lhs - lbar_hx, 1e-6 * std::max(1.0, lbar_hx), false};
    cap.pass = cap.lambda_max <= cap.tolerance;
    cert.checks.push_back(cap);
  }
  cert.pass = true;
  for (const auto& c : cert.checks) cert.pass = cert.pass && c.pass;
  return cert;
}

Certificate verify_learn_result(const SystemModel& sys, const LearnResult& result,
                                const LipschitzPair& lip_g, const LipschitzPair& lip_h,
                                const Ellipsoid& state_set, const Ellipsoid& input_set) {
  require(result.certificate.has_value(), "verify_learn_result: result carries no certificate");
  const ModelCertificate& mc = *result.certificate;
  if (mc.kind == ModelCertificate::Kind::InvariantSet) {
    return check_invariant_set(sys, result.model, mc.p, mc.alpha, mc.beta, mc.gamma, mc.lbar_hx,
                               lip_g, lip_h, state_set, input_set, mc.margin);
  }
  return check_iss(sys, result.model, mc.p, mc.lbar_hx, lip_g, lip_h, mc.margin);
}

IssSimReport iss_bound_simulation(const ExtendedModel& model, int trials, double t_f, double dt,
                                  std::uint64_t seed) {
  IssSimReport rep;
  rep.trials = trials;
  if (trials <= 0) {
    rep.vacuous = true;
    return rep;
  }
  const int n = model.system.n();
  const int l = model.system.l();
  std::vector<double> finals(trials, 0.0), norms(trials, 0.0);
  std::vector<int> bad(trials, 0);
  parallel_for(trials, [&](int trial) {
    RandomStream rs = RandomStream::substream(seed, "iss-" + std::to_string(trial));
    Vec x0(n);
    for (int i = 0; i < n; ++i) x0(i) = rs.normal();
    MultisineSpec mspec;
    mspec.t_f = t_f;
    mspec.channels = l;
    mspec.seed = rs.next_u64();
    MultisineSignal u = l > 0 ? generate_multisine(mspec) : MultisineSignal{};
    Signal us = [&u, l](double t) { return l > 0 ? u(t) : Vec::Zero(0); };
    try {
      auto rhs = [&](const Vec& x, const Vec& uu) { return eval_extended_rhs(model, x, uu); };
      Trajectory tr = integrate(rhs, x0, us, t_f, dt);
      double mx = 0.0;
      for (const auto& x : tr.states) mx = std::max(mx, x.norm());
      norms[trial] = mx;
      finals[trial] = tr.states.back().norm();
    } catch (const NumericalError&) {
      bad[trial] = 1;
    }
  });
  for (int i = 0; i < trials; ++i) {
    rep.divergences += bad[i];
    rep.max_final_norm = std::max(rep.max_final_norm, finals[i]);
    rep.max_norm = std::max(rep.max_norm, norms[i]);
  }
  return rep;
}

}  // namespace modup
