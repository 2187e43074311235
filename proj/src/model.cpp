#include "modup/model.hpp"

#include <cmath>

namespace modup {

void SystemModel::validate() const {
  require(a.rows() == a.cols(), "SystemModel: A must be square");
  const int nn = n();
  require(b_u.rows() == nn, "SystemModel: B_u row count");
  require(s_g.rows() == nn, "SystemModel: S_g row count");
  require(s_eta.rows() == nn, "SystemModel: S_eta row count");
  require(b_omega.rows() == nn, "SystemModel: B_omega row count");
  require(v_g.cols() == nn, "SystemModel: V_g column count");
  require(v_eta.cols() == nn, "SystemModel: V_eta column count");
  require(c.cols() == nn, "SystemModel: C column count");
  require(d_nu.rows() == c.rows(), "SystemModel: D_nu row count");
  if (n_g() > 0) {
    require(static_cast<bool>(g), "SystemModel: S_g present but g missing");
    Vec at_zero = g(Vec::Zero(n_vg()), Vec::Zero(l()));
    require(at_zero.size() == n_g(), "SystemModel: g output dimension");
    require(at_zero.norm() == 0.0, "SystemModel: g(0,0) must vanish");
  }
}

Vec BasisLibrary::eval(const Vec& s, const Vec&) const {
  require(s.size() == input_dim, "BasisLibrary: argument dimension");
  Vec out(n_h());
  int at = 0;
  for (const auto& tag : tags) {
    if (tag == "quad") {
      out.segment(at, input_dim) = s.array().square();
    } else if (tag == "cubic") {
      out.segment(at, input_dim) = s.array().cube();
    } else if (tag == "expm1") {
      out.segment(at, input_dim) = s.array().exp() - 1.0;
    } else {
      throw ConfigError("BasisLibrary: unknown tag '" + tag + "'");
    }
    at += input_dim;
  }
  return out;
}

BasisLibrary BasisLibrary::from_tags(std::vector<std::string> tags, int input_dim) {
  require(input_dim >= 0, "BasisLibrary: negative input dim");
  BasisLibrary b;
  b.tags = std::move(tags);
  b.input_dim = input_dim;
  for (const auto& tag : b.tags) {
    if (tag != "quad" && tag != "cubic" && tag != "expm1") {
      throw ConfigError("BasisLibrary: unknown tag '" + tag + "'");
    }
  }
  return b;
}

Vec UncertaintyModel::eval(const Vec& v_eta_x, const Vec& u) const {
  Vec out = theta_l * v_eta_x + b_l * u;
  if (theta_n.cols() > 0) out += theta_n * basis.eval(v_eta_x, u);
  return out;
}

UncertaintyModel UncertaintyModel::zero(const SystemModel& sys, BasisLibrary basis, Mat s_eta_l) {
  UncertaintyModel m;
  int rows = static_cast<int>(s_eta_l.cols());
  m.theta_l = Mat::Zero(rows, sys.n_veta());
  m.b_l = Mat::Zero(rows, sys.l());
  m.theta_n = Mat::Zero(rows, basis.n_h());
  m.s_eta_l = std::move(s_eta_l);
  m.basis = std::move(basis);
  return m;
}

Vec eval_system_rhs(const SystemModel& sys, const Vec& x, const Vec& u, const Vec& omega,
                    const SystemModel::Nonlinearity& eta_override) {
  require(x.size() == sys.n(), "eval_system_rhs: state dimension");
  require(u.size() == sys.l(), "eval_system_rhs: input dimension");
  require(omega.size() == sys.n_omega(), "eval_system_rhs: disturbance dimension");
  Vec dx = sys.a * x + sys.b_u * u;
  if (sys.n_g() > 0) dx += sys.s_g * sys.g(sys.v_g * x, u);
  if (sys.n_eta() > 0) {
    const auto& eta = eta_override ? eta_override : sys.eta_true;
    require(static_cast<bool>(eta),
            "eval_system_rhs: uncertainty channel present but no eta supplied");
    Vec ev = eta(sys.v_eta * x, u);
    require(ev.size() == sys.n_eta(), "eval_system_rhs: eta output dimension");
    dx += sys.s_eta * ev;
  }
  if (sys.n_omega() > 0) dx += sys.b_omega * omega;
  return dx;
}

Vec eval_extended_rhs(const SystemModel& sys, const UncertaintyModel& unc, const Vec& x,
                      const Vec& u) {
  require(x.size() == sys.n(), "eval_extended_rhs: state dimension");
  require(u.size() == sys.l(), "eval_extended_rhs: input dimension");
  require(unc.s_eta_l.rows() == sys.n(), "eval_extended_rhs: S_eta_l row count");
  require(unc.s_eta_l.cols() == unc.n_eta_l(), "eval_extended_rhs: S_eta_l column count");
  Vec dx = sys.a * x + sys.b_u * u;
  if (sys.n_g() > 0) dx += sys.s_g * sys.g(sys.v_g * x, u);
  dx += unc.s_eta_l * unc.eval(sys.v_eta * x, u);
  return dx;
}

Vec eval_extended_rhs(const ExtendedModel& model, const Vec& x, const Vec& u) {
  return eval_extended_rhs(model.system, model.uncertainty, x, u);
}

LipschitzPair estimate_lipschitz(const std::function<Vec(const Vec&, const Vec&)>& f,
                                 const Mat& v, const Ellipsoid& x_set, const Ellipsoid& u_set,
                                 int samples, std::uint64_t seed, double safety) {
  require(samples >= 1000, "estimate_lipschitz: need at least 1000 samples");
  require(v.cols() == x_set.dim(), "estimate_lipschitz: V and state set dims");
  RandomStream rs(seed);

  double max_x = 0.0, max_u = 0.0;
  auto draw_pairs = [&](int count, double& mx, double& mu) {
    for (int i = 0; i < count; ++i) {
      Vec x1 = sample_inside(x_set, rs);
      Vec u1 = sample_inside(u_set, rs);
      bool near = (i % 2 == 0);
      Vec x2, u2;
      if (near) {
        Vec dir = Vec::Zero(x1.size());
        for (int j = 0; j < dir.size(); ++j) dir(j) = rs.normal();
        x2 = 0.999 * x1 + 1e-6 * dir;
        u2 = u1;
      } else {
        x2 = sample_inside(x_set, rs);
        u2 = u1;
      }
      Vec fx1 = f(v * x1, u1);
      Vec fx2 = f(v * x2, u2);
      double den = (v * (x1 - x2)).norm();
      if (den > 1e-14) mx = std::max(mx, (fx1 - fx2).norm() / den);

      Vec u3 = sample_inside(u_set, rs);
      double den_u = (u1 - u3).norm();
      if (den_u > 1e-14) {
        Vec fu = f(v * x1, u3);
        mu = std::max(mu, (fx1 - fu).norm() / den_u);
      }
    }
  };

  // Refinement levels: a bounded quotient settles, an unbounded one keeps
  // growing with more samples.
  double lx_prev = 0.0, lu_prev = 0.0;
  int grew = 0;
  int level_count = samples / 4;
  for (int level = 0; level < 3; ++level) {
    draw_pairs(level_count, max_x, max_u);
    if (level > 0 && (max_x > 1.5 * (lx_prev + 1e-12) || max_u > 1.5 * (lu_prev + 1e-12)) &&
        std::max(max_x, max_u) > 1e3) {
      ++grew;
    }
    lx_prev = max_x;
    lu_prev = max_u;
    level_count *= 2;
  }
  if (grew >= 2) {
    throw NumericalError("estimate_lipschitz: difference quotients diverge across refinements");
  }
  return {max_x * safety, max_u * safety};
}

}  // namespace modup
