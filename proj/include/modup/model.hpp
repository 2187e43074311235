#pragma once

#include "modup/common.hpp"
#include "modup/ellipsoid.hpp"
#include "modup/sym.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace modup {

struct LipschitzPair {
  double x = 0.0;
  double u = 0.0;
};

/// Known part of the plant:
///   xdot = A x + B_u u + S_g g(V_g x, u) + S_eta eta(V_eta x, u) + B_omega w
///   y    = C x + D_nu nu
/// The true uncertainty hook eta_true is only used to generate synthetic data.
struct SystemModel {
  Mat a;        // n x n
  Mat b_u;      // n x l
  Mat s_g;      // n x n_g
  Mat v_g;      // n_vg x n
  Mat s_eta;    // n x n_eta
  Mat v_eta;    // n_veta x n
  Mat b_omega;  // n x n_omega (may have zero columns)
  Mat c;        // m x n
  Mat d_nu;     // m x m_nu

  using Nonlinearity = std::function<Vec(const Vec&, const Vec&)>;
  Nonlinearity g;         // (V_g x, u) -> n_g; g(0,0) = 0
  Nonlinearity eta_true;  // (V_eta x, u) -> n_eta; optional synthetic hook
  LipschitzPair lip_g;

  std::string g_tag = "none";    // registry tag for serialization
  std::string eta_tag = "none";

  int n() const { return static_cast<int>(a.rows()); }
  int l() const { return static_cast<int>(b_u.cols()); }
  int n_g() const { return static_cast<int>(s_g.cols()); }
  int n_vg() const { return static_cast<int>(v_g.rows()); }
  int n_eta() const { return static_cast<int>(s_eta.cols()); }
  int n_veta() const { return static_cast<int>(v_eta.rows()); }
  int n_omega() const { return static_cast<int>(b_omega.cols()); }
  int m() const { return static_cast<int>(c.rows()); }
  int m_nu() const { return static_cast<int>(d_nu.cols()); }

  void validate() const;
};

/// Candidate basis functions h(V_eta x, u) for the uncertainty nonlinearity,
/// assembled from named elementwise blocks over s = V_eta x:
///   quad: s^o2, cubic: s^o3, expm1: exp(s) - 1.
/// All blocks vanish at the origin so zero stays an equilibrium of the model.
struct BasisLibrary {
  std::vector<std::string> tags;
  int input_dim = 0;  // n_veta
  LipschitzPair lip;  // valid on the declared state/input sets

  int n_h() const { return static_cast<int>(tags.size()) * input_dim; }
  Vec eval(const Vec& s, const Vec& u) const;

  static BasisLibrary from_tags(std::vector<std::string> tags, int input_dim);
  static BasisLibrary empty(int input_dim) { return from_tags({}, input_dim); }
};

/// Learned uncertainty model eta_l(V_eta x, u) = Theta_l V_eta x + B_l u
/// + Theta_n h(V_eta x, u), entering the dynamics through S_eta_l.
struct UncertaintyModel {
  Mat theta_l;  // n_eta_l x n_veta
  Mat b_l;      // n_eta_l x l
  Mat theta_n;  // n_eta_l x n_h
  Mat s_eta_l;  // n x n_eta_l
  BasisLibrary basis;

  int n_eta_l() const { return static_cast<int>(theta_l.rows()); }
  Vec eval(const Vec& v_eta_x, const Vec& u) const;

  static UncertaintyModel zero(const SystemModel& sys, BasisLibrary basis, Mat s_eta_l);
};

struct ModelCertificate {
  enum class Kind { InvariantSet, Iss };
  Kind kind = Kind::InvariantSet;
  SymMatrix p;  // positive definite Lyapunov shape
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double lbar_hx = 0.0;
  double margin = 0.0;  // strict margin used when the certificate was produced
};

struct ExtendedModel {
  SystemModel system;
  UncertaintyModel uncertainty;
  std::optional<ModelCertificate> certificate;
};

/// Right-hand side of the true system. The uncertainty comes from
/// eta_override when given, else from the model's synthetic hook; systems
/// with n_eta = 0 need neither.
Vec eval_system_rhs(const SystemModel& sys, const Vec& x, const Vec& u, const Vec& omega,
                    const SystemModel::Nonlinearity& eta_override = nullptr);

/// Right-hand side of the extended model (known part plus learned term).
Vec eval_extended_rhs(const ExtendedModel& model, const Vec& x, const Vec& u);
Vec eval_extended_rhs(const SystemModel& sys, const UncertaintyModel& unc, const Vec& x,
                      const Vec& u);

/// Samples difference quotients of f(V x, u) over the given sets and returns
/// safety-inflated Lipschitz constants (state slope, input slope). Throws
/// NumericalError when the quotients keep growing across refinement levels.
LipschitzPair estimate_lipschitz(const std::function<Vec(const Vec&, const Vec&)>& f,
                                 const Mat& v, const Ellipsoid& x_set, const Ellipsoid& u_set,
                                 int samples, std::uint64_t seed = 1234,
                                 double safety = 1.2);

}  // namespace modup
