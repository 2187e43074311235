#pragma once

#include "modup/common.hpp"
#include "modup/rng.hpp"
#include "modup/sym.hpp"

#include <cstdint>
#include <vector>

namespace modup {

struct ExtendedModel;

/// Origin-centered ellipsoid {v : v^T shape v <= 1} with shape >= 0. A shape
/// with zero eigenvalues describes a set unbounded along the corresponding
/// directions (degenerate but admissible).
class Ellipsoid {
 public:
  Ellipsoid() = default;
  explicit Ellipsoid(SymMatrix shape, bool degenerate = false)
      : shape_(std::move(shape)), degenerate_(degenerate) {}

  const SymMatrix& shape() const { return shape_; }
  int dim() const { return shape_.dim(); }
  bool degenerate() const { return degenerate_; }

 private:
  SymMatrix shape_;
  bool degenerate_ = false;
};

struct FitOptions {
  double inflation = 1.05;      // points end up with v^T F v <= 1/inflation^2
  double fallback_radius = 1.0; // ball radius when all points are zero
  double floor_radius = 0.0;    // >0 bounds directions the data does not span
  int max_support_points = 400;
  double tol = 1e-9;
  std::uint64_t seed = 1;
};

/// Minimum-volume origin-centered bounding ellipsoid of the given points,
/// computed as a max-log-det semidefinite program over the span of the data.
/// Directions orthogonal to the span get zero shape eigenvalues (degenerate
/// flag) unless floor_radius bounds them.
Ellipsoid fit_bounding(const std::vector<Vec>& points, const FitOptions& opts = {});

bool contains(const Ellipsoid& e, const Vec& v, double tol = 1e-9);

struct SubsetReport {
  bool holds = false;
  double gamma = 0.0;  // certifying multiplier: gamma * F <= P with gamma >= 1
};

/// Containment {x : x^T P x <= 1} inside {x : x^T F x <= 1}; P must be
/// positive definite.
SubsetReport check_subset(const Ellipsoid& inner_p, const Ellipsoid& outer_f);

/// Uniform sample from the interior of a (possibly degenerate) ellipsoid;
/// unbounded directions are sampled at zero.
Vec sample_inside(const Ellipsoid& e, RandomStream& rs);
/// Sample from the boundary v^T shape v = 1 restricted to the bounded span.
Vec sample_boundary(const Ellipsoid& e, RandomStream& rs);

struct InvarianceReport {
  int trials = 0;
  int violations = 0;
  double max_level = 0.0;  // max over trials of sup_t x^T P x
  bool vacuous = false;    // no trials run
  bool pass(double tol = 1e-6) const {
    return !vacuous && violations == 0 && max_level <= 1.0 + tol;
  }
};

/// Simulates the extended model from states sampled in its certified
/// invariant ellipsoid under admissible inputs (u^T U u <= 1 pointwise) and
/// reports the largest Lyapunov level reached.
InvarianceReport empirical_invariance(const ExtendedModel& model, const Ellipsoid& input_set,
                                      int trials, double t_f, double dt, std::uint64_t seed);

}  // namespace modup
