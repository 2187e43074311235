#pragma once

#include "modup/common.hpp"
#include "modup/model.hpp"
#include "modup/sym.hpp"

#include <vector>

namespace modup {

struct LabeledSample {
  Vec u;        // l
  Vec x_hat;    // n
  Vec eta_hat;  // n_eta
  double t = 0.0;
};

/// Time-indexed (input, state estimate, uncertainty estimate) samples plus
/// the basis and selector used to evaluate regressors.
struct LabeledDataset {
  std::vector<LabeledSample> samples;
  BasisLibrary basis;
  Mat v_eta;  // n_veta x n

  int count() const { return static_cast<int>(samples.size()); }
  void validate() const;
};

/// Gram matrix of the stacked per-sample data vectors
///   d_i = (V_eta x_i; u_i; label_i; h(V_eta x_i, u_i)),
/// with its PSD factor. The label block is the raw uncertainty estimate; see
/// lifted() for programs whose uncertainty term acts on the full state
/// equation.
struct DataMatrix {
  SymMatrix d;
  Mat factor;  // rank x q, factor^T factor = d
  int sample_count = 0;
  int n_veta = 0, l = 0, n_label = 0, n_h = 0;

  int q() const { return n_veta + l + n_label + n_h; }
  int off_x() const { return 0; }
  int off_u() const { return n_veta; }
  int off_label() const { return n_veta + l; }
  int off_h() const { return n_veta + l + n_label; }

  /// Congruence with blkdiag(I, I, S, I): replaces the label block eta by
  /// S * eta. Used when the learned term enters the dynamics directly
  /// (uncertainty scaled into state-equation units).
  DataMatrix lifted(const Mat& s) const;
};

DataMatrix build_data_matrix(const LabeledDataset& ds);

/// Quadratic fit cost J = tr(T D T^T) with T = [Theta_l  B_l  -I  Theta_n];
/// equals the sum of squared residuals of the uncertainty model against the
/// labels encoded in dm. The model's output dimension must match the label
/// block.
double model_fit_cost(const UncertaintyModel& theta, const DataMatrix& dm);

/// The T matrix above, laid out on dm's block structure.
Mat residual_map(const UncertaintyModel& theta, const DataMatrix& dm);

}  // namespace modup
