#pragma once

#include "modup/common.hpp"

namespace modup {

/// Dense real symmetric matrix. Symmetry is enforced on construction by
/// averaging with the transpose, so entries (i,j) and (j,i) are the same
/// floating-point value; non-finite input is rejected.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(const Mat& m) {
    require(m.rows() == m.cols(), "SymMatrix: input must be square");
    if (!m.allFinite()) throw NumericalError("SymMatrix: non-finite entries");
    mat_ = 0.5 * (m + m.transpose());
  }

  static SymMatrix zero(int dim) { return SymMatrix(Mat::Zero(dim, dim)); }
  static SymMatrix identity(int dim) { return SymMatrix(Mat::Identity(dim, dim)); }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Mat& mat() const { return mat_; }
  double operator()(int i, int j) const { return mat_(i, j); }

 private:
  Mat mat_;
};

/// Smallest eigenvalue (self-adjoint solver).
double min_eig(const SymMatrix& m);
double min_eig(const Mat& m);

/// Largest eigenvalue.
double max_eig(const SymMatrix& m);
double max_eig(const Mat& m);

/// Factor a PSD matrix d as d = F^T F with F of size rank x dim. A fast
/// Cholesky path handles well-conditioned positive definite input; otherwise
/// an eigendecomposition drops modes below the jitter threshold, so the row
/// count of F equals the numerical rank of d. Throws NumericalError when
/// min_eig(d) < -jitter.
Mat psd_factor(const SymMatrix& d, double jitter);

/// Default jitter for Gram matrices assembled from data.
inline double default_jitter(const SymMatrix& d) {
  int n = d.dim();
  return n > 0 ? 1e-10 * d.mat().trace() / n : 0.0;
}

/// Schur complement a - b c^{-1} b^T of [[a, b], [b^T, c]]; requires c positive
/// definite (NumericalError otherwise).
SymMatrix schur_reduce(const SymMatrix& a, const Mat& b, const SymMatrix& c);

}  // namespace modup
