#include "modup/sym.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace modup {

double min_eig(const Mat& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double min_eig(const SymMatrix& m) { return min_eig(m.mat()); }

double max_eig(const Mat& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(m.rows() - 1);
}

double max_eig(const SymMatrix& m) { return max_eig(m.mat()); }

Mat psd_factor(const SymMatrix& d, double jitter) {
  const int n = d.dim();
  if (n == 0) return Mat(0, 0);
  if (jitter < 0.0) jitter = 0.0;

  // Fast path: plain Cholesky succeeds on safely positive definite input.
  {
    Eigen::LLT<Mat> llt(d.mat());
    if (llt.info() == Eigen::Success) {
      Mat l = llt.matrixL();
      double dmin = l.diagonal().minCoeff();
      double dmax = l.diagonal().maxCoeff();
      if (dmin > 0.0 && dmin > 1e-7 * dmax) return Mat(l.transpose());
    }
  }

  // Eigendecomposition fallback: rank-revealing, tolerates semidefiniteness.
  Eigen::SelfAdjointEigenSolver<Mat> es(d.mat());
  if (es.info() != Eigen::Success) throw NumericalError("psd_factor: eigendecomposition failed");
  const Vec& ev = es.eigenvalues();
  if (ev(0) < -jitter) {
    throw NumericalError("psd_factor: matrix is not PSD within jitter (min eig " +
                         std::to_string(ev(0)) + ", jitter " + std::to_string(jitter) + ")");
  }
  double lmax = std::max(ev(n - 1), 0.0);
  double cut = std::max(jitter, 1e-14 * lmax * n);
  int rank = 0;
  for (int i = 0; i < n; ++i) {
    if (ev(i) > cut) ++rank;
  }
  Mat f(rank, n);
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (ev(i) <= cut) continue;
    Vec row = std::sqrt(ev(i)) * es.eigenvectors().col(i);
    // Sign convention: leading extreme entry positive, so factors are unique.
    int imax = 0;
    row.cwiseAbs().maxCoeff(&imax);
    if (row(imax) < 0.0) row = -row;
    f.row(r++) = row.transpose();
  }
  return f;
}

SymMatrix schur_reduce(const SymMatrix& a, const Mat& b, const SymMatrix& c) {
  require(b.rows() == a.dim() && b.cols() == c.dim(), "schur_reduce: block dimensions mismatch");
  Eigen::LLT<Mat> llt(c.mat());
  if (llt.info() != Eigen::Success || min_eig(c) <= 0.0) {
    throw NumericalError("schur_reduce: trailing block is not positive definite");
  }
  Mat x = llt.solve(b.transpose());
  return SymMatrix(a.mat() - b * x);
}

}  // namespace modup
