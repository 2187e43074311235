#pragma once

#include "modup/common.hpp"
#include "modup/sym.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace modup::lmi {

struct VarRef {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class VarShape { Symmetric, Rectangular, Scalar };

struct VarInfo {
  std::string name;
  VarShape shape = VarShape::Scalar;
  int rows = 1;
  int cols = 1;
  int offset = 0;  // first scalar index
  int count = 1;   // number of scalar components
};

/// Matrix-valued expression affine in the declared variables:
///   constant + sum_k  L_k * X_{v_k} * R_k     (optionally X^T in place of X)
class Expr {
 public:
  struct Term {
    int var = -1;
    Mat left;
    Mat right;
    bool transposed = false;   // use X^T
    bool scalar_mult = false;  // contribution is X(0,0) * left, right unused
  };

  Expr() = default;

  static Expr constant(const Mat& c) {
    Expr e;
    e.rows_ = static_cast<int>(c.rows());
    e.cols_ = static_cast<int>(c.cols());
    e.constant_ = c;
    return e;
  }

  static Expr zero(int rows, int cols) { return constant(Mat::Zero(rows, cols)); }

  /// L * X * R (pass transpose_var to use X^T).
  static Expr term(VarRef v, const Mat& left, const Mat& right, bool transpose_var = false);

  /// X itself (identity on both sides); dims are the variable's.
  static Expr var(VarRef v, int var_rows, int var_cols, bool transpose_var = false);

  /// x * coeff for a scalar variable x.
  static Expr scalar_term(VarRef v, const Mat& coeff);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return rows_ == 0 && cols_ == 0 && terms_.empty(); }

  Expr operator+(const Expr& o) const;
  Expr operator-(const Expr& o) const;
  Expr operator-() const { return scaled(-1.0); }
  Expr scaled(double s) const;
  Expr transpose() const;

  /// e + e^T (square expressions).
  friend Expr symmetrize(const Expr& e) { return e + e.transpose(); }

  const Mat& constant_part() const { return constant_; }
  const std::vector<Term>& terms() const { return terms_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  Mat constant_;  // may be empty meaning zero
  std::vector<Term> terms_;

  friend class Problem;
  Mat constant_or_zero() const {
    return constant_.size() > 0 ? constant_ : Mat::Zero(rows_, cols_);
  }
};

inline Expr operator*(double s, const Expr& e) { return e.scaled(s); }

/// Builder for symmetric block matrices. Upper-triangle cells are set
/// explicitly; the lower triangle is implied by transposition. Unset cells
/// are zero.
class BlockForm {
 public:
  explicit BlockForm(std::vector<int> dims);

  void set(int i, int j, const Expr& e);
  Expr assemble() const;
  int total_dim() const { return total_; }

 private:
  std::vector<int> dims_;
  std::vector<int> off_;
  int total_ = 0;
  std::vector<std::optional<Expr>> cells_;  // row-major over block grid
};

enum class Sense {
  Nsd,        // block <= 0
  Psd,        // block >= 0
  NsdStrict,  // block <= -eps I, eps scaled by the constant block norm
  PsdStrict,  // block >= +eps I
};

enum class SolveStatus { Optimal, Feasible, Infeasible, NumericalFailure };

struct ConstraintResidual {
  std::string label;
  int dim = 0;
  /// Margin of the solution inside the cone, in the original (unshifted,
  /// unscaled) constraint: min eigenvalue of the PSD-oriented block.
  double margin = 0.0;
};

struct SdpSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;
  std::map<std::string, Mat> values;
  std::vector<ConstraintResidual> residuals;
  double max_infeasibility = 0.0;  // max(0, -min margin)
  double duality_gap = 0.0;
  int newton_iterations = 0;
  std::string message;

  bool feasible() const {
    return status == SolveStatus::Optimal || status == SolveStatus::Feasible;
  }
  const Mat& value(const std::string& name) const;
  double scalar(const std::string& name) const;
};

struct SolveOptions {
  double tol = 1e-8;            // duality-gap target, relative to 1 + |objective|
  double strict_margin = 1e-7;  // eps for strict senses, scaled per constraint
  double feasibility_margin = 1e-6;  // stop phase 1 once this deep inside
  int max_newton = 4000;
  int verbosity = 0;
  bool equilibrate = true;
};

/// One compiled constraint block in PSD orientation: G(y) = f0 + sum y_k fk >= 0.
struct CompiledConstraint {
  std::string label;
  int dim = 0;
  Sense sense = Sense::Psd;
  double applied_margin = 0.0;  // strict shift actually applied (original units)
  Mat f0;
  std::vector<int> vars;  // scalar indices
  std::vector<Mat> fk;
};

struct CompiledProblem {
  int num_scalars = 0;
  std::vector<VarInfo> var_infos;
  std::vector<CompiledConstraint> constraints;
  Vec c;           // objective: minimize c^T y + c0
  double c0 = 0.0;
  bool has_objective = false;
  int logdet_block = -1;  // when >= 0, maximize logdet of this block instead
};

/// Semidefinite feasibility / linear-objective program over symmetric blocks
/// affine in named matrix and scalar variables.
class Problem {
 public:
  VarRef sym_var(const std::string& name, int dim);
  VarRef rect_var(const std::string& name, int rows, int cols);
  VarRef scalar_var(const std::string& name);

  void constrain(const Expr& block, Sense sense, const std::string& label);
  /// Objective must be a 1x1 affine expression; default is pure feasibility.
  void minimize(const Expr& scalar_expr);
  /// Max-det mode: maximize log det of the given PSD-constrained symmetric
  /// variable (adds the X >= eps I block itself).
  void maximize_logdet(VarRef sym_psd_var);

  const std::vector<VarInfo>& variables() const { return vars_; }
  CompiledProblem compile(const SolveOptions& opts = {}) const;
  SdpSolution solve(const SolveOptions& opts = {}) const;

 private:
  VarRef add_var(VarInfo info);
  std::vector<VarInfo> vars_;
  int num_scalars_ = 0;
  struct RawConstraint {
    Expr expr;
    Sense sense;
    std::string label;
  };
  std::vector<RawConstraint> constraints_;
  Expr objective_;
  bool has_objective_ = false;
  int logdet_var_ = -1;
};

/// Low-level entry point used by Problem::solve; exposed for tests.
SdpSolution solve_compiled(const CompiledProblem& cp, const SolveOptions& opts);

}  // namespace modup::lmi
