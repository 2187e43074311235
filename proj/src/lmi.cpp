#include "modup/lmi.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace modup::lmi {

// ---------------------------------------------------------------------------
// Expression algebra
// ---------------------------------------------------------------------------

Expr Expr::term(VarRef v, const Mat& left, const Mat& right, bool transpose_var) {
  require(v.valid(), "Expr::term: invalid variable");
  Expr e;
  e.rows_ = static_cast<int>(left.rows());
  e.cols_ = static_cast<int>(right.cols());
  Term t;
  t.var = v.id;
  t.left = left;
  t.right = right;
  t.transposed = transpose_var;
  e.terms_.push_back(std::move(t));
  return e;
}

Expr Expr::var(VarRef v, int var_rows, int var_cols, bool transpose_var) {
  int r = transpose_var ? var_cols : var_rows;
  int c = transpose_var ? var_rows : var_cols;
  return term(v, Mat::Identity(r, r), Mat::Identity(c, c), transpose_var);
}

Expr Expr::scalar_term(VarRef v, const Mat& coeff) {
  require(v.valid(), "Expr::scalar_term: invalid variable");
  Expr e;
  e.rows_ = static_cast<int>(coeff.rows());
  e.cols_ = static_cast<int>(coeff.cols());
  Term t;
  t.var = v.id;
  t.left = coeff;
  t.right = Mat();
  t.scalar_mult = true;
  e.terms_.push_back(std::move(t));
  return e;
}

Expr Expr::operator+(const Expr& o) const {
  if (empty()) return o;
  if (o.empty()) return *this;
  require(rows_ == o.rows_ && cols_ == o.cols_, "Expr: shape mismatch in addition");
  Expr e = *this;
  if (o.constant_.size() > 0) {
    if (e.constant_.size() > 0)
      e.constant_ += o.constant_;
    else
      e.constant_ = o.constant_;
  }
  e.terms_.insert(e.terms_.end(), o.terms_.begin(), o.terms_.end());
  return e;
}

Expr Expr::operator-(const Expr& o) const { return *this + o.scaled(-1.0); }

Expr Expr::scaled(double s) const {
  Expr e = *this;
  if (e.constant_.size() > 0) e.constant_ *= s;
  for (auto& t : e.terms_) t.left *= s;
  return e;
}

Expr Expr::transpose() const {
  Expr e;
  e.rows_ = cols_;
  e.cols_ = rows_;
  if (constant_.size() > 0) e.constant_ = constant_.transpose();
  for (const auto& t : terms_) {
    Term nt;
    nt.var = t.var;
    if (t.scalar_mult) {
      nt.left = t.left.transpose();
      nt.scalar_mult = true;
    } else {
      nt.left = t.right.transpose();
      nt.right = t.left.transpose();
      nt.transposed = !t.transposed;
    }
    e.terms_.push_back(std::move(nt));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Block builder
// ---------------------------------------------------------------------------

BlockForm::BlockForm(std::vector<int> dims) : dims_(std::move(dims)) {
  off_.resize(dims_.size());
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    require(dims_[i] > 0, "BlockForm: block dims must be positive");
    off_[i] = total_;
    total_ += dims_[i];
  }
  cells_.resize(dims_.size() * dims_.size());
}

void BlockForm::set(int i, int j, const Expr& e) {
  require(i >= 0 && j >= 0 && i < static_cast<int>(dims_.size()) &&
              j < static_cast<int>(dims_.size()),
          "BlockForm::set: cell out of range");
  require(i <= j, "BlockForm::set: set upper-triangle cells only");
  require(e.rows() == dims_[i] && e.cols() == dims_[j], "BlockForm::set: cell shape mismatch");
  cells_[static_cast<std::size_t>(i) * dims_.size() + j] = e;
}

Expr BlockForm::assemble() const {
  const int nb = static_cast<int>(dims_.size());
  Expr out = Expr::zero(total_, total_);
  auto embed = [&](int bi, int bj, const Expr& e) {
    Mat ei = Mat::Zero(total_, dims_[bi]);
    ei.block(off_[bi], 0, dims_[bi], dims_[bi]).setIdentity();
    Mat ejt = Mat::Zero(dims_[bj], total_);
    ejt.block(0, off_[bj], dims_[bj], dims_[bj]).setIdentity();
    Expr placed = Expr::zero(total_, total_);
    if (e.constant_part().size() > 0)
      placed = placed + Expr::constant(ei * e.constant_part() * ejt);
    for (const auto& t : e.terms()) {
      if (t.scalar_mult) {
        placed = placed + Expr::scalar_term(VarRef{t.var}, ei * t.left * ejt);
      } else {
        placed = placed + Expr::term(VarRef{t.var}, ei * t.left, t.right * ejt, t.transposed);
      }
    }
    return placed;
  };
  for (int i = 0; i < nb; ++i) {
    for (int j = i; j < nb; ++j) {
      const auto& cell = cells_[static_cast<std::size_t>(i) * dims_.size() + j];
      if (!cell) continue;
      if (i == j) {
        out = out + embed(i, i, *cell);
      } else {
        out = out + embed(i, j, *cell) + embed(j, i, cell->transpose());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Problem assembly and compilation
// ---------------------------------------------------------------------------

VarRef Problem::add_var(VarInfo info) {
  info.offset = num_scalars_;
  num_scalars_ += info.count;
  vars_.push_back(info);
  return VarRef{static_cast<int>(vars_.size()) - 1};
}

VarRef Problem::sym_var(const std::string& name, int dim) {
  require(dim > 0, "sym_var: dim must be positive");
  VarInfo v;
  v.name = name;
  v.shape = VarShape::Symmetric;
  v.rows = v.cols = dim;
  v.count = dim * (dim + 1) / 2;
  return add_var(v);
}

VarRef Problem::rect_var(const std::string& name, int rows, int cols) {
  require(rows > 0 && cols > 0, "rect_var: dims must be positive");
  VarInfo v;
  v.name = name;
  v.shape = VarShape::Rectangular;
  v.rows = rows;
  v.cols = cols;
  v.count = rows * cols;
  return add_var(v);
}

VarRef Problem::scalar_var(const std::string& name) {
  VarInfo v;
  v.name = name;
  v.shape = VarShape::Scalar;
  v.rows = v.cols = 1;
  v.count = 1;
  return add_var(v);
}

void Problem::constrain(const Expr& block, Sense sense, const std::string& label) {
  require(block.rows() == block.cols() && block.rows() > 0,
          "constrain: block must be square and nonempty: " + label);
  constraints_.push_back({block, sense, label});
}

void Problem::minimize(const Expr& scalar_expr) {
  require(scalar_expr.rows() == 1 && scalar_expr.cols() == 1, "minimize: objective must be 1x1");
  objective_ = scalar_expr;
  has_objective_ = true;
}

void Problem::maximize_logdet(VarRef v) {
  require(v.valid() && vars_[v.id].shape == VarShape::Symmetric,
          "maximize_logdet: needs a symmetric variable");
  logdet_var_ = v.id;
}

namespace {

// Scalar components of a variable: symmetric vars use the upper triangle
// (i <= j), one scalar per unordered pair.
struct ScalarLayout {
  static int count(const VarInfo& v) { return v.count; }
  // d(X)/d(scalar s) as a matrix of the variable's shape.
  static void for_each_basis(const VarInfo& v,
                             const std::function<void(int local, int i, int j)>& fn) {
    if (v.shape == VarShape::Symmetric) {
      int s = 0;
      for (int i = 0; i < v.rows; ++i)
        for (int j = i; j < v.cols; ++j) fn(s++, i, j);
    } else {
      int s = 0;
      for (int i = 0; i < v.rows; ++i)
        for (int j = 0; j < v.cols; ++j) fn(s++, i, j);
    }
  }
};

void accumulate_term(const VarInfo& v, int var_offset, const Expr::Term& t, int dim,
                     std::map<int, Mat>& fk) {
  if (t.scalar_mult) {
    auto [it, inserted] = fk.try_emplace(var_offset, Mat::Zero(dim, dim));
    it->second += t.left;
    return;
  }
  // Contribution of L * X * R (or L * X^T * R) to each scalar's coefficient.
  // d(LXR)/dX_ij = L e_i e_j^T R; symmetric vars add the mirrored term.
  ScalarLayout::for_each_basis(v, [&](int local, int i, int j) {
    int gi = t.transposed ? j : i;
    int gj = t.transposed ? i : j;
    Mat contrib = t.left.col(gi) * t.right.row(gj);
    if (v.shape == VarShape::Symmetric && i != j) {
      contrib += t.left.col(gj) * t.right.row(gi);
    }
    auto [it, inserted] = fk.try_emplace(var_offset + local, Mat::Zero(dim, dim));
    it->second += contrib;
  });
}

}  // namespace

CompiledProblem Problem::compile(const SolveOptions& opts) const {
  CompiledProblem cp;
  cp.num_scalars = num_scalars_;
  cp.var_infos = vars_;

  auto compile_expr = [&](const Expr& expr, CompiledConstraint& cc) {
    const int dim = expr.rows();
    cc.dim = dim;
    cc.f0 = expr.constant_or_zero();
    std::map<int, Mat> fk;
    for (const auto& t : expr.terms()) {
      require(t.var >= 0 && t.var < static_cast<int>(vars_.size()), "compile: bad var id");
      const VarInfo& v = vars_[t.var];
      if (t.scalar_mult) {
        require(v.count == 1, "compile: scalar_term needs a scalar variable: " + cc.label);
      } else {
        int vr = t.transposed ? v.cols : v.rows;
        int vc = t.transposed ? v.rows : v.cols;
        require(t.left.cols() == vr && t.right.rows() == vc,
                "compile: term shape mismatch in constraint " + cc.label);
      }
      accumulate_term(v, v.offset, t, dim, fk);
    }
    for (auto& [k, m] : fk) {
      Mat s = 0.5 * (m + m.transpose());
      if ((m - s).cwiseAbs().maxCoeff() >
          1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) {
        throw DimensionError("compile: constraint block is not symmetric: " + cc.label);
      }
      if (s.cwiseAbs().maxCoeff() == 0.0) continue;
      cc.vars.push_back(k);
      cc.fk.push_back(std::move(s));
    }
  };

  for (const auto& rc : constraints_) {
    CompiledConstraint cc;
    cc.label = rc.label;
    cc.sense = rc.sense;
    compile_expr(rc.expr, cc);
    Mat c0s = 0.5 * (cc.f0 + cc.f0.transpose());
    if ((cc.f0 - c0s).cwiseAbs().maxCoeff() >
        1e-9 * std::max(1.0, cc.f0.cwiseAbs().maxCoeff()))
      throw DimensionError("compile: constant block is not symmetric: " + cc.label);
    cc.f0 = c0s;

    // Normalize to PSD orientation and apply strict margins.
    bool negate = (rc.sense == Sense::Nsd || rc.sense == Sense::NsdStrict);
    bool strict = (rc.sense == Sense::NsdStrict || rc.sense == Sense::PsdStrict);
    if (negate) {
      cc.f0 = -cc.f0;
      for (auto& m : cc.fk) m = -m;
    }
    if (strict) {
      double scale = std::max(1.0, cc.f0.norm());
      cc.applied_margin = opts.strict_margin * scale;
      cc.f0 -= cc.applied_margin * Mat::Identity(cc.dim, cc.dim);
    }
    cp.constraints.push_back(std::move(cc));
  }

  if (has_objective_) {
    cp.has_objective = true;
    CompiledConstraint oc;
    oc.label = "objective";
    compile_expr(objective_, oc);
    cp.c = Vec::Zero(num_scalars_);
    cp.c0 = oc.f0(0, 0);
    for (std::size_t i = 0; i < oc.vars.size(); ++i) cp.c(oc.vars[i]) = oc.fk[i](0, 0);
  } else {
    cp.c = Vec::Zero(num_scalars_);
  }

  if (logdet_var_ >= 0) {
    const VarInfo& v = vars_[logdet_var_];
    CompiledConstraint cc;
    cc.label = "logdet(" + v.name + ")";
    cc.sense = Sense::PsdStrict;
    compile_expr(Expr::var(VarRef{logdet_var_}, v.rows, v.cols), cc);
    cc.applied_margin = opts.strict_margin;
    cc.f0 = -cc.applied_margin * Mat::Identity(cc.dim, cc.dim);
    cp.logdet_block = static_cast<int>(cp.constraints.size());
    cp.constraints.push_back(std::move(cc));
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

namespace {

struct ReducedProblem {
  // y_original = y_particular + basis * y_reduced
  Vec y_particular;
  Mat basis;
  CompiledProblem cp;
  bool infeasible = false;
  std::string message;
};

Mat eval_block(const CompiledConstraint& cc, const Vec& y) {
  Mat g = cc.f0;
  for (std::size_t i = 0; i < cc.vars.size(); ++i) g += y(cc.vars[i]) * cc.fk[i];
  return g;
}

// Zero-diagonal facial reduction. A PSD block whose diagonal entry is
// structurally zero forces its whole row to vanish; those affine equalities
// are eliminated by reparameterizing y on their null space. Repeats until no
// structural zeros remain (substitution can create new ones).
ReducedProblem facial_reduce(const CompiledProblem& cp0) {
  ReducedProblem rp;
  rp.cp = cp0;
  const int n0 = cp0.num_scalars;
  rp.y_particular = Vec::Zero(n0);
  rp.basis = Mat::Identity(n0, n0);

  for (int pass = 0; pass < 10; ++pass) {
    CompiledProblem& cp = rp.cp;
    const int n = cp.num_scalars;
    std::vector<Eigen::RowVectorXd> eq_rows;
    std::vector<double> eq_rhs;

    for (auto& cc : cp.constraints) {
      std::vector<bool> dead(cc.dim, false);
      for (int i = 0; i < cc.dim; ++i) {
        bool zero_diag = cc.f0(i, i) == 0.0;
        for (std::size_t k = 0; zero_diag && k < cc.fk.size(); ++k)
          if (cc.fk[k](i, i) != 0.0) zero_diag = false;
        if (!zero_diag) continue;
        dead[i] = true;
        for (int j = 0; j < cc.dim; ++j) {
          if (j == i) continue;
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n);
          bool nontrivial = cc.f0(i, j) != 0.0;
          for (std::size_t k = 0; k < cc.fk.size(); ++k) {
            double v = cc.fk[k](i, j);
            if (v != 0.0) {
              row(cc.vars[k]) = v;
              nontrivial = true;
            }
          }
          if (nontrivial) {
            eq_rows.push_back(row);
            eq_rhs.push_back(-cc.f0(i, j));
          }
        }
      }
      int alive = 0;
      for (bool d : dead) alive += d ? 0 : 1;
      if (alive == cc.dim) continue;
      std::vector<int> keep;
      for (int i = 0; i < cc.dim; ++i)
        if (!dead[i]) keep.push_back(i);
      auto select = [&](const Mat& m) {
        Mat out(alive, alive);
        for (int a = 0; a < alive; ++a)
          for (int b = 0; b < alive; ++b) out(a, b) = m(keep[a], keep[b]);
        return out;
      };
      cc.f0 = select(cc.f0);
      for (auto& m : cc.fk) m = select(m);
      cc.dim = alive;
      // Drop coefficient matrices that became identically zero.
      std::vector<int> vars2;
      std::vector<Mat> fk2;
      for (std::size_t k = 0; k < cc.fk.size(); ++k) {
        if (cc.fk[k].size() > 0 && cc.fk[k].cwiseAbs().maxCoeff() != 0.0) {
          vars2.push_back(cc.vars[k]);
          fk2.push_back(cc.fk[k]);
        }
      }
      cc.vars = std::move(vars2);
      cc.fk = std::move(fk2);
    }
    // Remove empty blocks.
    std::vector<CompiledConstraint> keep_cc;
    for (std::size_t j = 0; j < cp.constraints.size(); ++j) {
      if (cp.constraints[j].dim > 0) {
        keep_cc.push_back(cp.constraints[j]);
      } else if (static_cast<int>(j) == cp.logdet_block) {
        rp.infeasible = true;
        rp.message = "facial reduction removed the log-det block";
        return rp;
      }
      if (static_cast<int>(j) == cp.logdet_block)
        cp.logdet_block = static_cast<int>(keep_cc.size()) - 1;
    }
    cp.constraints = std::move(keep_cc);

    if (eq_rows.empty()) break;

    Mat e(static_cast<int>(eq_rows.size()), n);
    Vec b(static_cast<int>(eq_rows.size()));
    for (std::size_t i = 0; i < eq_rows.size(); ++i) {
      e.row(static_cast<int>(i)) = eq_rows[i];
      b(static_cast<int>(i)) = eq_rhs[i];
    }
    Eigen::JacobiSVD<Mat> svd(e, Eigen::ComputeThinU | Eigen::ComputeFullV);
    double smax = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
    double cut = std::max(1e-12 * smax, 1e-300);
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > cut) ++rank;
    svd.setThreshold(rank > 0 ? cut / smax : 0.5);
    Vec yp = svd.solve(b);
    if ((e * yp - b).norm() > 1e-8 * (1.0 + b.norm())) {
      rp.infeasible = true;
      rp.message = "structurally forced equalities are inconsistent";
      return rp;
    }
    int nullity = n - rank;
    Mat nbasis = svd.matrixV().rightCols(nullity);

    // Substitute y = yp + nbasis * w into every block and the objective.
    CompiledProblem next;
    next.num_scalars = nullity;
    next.var_infos = cp.var_infos;
    next.logdet_block = cp.logdet_block;
    next.has_objective = cp.has_objective;
    next.c = nbasis.transpose() * cp.c;
    next.c0 = cp.c0 + cp.c.dot(yp);
    for (const auto& cc : cp.constraints) {
      CompiledConstraint nc;
      nc.label = cc.label;
      nc.sense = cc.sense;
      nc.dim = cc.dim;
      nc.applied_margin = cc.applied_margin;
      nc.f0 = cc.f0;
      for (std::size_t k = 0; k < cc.fk.size(); ++k) nc.f0 += yp(cc.vars[k]) * cc.fk[k];
      for (int w = 0; w < nullity; ++w) {
        Mat m = Mat::Zero(cc.dim, cc.dim);
        for (std::size_t k = 0; k < cc.fk.size(); ++k) {
          double coeff = nbasis(cc.vars[k], w);
          if (coeff != 0.0) m += coeff * cc.fk[k];
        }
        if (m.cwiseAbs().maxCoeff() > 0.0) {
          nc.vars.push_back(w);
          nc.fk.push_back(std::move(m));
        }
      }
      next.constraints.push_back(std::move(nc));
    }
    rp.y_particular += rp.basis * yp;
    rp.basis = rp.basis * nbasis;
    rp.cp = std::move(next);
    if (nullity == 0) break;
  }
  return rp;
}

struct BarrierWork {
  const CompiledProblem* cp = nullptr;
  std::vector<double> weight;  // barrier weight per block
  double reg_l2 = 0.0;         // small Tikhonov term keeping iterates bounded

  double barrier_nu() const {
    double nu = 0;
    for (std::size_t j = 0; j < cp->constraints.size(); ++j)
      nu += weight[j] * cp->constraints[j].dim;
    return nu;
  }

  bool factor(const Vec& y, std::vector<Eigen::LLT<Mat>>& llts) const {
    llts.clear();
    llts.reserve(cp->constraints.size());
    for (const auto& cc : cp->constraints) {
      Mat g = eval_block(cc, y);
      llts.emplace_back(g);
      if (llts.back().info() != Eigen::Success) return false;
      // LLT can succeed on slightly indefinite input; insist on a positive
      // diagonal of the factor.
      if (Mat(llts.back().matrixL()).diagonal().minCoeff() <= 0.0) return false;
    }
    return true;
  }

  double barrier_value(double t, const Vec& tc, const Vec& y,
                       const std::vector<Eigen::LLT<Mat>>& llts) const {
    double val = t * tc.dot(y) + reg_l2 * y.squaredNorm();
    for (std::size_t j = 0; j < llts.size(); ++j) {
      double logdet = 2.0 * Mat(llts[j].matrixL()).diagonal().array().log().sum();
      val -= weight[j] * logdet;
    }
    return val;
  }

  void grad_hess(double t, const Vec& tc, const Vec& y,
                 const std::vector<Eigen::LLT<Mat>>& llts, Vec& grad, Mat& hess) const {
    const int n = cp->num_scalars;
    grad = t * tc + 2.0 * reg_l2 * y;
    hess = Mat::Zero(n, n);
    if (reg_l2 > 0.0) hess.diagonal().array() += 2.0 * reg_l2;
    for (std::size_t j = 0; j < cp->constraints.size(); ++j) {
      const auto& cc = cp->constraints[j];
      const int d = cc.dim;
      const int kn = static_cast<int>(cc.vars.size());
      if (kn == 0) continue;
      const auto& l = llts[j].matrixL();
      Mat s_stack(d * d, kn);
      for (int k = 0; k < kn; ++k) {
        Mat x = l.solve(cc.fk[k]);                 // L^{-1} F
        Mat s = l.solve(x.transpose()).transpose();  // L^{-1} F L^{-T}
        grad(cc.vars[k]) -= weight[j] * s.trace();
        s_stack.col(k) = Eigen::Map<Vec>(s.data(), d * d);
      }
      Mat hloc = weight[j] * (s_stack.transpose() * s_stack);
      for (int a = 0; a < kn; ++a)
        for (int b = 0; b < kn; ++b) hess(cc.vars[a], cc.vars[b]) += hloc(a, b);
    }
  }
};

struct BarrierOutcome {
  bool ok = false;
  bool converged = false;
  bool last_stage_centered = false;
  Vec y;
  int newton_iters = 0;
  double gap = std::numeric_limits<double>::infinity();
  std::string message;
};

// Damped-Newton path following on
//   t * c^T y - sum_j weight_j * logdet G_j(y),
// from a strictly feasible start. stop_fn, when provided, allows early exit
// (used by phase 1 once the slack is deep enough inside the cone). t only
// advances after a centered stage; a stage that hits its iteration budget
// while still making progress is repeated at the same t.
BarrierOutcome barrier_minimize(const BarrierWork& work, const Vec& c, Vec y, double tol,
                                int max_newton,
                                const std::function<bool(const Vec&)>& stop_fn,
                                double logdet_weight_growth = 0.0, int logdet_block = -1,
                                int verbosity = 0, bool gap_relative_to_obj_only = false) {
  BarrierOutcome out;
  const double nu0 = work.barrier_nu();
  double nu_rest = nu0;
  if (logdet_block >= 0) nu_rest -= work.cp->constraints[logdet_block].dim;
  double t = 1.0;
  const double mu = 10.0;
  BarrierWork w = work;

  std::vector<Eigen::LLT<Mat>> llts;
  if (!w.factor(y, llts)) {
    out.message = "barrier: start point not strictly feasible";
    return out;
  }

  enum class StageEnd { Centered, CapMoving, Stalled };
  auto center_at = [&](double tt) -> StageEnd {
    for (int it = 0; it < 80; ++it) {
      if (out.newton_iters >= max_newton) return StageEnd::CapMoving;
      Vec grad;
      Mat hess;
      w.grad_hess(tt, c, y, llts, grad, hess);
      ++out.newton_iters;

      const double base = std::max(hess.diagonal().maxCoeff(), 1.0);
      const double f0 = w.barrier_value(tt, c, y, llts);
      double reg = 0.0;
      bool moved = false;
      std::vector<Eigen::LLT<Mat>> trial_llts;
      for (int tries = 0; tries < 12 && !moved; ++tries) {
        Mat h = hess;
        if (reg > 0.0) h += reg * Mat::Identity(h.rows(), h.cols());
        Eigen::LDLT<Mat> ldlt(h);
        Vec step;
        bool usable = false;
        if (ldlt.info() == Eigen::Success) {
          step = ldlt.solve(-grad);
          usable = step.allFinite() &&
                   (h * step + grad).norm() <= 1e-6 * (grad.norm() + 1e-300) &&
                   -grad.dot(step) >= 0.0;
        }
        if (usable) {
          double lambda2 = -grad.dot(step);
          if (reg == 0.0 && lambda2 * 0.5 <= 1e-9) return StageEnd::Centered;
          double alpha = 1.0;
          for (int ls = 0; ls < 60; ++ls) {
            Vec yt = y + alpha * step;
            if (w.factor(yt, trial_llts)) {
              double ft = w.barrier_value(tt, c, yt, trial_llts);
              if (ft <= f0 - 0.25 * alpha * lambda2 || ft < f0 - 1e-13 * std::abs(f0)) {
                y = yt;
                llts = std::move(trial_llts);
                moved = true;
                break;
              }
            }
            alpha *= 0.5;
          }
        }
        reg = (reg == 0.0) ? 1e-10 * base : reg * 100.0;
      }
      if (!moved) return StageEnd::Stalled;
      if (stop_fn && stop_fn(y)) return StageEnd::Centered;  // caller takes over
    }
    return StageEnd::CapMoving;
  };

  bool pure_center = (c.cwiseAbs().maxCoeff() == 0.0 && logdet_block < 0);
  int repeats = 0;
  for (int stage = 0; stage < 60;) {
    if (logdet_block >= 0) w.weight[logdet_block] = 1.0 + logdet_weight_growth * t;
    StageEnd end = center_at(t);
    out.last_stage_centered = (end == StageEnd::Centered);
    if (stop_fn && stop_fn(y)) {
      out.ok = true;
      out.converged = true;
      out.y = y;
      out.gap = nu_rest / t;
      return out;
    }
    if (pure_center) {
      out.ok = true;
      out.converged = true;
      out.y = y;
      out.gap = 0.0;
      return out;
    }
    double obj = c.dot(y);
    double gap = nu_rest / t;
    if (verbosity > 0) {
      std::fprintf(stderr, "[barrier] stage %d t=%.3e obj=%.9e gap=%.3e end=%d newton=%d\n",
                   stage, t, obj, gap, static_cast<int>(end), out.newton_iters);
    }
    if (end == StageEnd::Centered) {
      double gap_ref = gap_relative_to_obj_only ? std::abs(obj) : 1.0 + std::abs(obj);
      if (gap <= tol * gap_ref) {
        out.ok = true;
        out.converged = true;
        out.y = y;
        out.gap = gap;
        return out;
      }
      t *= mu;
      ++stage;
      repeats = 0;
      continue;
    }
    if (end == StageEnd::CapMoving && out.newton_iters < max_newton && repeats < 8) {
      ++repeats;  // keep centering at the same t
      continue;
    }
    // True stall (or budget exhausted): report the point with the last
    // trustworthy gap and let the caller judge.
    out.ok = true;
    out.y = y;
    out.gap = stage > 0 ? nu_rest / (t / mu) : std::numeric_limits<double>::infinity();
    out.message = "barrier: centering stalled at stage " + std::to_string(stage);
    return out;
  }
  out.ok = true;
  out.y = y;
  out.gap = nu_rest / (t / mu);
  out.message = "barrier: stage budget exhausted before reaching gap target";
  return out;
}

struct Phase1Result {
  bool feasible = false;
  Vec y;
  double slack = 0.0;  // final s (negative means strictly inside)
  int newton_iters = 0;
  std::string message;
};

bool w_feasible_start(const CompiledProblem& ext, const Vec& y) {
  for (const auto& cc : ext.constraints) {
    Mat g = eval_block(cc, y);
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) return false;
    if (Mat(llt.matrixL()).diagonal().minCoeff() <= 0.0) return false;
  }
  return true;
}

Phase1Result phase1(const CompiledProblem& cp, double target_margin, int max_newton,
                    int verbosity) {
  Phase1Result res;
  const int n = cp.num_scalars;
  // Extended problem over (y, s): G_j(y) + s I >= 0, minimize s.
  CompiledProblem ext = cp;
  ext.num_scalars = n + 1;
  ext.logdet_block = -1;
  double s0 = 0.0;
  for (auto& cc : ext.constraints) {
    Mat g0 = cc.f0;
    Eigen::SelfAdjointEigenSolver<Mat> es(g0, Eigen::EigenvaluesOnly);
    s0 = std::max(s0, -es.eigenvalues()(0));
    cc.vars.push_back(n);
    cc.fk.push_back(Mat::Identity(cc.dim, cc.dim));
  }
  s0 += 1.0;

  BarrierWork work;
  work.cp = &ext;
  work.weight.assign(ext.constraints.size(), 1.0);
  Vec c = Vec::Zero(n + 1);
  c(n) = 1.0;

  double deep = std::max(std::abs(target_margin), 1e-3);
  auto deep_enough = [&](const Vec& yt) { return yt(n) <= -deep; };
  if (std::getenv("MODUP_BARRIER_VERBOSE")) verbosity = 2;

  // The Tikhonov term keeps phase 1 from wandering along flat directions,
  // but problems whose feasible points need large gains must retry with a
  // weaker (then zero) pull.
  Vec warm = Vec::Zero(n + 1);
  warm(n) = s0;
  for (double reg : {1e-6, 0.0}) {
    work.reg_l2 = reg;
    Vec y = warm;
    BarrierOutcome out = barrier_minimize(work, c, y, 0.05, max_newton, deep_enough, 0.0, -1,
                                          verbosity, /*gap_relative_to_obj_only=*/true);
    if (out.y.size() == n + 1 && w_feasible_start(ext, out.y)) warm = out.y;
    res.newton_iters += out.newton_iters;
    if (!out.ok && out.y.size() == 0) {
      res.message = out.message;
      continue;
    }
    Vec yf = out.y.size() > 0 ? out.y : y;
    res.slack = yf(n);
    res.y = yf.head(n);
    if (res.slack < -1e-12) {
      res.feasible = true;
      return res;
    }
    bool certified = out.converged && res.slack - out.gap > 0.0;
    res.message = "phase 1 slack " + std::to_string(res.slack) + " (gap " +
                  std::to_string(out.gap) +
                  (certified ? "; infeasibility certified)" : "; no strictly feasible point found)");
  }
  return res;
}

// Scalars that appear in no constraint stay at zero; they would make the
// Newton system singular for nothing. Returns the kept-index map.
std::vector<int> drop_unused(CompiledProblem& cp) {
  const int n = cp.num_scalars;
  std::vector<bool> used(n, false);
  for (const auto& cc : cp.constraints)
    for (int k : cc.vars) used[k] = true;
  std::vector<int> keep;
  std::vector<int> remap(n, -1);
  for (int k = 0; k < n; ++k) {
    if (used[k]) {
      remap[k] = static_cast<int>(keep.size());
      keep.push_back(k);
    }
  }
  if (static_cast<int>(keep.size()) == n) return keep;
  for (auto& cc : cp.constraints)
    for (auto& k : cc.vars) k = remap[k];
  Vec c2(static_cast<int>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) c2(static_cast<int>(i)) = cp.c(keep[i]);
  cp.c = c2;
  cp.num_scalars = static_cast<int>(keep.size());
  return keep;
}

void equilibrate(CompiledProblem& cp, Vec& scale) {
  const int n = cp.num_scalars;
  scale = Vec::Ones(n);
  // Diagonal congruence per block: rows whose constant diagonal is huge get
  // shrunk so one large constant (squared unit mismatches, strict shifts)
  // cannot crush every other coefficient during normalization. Congruence
  // preserves the cone exactly.
  for (auto& cc : cp.constraints) {
    Vec d = Vec::Ones(cc.dim);
    bool any = false;
    for (int i = 0; i < cc.dim; ++i) {
      double a = std::abs(cc.f0(i, i));
      if (a > 1.0) {
        d(i) = 1.0 / std::sqrt(a);
        any = true;
      }
    }
    if (!any) continue;
    auto congr = [&](Mat& m) {
      for (int i = 0; i < cc.dim; ++i)
        for (int j = 0; j < cc.dim; ++j) m(i, j) *= d(i) * d(j);
    };
    congr(cc.f0);
    for (auto& m : cc.fk) congr(m);
  }
  // Per-constraint normalization by the constant block norm.
  for (auto& cc : cp.constraints) {
    double s = cc.f0.norm();
    if (s > 1.0) {
      double inv = 1.0 / s;
      cc.f0 *= inv;
      for (auto& m : cc.fk) m *= inv;
    }
  }
  Vec colnorm = Vec::Zero(n);
  for (const auto& cc : cp.constraints) {
    for (std::size_t k = 0; k < cc.vars.size(); ++k)
      colnorm(cc.vars[k]) += cc.fk[k].squaredNorm();
  }
  for (int k = 0; k < n; ++k) {
    double s = std::sqrt(colnorm(k));
    if (s > 1e-12) scale(k) = 1.0 / std::clamp(s, 1e-8, 1e12);
  }
  for (auto& cc : cp.constraints) {
    for (std::size_t k = 0; k < cc.vars.size(); ++k) cc.fk[k] *= scale(cc.vars[k]);
  }
  cp.c = cp.c.cwiseProduct(scale);
}

}  // namespace

const Mat& SdpSolution::value(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw DimensionError("SdpSolution: no variable named " + name);
  return it->second;
}

double SdpSolution::scalar(const std::string& name) const {
  const Mat& m = value(name);
  require(m.size() == 1, "SdpSolution::scalar: " + name + " is not scalar");
  return m(0, 0);
}

SdpSolution solve_compiled(const CompiledProblem& cp_in, const SolveOptions& opts) {
  SdpSolution sol;
  require(opts.tol > 0.0, "solve: tol must be positive");

  // Presolve: facial reduction of structurally degenerate blocks.
  ReducedProblem rp = facial_reduce(cp_in);
  if (rp.infeasible) {
    sol.status = SolveStatus::Infeasible;
    sol.message = rp.message;
    return sol;
  }
  CompiledProblem cp = rp.cp;
  std::vector<int> kept = drop_unused(cp);
  Vec eq_scale;
  if (opts.equilibrate)
    equilibrate(cp, eq_scale);
  else
    eq_scale = Vec::Ones(cp.num_scalars);

  auto recover = [&](const Vec& v) -> Vec {
    Vec full = Vec::Zero(rp.basis.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) full(kept[i]) = v(static_cast<int>(i)) * eq_scale(static_cast<int>(i));
    return rp.y_particular + rp.basis * full;
  };

  auto finalize = [&](const Vec& y_full, SolveStatus status, double gap, int iters,
                      const std::string& msg) {
    sol.status = status;
    sol.duality_gap = gap;
    sol.newton_iterations = iters;
    sol.message = msg;
    sol.objective = cp_in.c.dot(y_full) + cp_in.c0;
    for (const auto& v : cp_in.var_infos) {
      Mat m(v.rows, v.cols);
      if (v.shape == VarShape::Symmetric) {
        int s = v.offset;
        for (int i = 0; i < v.rows; ++i)
          for (int j = i; j < v.cols; ++j) {
            m(i, j) = y_full(s);
            m(j, i) = y_full(s);
            ++s;
          }
      } else {
        int s = v.offset;
        for (int i = 0; i < v.rows; ++i)
          for (int j = 0; j < v.cols; ++j) m(i, j) = y_full(s++);
      }
      sol.values[v.name] = std::move(m);
    }
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& cc : cp_in.constraints) {
      Mat g = eval_block(cc, y_full);
      // Margin in the original (unshifted) constraint.
      g += cc.applied_margin * Mat::Identity(cc.dim, cc.dim);
      Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
      double margin = cc.dim > 0 ? es.eigenvalues()(0) : 0.0;
      sol.residuals.push_back({cc.label, cc.dim, margin});
      worst = std::min(worst, margin);
    }
    sol.max_infeasibility = std::max(0.0, -worst);
  };

  if (cp.num_scalars == 0) {
    // Fully determined by the equalities; just check the blocks.
    Vec y_full = recover(Vec::Zero(0));
    bool ok = true;
    for (const auto& cc : cp.constraints) {
      if (cc.dim > 0 && min_eig(cc.f0) < -1e-12) ok = false;
    }
    finalize(y_full, ok ? SolveStatus::Feasible : SolveStatus::Infeasible, 0.0, 0,
             ok ? "determined by structural equalities" : "structurally infeasible");
    return sol;
  }

  Phase1Result p1 = phase1(cp, opts.feasibility_margin, opts.max_newton, opts.verbosity);
  if (!p1.feasible) {
    sol.status = SolveStatus::Infeasible;
    sol.newton_iterations = p1.newton_iters;
    sol.message = p1.message;
    return sol;
  }

  bool want_objective = cp.has_objective && cp.c.cwiseAbs().maxCoeff() > 0.0;
  if (!want_objective && cp.logdet_block < 0) {
    finalize(recover(p1.y), SolveStatus::Feasible, 0.0, p1.newton_iters,
             "feasible (phase 1 margin " + std::to_string(-p1.slack) + ")");
    return sol;
  }

  BarrierWork work;
  work.cp = &cp;
  work.weight.assign(cp.constraints.size(), 1.0);
  BarrierOutcome out = barrier_minimize(work, cp.c, p1.y, opts.tol, opts.max_newton, nullptr,
                                        cp.logdet_block >= 0 ? 1.0 : 0.0, cp.logdet_block,
                                        opts.verbosity);
  int iters = p1.newton_iters + out.newton_iters;
  if (out.y.size() == 0) {
    sol.status = SolveStatus::NumericalFailure;
    sol.newton_iterations = iters;
    sol.message = out.message;
    return sol;
  }
  Vec y_full = recover(out.y);
  // A run that stopped short of the gap target is only acceptable when it got
  // close; otherwise report it as a numerical failure with diagnostics.
  double obj = cp_in.c.dot(y_full) + cp_in.c0;
  bool close_enough =
      out.converged ||
      (out.last_stage_centered && out.gap <= 100.0 * opts.tol * (1.0 + std::abs(obj)));
  SolveStatus st = close_enough ? SolveStatus::Optimal : SolveStatus::NumericalFailure;
  finalize(y_full, st, out.gap, iters, out.message);
  return sol;
}

SdpSolution Problem::solve(const SolveOptions& opts) const {
  return solve_compiled(compile(opts), opts);
}

}  // namespace modup::lmi
