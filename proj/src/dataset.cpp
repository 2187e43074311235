#include "modup/dataset.hpp"

namespace modup {

void LabeledDataset::validate() const {
  require(count() >= 1, "LabeledDataset: need at least one sample");
  const int n = static_cast<int>(samples.front().x_hat.size());
  const int l = static_cast<int>(samples.front().u.size());
  const int ne = static_cast<int>(samples.front().eta_hat.size());
  require(v_eta.cols() == n, "LabeledDataset: v_eta column count");
  require(basis.input_dim == static_cast<int>(v_eta.rows()),
          "LabeledDataset: basis input dimension");
  for (const auto& s : samples) {
    require(s.x_hat.size() == n && s.u.size() == l && s.eta_hat.size() == ne,
            "LabeledDataset: inconsistent sample dimensions");
    if (!s.x_hat.allFinite() || !s.u.allFinite() || !s.eta_hat.allFinite()) {
      throw NumericalError("LabeledDataset: non-finite sample");
    }
  }
}

DataMatrix build_data_matrix(const LabeledDataset& ds) {
  ds.validate();
  DataMatrix dm;
  dm.n_veta = static_cast<int>(ds.v_eta.rows());
  dm.l = static_cast<int>(ds.samples.front().u.size());
  dm.n_label = static_cast<int>(ds.samples.front().eta_hat.size());
  dm.n_h = ds.basis.n_h();
  dm.sample_count = ds.count();
  const int q = dm.q();

  Mat d = Mat::Zero(q, q);
  Vec di(q);
  for (const auto& s : ds.samples) {
    Vec vx = ds.v_eta * s.x_hat;
    di.segment(dm.off_x(), dm.n_veta) = vx;
    di.segment(dm.off_u(), dm.l) = s.u;
    di.segment(dm.off_label(), dm.n_label) = s.eta_hat;
    if (dm.n_h > 0) di.segment(dm.off_h(), dm.n_h) = ds.basis.eval(vx, s.u);
    d.selfadjointView<Eigen::Lower>().rankUpdate(di);
  }
  dm.d = SymMatrix(Mat(d.selfadjointView<Eigen::Lower>()));
  dm.factor = psd_factor(dm.d, default_jitter(dm.d));
  return dm;
}

DataMatrix DataMatrix::lifted(const Mat& s) const {
  require(s.cols() == n_label, "DataMatrix::lifted: map column count");
  DataMatrix out;
  out.sample_count = sample_count;
  out.n_veta = n_veta;
  out.l = l;
  out.n_label = static_cast<int>(s.rows());
  out.n_h = n_h;
  const int q_new = out.q();
  Mat g = Mat::Zero(q_new, q());
  g.block(0, 0, n_veta + l, n_veta + l).setIdentity();
  g.block(out.off_label(), off_label(), s.rows(), s.cols()) = s;
  g.block(out.off_h(), off_h(), n_h, n_h).setIdentity();
  out.d = SymMatrix(g * d.mat() * g.transpose());
  out.factor = psd_factor(out.d, default_jitter(out.d));
  return out;
}

Mat residual_map(const UncertaintyModel& theta, const DataMatrix& dm) {
  require(theta.n_eta_l() == dm.n_label,
          "residual_map: model output dimension does not match the label block");
  require(theta.theta_l.cols() == dm.n_veta && theta.b_l.cols() == dm.l &&
              theta.theta_n.cols() == dm.n_h,
          "residual_map: model block dimensions do not match the data matrix");
  Mat t = Mat::Zero(dm.n_label, dm.q());
  t.block(0, dm.off_x(), dm.n_label, dm.n_veta) = theta.theta_l;
  t.block(0, dm.off_u(), dm.n_label, dm.l) = theta.b_l;
  t.block(0, dm.off_label(), dm.n_label, dm.n_label) = -Mat::Identity(dm.n_label, dm.n_label);
  if (dm.n_h > 0) t.block(0, dm.off_h(), dm.n_label, dm.n_h) = theta.theta_n;
  return t;
}

double model_fit_cost(const UncertaintyModel& theta, const DataMatrix& dm) {
  Mat t = residual_map(theta, dm);
  return (t * dm.d.mat() * t.transpose()).trace();
}

}  // namespace modup
