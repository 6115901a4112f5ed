#include "geemvc/equations.hpp"

#include <cmath>

namespace geemvc {

int repair_spd(Mat& S) {
  if (!S.allFinite())
    throw NumericError("irreparable working covariance (non-finite entries)");
  if (S.rows() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success)
    throw NumericError("irreparable working covariance (eigensolver failure)");
  if (es.eigenvalues().minCoeff() >= kPdEigenTol) return 0;
  Vec ev = es.eigenvalues().cwiseMax(kPdEigenFloor);
  S = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 1;
}

SymSolver::SymSolver(Mat S) {
  if (S.rows() == 0) return;
  llt_.compute(S);
  if (llt_.info() == Eigen::Success) return;
  repairs_ += repair_spd(S);
  llt_.compute(S);
  if (llt_.info() == Eigen::Success) return;
  // Pseudo-solve fallback; counts as a repair event.
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success)
    throw NumericError("irreparable working covariance");
  Vec ev = es.eigenvalues().cwiseMax(kPdEigenFloor);
  pinv_ = es.eigenvectors() * ev.cwiseInverse().asDiagonal() *
          es.eigenvectors().transpose();
  use_pinv_ = true;
  ++repairs_;
}

Mat SymSolver::solve(const Mat& B) const {
  if (B.rows() == 0) return B;
  return use_pinv_ ? Mat(pinv_ * B) : Mat(llt_.solve(B));
}

Vec SymSolver::solve(const Vec& b) const {
  if (b.size() == 0) return b;
  return use_pinv_ ? Vec(pinv_ * b) : Vec(llt_.solve(b));
}

Mat correlation_from_pairs(const Vec& rho, int m) {
  Mat R = Mat::Identity(m, m);
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k) {
      const double r = rho[Cluster::pair_row(j, k, m)];
      R(j, k) = r;
      R(k, j) = r;
    }
  return R;
}

namespace {

Mat scaled_correlation(const Vec& delta, const WorkingCorr& wc, int& repairs) {
  const int m = static_cast<int>(delta.size());
  const Vec half = delta.cwiseSqrt();
  if (wc.is_identity()) return Mat(delta.asDiagonal());
  Mat R = wc.matrix(m);
  Mat V = half.asDiagonal() * R * half.asDiagonal();
  repairs += repair_spd(V);
  return V;
}

}  // namespace

ClusterQuantities cluster_quantities(const Cluster& cluster, const ThetaVector& theta,
                                     const LinkSpec& links, const VarianceFunction& vf,
                                     const WorkingStructure& ws) {
  const int m = cluster.size();
  const int np = cluster.pairs();

  ClusterQuantities cq;
  cq.marg = evaluate_marginals(cluster, theta, links, vf);
  const Vec& mu = cq.marg.mu;
  const Vec& phi = cq.marg.phi;
  const Vec& rho = cq.marg.rho;
  const Vec& v = cq.marg.v;

  cq.eps = cluster.y - mu;
  cq.s = cq.eps.array().square() / v.array();

  const Vec sd = (phi.array() * v.array()).sqrt();
  cq.z.resize(np);
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k)
      cq.z[Cluster::pair_row(j, k, m)] = cq.eps[j] * cq.eps[k] / (sd[j] * sd[k]);

  const Vec eta1 = cluster.X1 * theta.beta;
  const Vec eta2 = cluster.X2 * theta.lambda;
  Vec d1(m), d2(m);
  for (int j = 0; j < m; ++j) {
    d1[j] = link_dinv(links.g1, eta1[j]);
    d2[j] = link_dinv(links.g2, eta2[j]);
  }
  cq.D1 = d1.asDiagonal() * cluster.X1;
  cq.D2 = d2.asDiagonal() * cluster.X2;

  if (np > 0) {
    const Vec eta3 = cluster.X3 * theta.gamma;
    Vec d3(np);
    for (int t = 0; t < np; ++t) d3[t] = link_dinv(links.g3, eta3[t]);
    cq.D3 = d3.asDiagonal() * cluster.X3;
  } else {
    cq.D3 = Mat(0, cluster.X3.cols());
  }

  // V1 = Delta1^{1/2} R1(rho) Delta1^{1/2},  Delta1 = diag(phi v)
  const Vec delta1 = phi.array() * v.array();
  if (m == 1) {
    cq.V1 = Mat(delta1.asDiagonal());
  } else {
    Mat R1 = correlation_from_pairs(rho, m);
    cq.pd_repairs += repair_spd(R1);
    const Vec half = delta1.cwiseSqrt();
    cq.V1 = half.asDiagonal() * R1 * half.asDiagonal();
  }

  // V2 = Delta2^{1/2} R2(u1) Delta2^{1/2},  Delta2 = diag(2 phi^2)
  const Vec delta2 = 2.0 * phi.array().square();
  cq.V2 = scaled_correlation(delta2, ws.r2, cq.pd_repairs);

  // V3: either Delta3^{1/2} R3(u2) Delta3^{1/2} with Delta3 = diag(1+rho^2),
  // or a plain identity.
  if (np == 0) {
    cq.V3 = Mat(0, 0);
  } else if (ws.v3_mode == V3Mode::PlainIdentity) {
    cq.V3 = Mat::Identity(np, np);
  } else {
    const Vec delta3 = 1.0 + rho.array().square();
    cq.V3 = scaled_correlation(delta3, ws.r3, cq.pd_repairs);
  }

  return cq;
}

EstimatingFunctions estimating_functions(const ClusterDataset& dataset,
                                         const ThetaVector& theta,
                                         const LinkSpec& links,
                                         const VarianceFunction& vf,
                                         const WorkingStructure& ws) {
  EstimatingFunctions out;
  out.u1 = Vec::Zero(dataset.p);
  out.u2 = Vec::Zero(dataset.r);
  out.u3 = Vec::Zero(dataset.q);

  for (int idx : dataset.id_order()) {
    const Cluster& c = dataset.clusters[idx];
    ClusterQuantities cq = cluster_quantities(c, theta, links, vf, ws);
    out.clamp_events += cq.marg.clamp_count;
    out.pd_repairs += cq.pd_repairs;

    SymSolver v1(cq.V1);
    SymSolver v2(cq.V2);
    out.u1 += cq.D1.transpose() * v1.solve(cq.eps);
    out.u2 += cq.D2.transpose() * v2.solve(Vec(cq.s - cq.marg.phi));
    if (c.pairs() > 0) {
      SymSolver v3(cq.V3);
      out.u3 += cq.D3.transpose() * v3.solve(Vec(cq.z - cq.marg.rho));
    }
    out.pd_repairs += v1.repairs() + v2.repairs();
  }
  return out;
}

ResidualDerivatives score_residual_derivatives(const Cluster& cluster,
                                               const ThetaVector& theta,
                                               const LinkSpec& links,
                                               const VarianceFunction& vf) {
  const int m = cluster.size();
  const int np = cluster.pairs();
  const int p = static_cast<int>(cluster.X1.cols());
  const int r = static_cast<int>(cluster.X2.cols());

  const Marginals marg = evaluate_marginals(cluster, theta, links, vf);
  const Vec eps = cluster.y - marg.mu;

  const Vec eta1 = cluster.X1 * theta.beta;
  const Vec eta2 = cluster.X2 * theta.lambda;
  Vec d1(m), d2(m), dvdmu(m);
  for (int j = 0; j < m; ++j) {
    d1[j] = link_dinv(links.g1, eta1[j]);
    d2[j] = link_dinv(links.g2, eta2[j]);
    dvdmu[j] = vf.deriv(marg.mu[j]);
  }
  const Mat D1 = d1.asDiagonal() * cluster.X1;
  const Mat D2 = d2.asDiagonal() * cluster.X2;

  ResidualDerivatives out;
  out.ds_dbeta.resize(m, p);
  out.dz_dbeta.resize(np, p);
  out.dz_dlambda.resize(np, r);

  // ds_ij/dbeta = [-2 D1_ij eps_ij v_ij - eps_ij^2 (dv/dmu)_ij D1_ij] / v_ij^2
  for (int j = 0; j < m; ++j) {
    const double vj = marg.v[j];
    const double coef = (-2.0 * eps[j] * vj - eps[j] * eps[j] * dvdmu[j]) / (vj * vj);
    out.ds_dbeta.row(j) = coef * D1.row(j);
  }

  const Vec sd = (marg.phi.array() * marg.v.array()).sqrt();
  for (int j = 0; j < m; ++j) {
    for (int k = j + 1; k < m; ++k) {
      const int t = Cluster::pair_row(j, k, m);
      const double denom = sd[j] * sd[k];
      // dz_ijk/dbeta = [-D1_ij eps_ik - D1_ik eps_ij
      //                 - (eps_ij eps_ik / 2)(dv_j D1_ij / v_j + dv_k D1_ik / v_k)]
      //                / sqrt(phi_j v_j phi_k v_k)
      out.dz_dbeta.row(t) =
          (-eps[k] * D1.row(j) - eps[j] * D1.row(k) -
           0.5 * eps[j] * eps[k] *
               (dvdmu[j] / marg.v[j] * D1.row(j) + dvdmu[k] / marg.v[k] * D1.row(k))) /
          denom;
      // dz_ijk/dlambda = -(eps_ij eps_ik / (2 denom)) (D2_ij/phi_j + D2_ik/phi_k)
      out.dz_dlambda.row(t) =
          -(eps[j] * eps[k] / (2.0 * denom)) *
          (D2.row(j) / marg.phi[j] + D2.row(k) / marg.phi[k]);
    }
  }
  return out;
}

}  // namespace geemvc
