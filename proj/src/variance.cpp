#include "geemvc/variance.hpp"

#include <cmath>

namespace geemvc {

namespace {

Mat robust_inverse(const Mat& S, const char* what) {
  Eigen::LDLT<Mat> ldlt(S);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
    throw NumericError(std::string("non-identifiable component (singular ") +
                       what + " block)");
  return ldlt.solve(Mat::Identity(S.rows(), S.cols()));
}

}  // namespace

Mat SlopeMatrix::assembled() const {
  const Eigen::Index p = A.rows(), r = C.rows(), q = F.rows();
  Mat S = Mat::Zero(p + r + q, p + r + q);
  S.topLeftCorner(p, p) = A;
  S.block(p, 0, r, p) = -B;
  S.block(p, p, r, r) = C;
  S.block(p + r, 0, q, p) = -D;
  S.block(p + r, p, q, r) = -E;
  S.bottomRightCorner(q, q) = F;
  return S;
}

SlopeMatrix slope_matrix(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                         const LinkSpec& links, const VarianceFunction& vf,
                         const WorkingStructure& ws) {
  SlopeMatrix sm;
  sm.A = Mat::Zero(dataset.p, dataset.p);
  sm.B = Mat::Zero(dataset.r, dataset.p);
  sm.C = Mat::Zero(dataset.r, dataset.r);
  sm.D = Mat::Zero(dataset.q, dataset.p);
  sm.E = Mat::Zero(dataset.q, dataset.r);
  sm.F = Mat::Zero(dataset.q, dataset.q);

  for (int idx : dataset.id_order()) {
    const Cluster& c = dataset.clusters[idx];
    const ClusterQuantities cq = cluster_quantities(c, theta_hat, links, vf, ws);
    const ResidualDerivatives rd =
        score_residual_derivatives(c, theta_hat, links, vf);

    SymSolver v1(cq.V1);
    SymSolver v2(cq.V2);
    sm.A += cq.D1.transpose() * v1.solve(cq.D1);
    sm.B += cq.D2.transpose() * v2.solve(rd.ds_dbeta);
    sm.C += cq.D2.transpose() * v2.solve(cq.D2);
    if (c.pairs() > 0) {
      SymSolver v3(cq.V3);
      sm.D += cq.D3.transpose() * v3.solve(rd.dz_dbeta);
      sm.E += cq.D3.transpose() * v3.solve(rd.dz_dlambda);
      sm.F += cq.D3.transpose() * v3.solve(cq.D3);
    }
  }
  return sm;
}

Mat meat_matrix(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                const LinkSpec& links, const VarianceFunction& vf,
                const WorkingStructure& ws) {
  const int p = dataset.p, r = dataset.r, q = dataset.q;
  Mat meat = Mat::Zero(p + r + q, p + r + q);
  Vec g(p + r + q);

  for (int idx : dataset.id_order()) {
    const Cluster& c = dataset.clusters[idx];
    const ClusterQuantities cq = cluster_quantities(c, theta_hat, links, vf, ws);
    SymSolver v1(cq.V1);
    SymSolver v2(cq.V2);
    g.segment(0, p) = cq.D1.transpose() * v1.solve(cq.eps);
    g.segment(p, r) = cq.D2.transpose() * v2.solve(Vec(cq.s - cq.marg.phi));
    if (c.pairs() > 0) {
      SymSolver v3(cq.V3);
      g.segment(p + r, q) = cq.D3.transpose() * v3.solve(Vec(cq.z - cq.marg.rho));
    } else {
      g.segment(p + r, q).setZero();
    }
    meat += g * g.transpose();
  }
  return meat;
}

SandwichResult assemble_sandwich(const SlopeMatrix& slope, const Mat& meat) {
  const Eigen::Index p = slope.A.rows(), r = slope.C.rows(), q = slope.F.rows();

  const Mat Ai = robust_inverse(slope.A, "mean");
  const Mat Ci = robust_inverse(slope.C, "scale");
  const Mat Fi = q > 0 ? robust_inverse(slope.F, "correlation") : Mat(0, 0);

  // Block forward substitution for the triangular bread inverse.
  Mat M = Mat::Zero(p + r + q, p + r + q);
  M.topLeftCorner(p, p) = Ai;
  const Mat M21 = Ci * slope.B * Ai;
  M.block(p, 0, r, p) = M21;
  M.block(p, p, r, r) = Ci;
  if (q > 0) {
    M.block(p + r, 0, q, p) = Fi * (slope.D * Ai + slope.E * M21);
    M.block(p + r, p, q, r) = Fi * slope.E * Ci;
    M.bottomRightCorner(q, q) = Fi;
  }

  Mat Mlp = Mat::Zero(p + r + q, p + r + q);
  Mlp.topLeftCorner(p, p) = Ai;
  Mlp.block(p, p, r, r) = Ci;
  if (q > 0) Mlp.bottomRightCorner(q, q) = Fi;

  SandwichResult out;
  out.sigma1 = slope;
  out.sigma2 = meat;
  out.v_yf = M * meat * M.transpose();
  out.v_lp = Mlp * meat * Mlp.transpose();
  out.se_yf = out.v_yf.diagonal().cwiseMax(0.0).cwiseSqrt();
  out.se_lp = out.v_lp.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

SandwichResult sandwich(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                        const LinkSpec& links, const VarianceFunction& vf,
                        const WorkingStructure& ws) {
  return assemble_sandwich(slope_matrix(dataset, theta_hat, links, vf, ws),
                           meat_matrix(dataset, theta_hat, links, vf, ws));
}

std::vector<double> BlockDiagnostics::histogram_breaks() {
  std::vector<double> breaks(kRhoHistBins + 1);
  for (int i = 0; i <= kRhoHistBins; ++i)
    breaks[i] = -1.0 + 2.0 * i / kRhoHistBins;
  return breaks;
}

BlockDiagnostics block_diagnostics(const ClusterDataset& dataset,
                                   const ThetaVector& theta_hat,
                                   const LinkSpec& links, const VarianceFunction& vf,
                                   const WorkingStructure& ws) {
  const SlopeMatrix sm = slope_matrix(dataset, theta_hat, links, vf, ws);
  BlockDiagnostics out;
  const double units = static_cast<double>(dataset.total_units());
  const double pairs = static_cast<double>(dataset.total_pairs());
  out.norm_b = sm.B.norm() / units;
  out.norm_d = pairs > 0 ? sm.D.norm() / pairs : 0.0;
  out.norm_e = pairs > 0 ? sm.E.norm() / pairs : 0.0;

  out.rho_histogram.assign(BlockDiagnostics::kRhoHistBins, 0);
  double rho_sum = 0.0;
  std::int64_t count = 0;
  for (const auto& c : dataset.clusters) {
    if (c.pairs() == 0) continue;
    const Marginals m = evaluate_marginals(c, theta_hat, links, vf);
    for (int t = 0; t < c.pairs(); ++t) {
      const double rho = m.rho[t];
      rho_sum += rho;
      ++count;
      int bin = static_cast<int>((rho + 1.0) / 2.0 * BlockDiagnostics::kRhoHistBins);
      bin = std::clamp(bin, 0, BlockDiagnostics::kRhoHistBins - 1);
      ++out.rho_histogram[bin];
    }
  }
  out.rho_mean = count > 0 ? rho_sum / static_cast<double>(count) : 0.0;
  return out;
}

}  // namespace geemvc
