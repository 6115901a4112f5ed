#pragma once

#include "geemvc/model.hpp"

namespace geemvc {

// Eigenvalue floor policy for constructed correlation / working covariance
// matrices: anything below kPdEigenTol gets projected up to kPdEigenFloor.
inline constexpr double kPdEigenTol = 1e-8;
inline constexpr double kPdEigenFloor = 1e-6;

// Floors the eigenvalues of a symmetric matrix in place.  Returns 1 when a
// repair was needed, 0 otherwise.  Throws NumericError when the input is not
// finite (irreparable).
int repair_spd(Mat& S);

// Symmetric positive-definite solver: LLT first, eigenvalue repair + retry,
// pseudo-solve as a last resort.
class SymSolver {
 public:
  explicit SymSolver(Mat S);

  Mat solve(const Mat& B) const;
  Vec solve(const Vec& b) const;
  int repairs() const { return repairs_; }

 private:
  Eigen::LLT<Mat> llt_;
  Mat pinv_;  // used only when LLT fails even after repair
  bool use_pinv_ = false;
  int repairs_ = 0;
};

// Per-cluster residual transforms, derivative matrices and working
// covariances at a given theta.
struct ClusterQuantities {
  Marginals marg;
  Vec eps;  // y - mu
  Vec s;    // eps^2 / v
  Vec z;    // eps_j eps_k / sqrt(phi_j v_j phi_k v_k), pair order
  Mat D1;   // d mu / d beta^T      (m x p)
  Mat D2;   // d phi / d lambda^T   (m x r)
  Mat D3;   // d rho / d gamma^T    (pairs x q)
  Mat V1;   // working cov of y     (m x m)
  Mat V2;   // working cov of s     (m x m)
  Mat V3;   // working cov of z     (pairs x pairs)
  int pd_repairs = 0;
};

ClusterQuantities cluster_quantities(const Cluster& cluster, const ThetaVector& theta,
                                     const LinkSpec& links, const VarianceFunction& vf,
                                     const WorkingStructure& ws);

// The three stacked estimating functions summed over clusters in id order.
struct EstimatingFunctions {
  Vec u1;  // p
  Vec u2;  // r
  Vec u3;  // q
  long clamp_events = 0;
  long pd_repairs = 0;
};

EstimatingFunctions estimating_functions(const ClusterDataset& dataset,
                                         const ThetaVector& theta,
                                         const LinkSpec& links,
                                         const VarianceFunction& vf,
                                         const WorkingStructure& ws);

// Partial derivatives of the residual transforms with respect to upstream
// parameters, needed by the off-diagonal slope blocks.
struct ResidualDerivatives {
  Mat ds_dbeta;    // m x p
  Mat dz_dbeta;    // pairs x p
  Mat dz_dlambda;  // pairs x r
};

ResidualDerivatives score_residual_derivatives(const Cluster& cluster,
                                               const ThetaVector& theta,
                                               const LinkSpec& links,
                                               const VarianceFunction& vf);

// Correlation matrix of a cluster from its stacked pairwise correlations.
Mat correlation_from_pairs(const Vec& rho, int m);

}  // namespace geemvc
