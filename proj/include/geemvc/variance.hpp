#pragma once

#include <vector>

#include "geemvc/equations.hpp"
#include "geemvc/model.hpp"

namespace geemvc {

// Slope matrix of the three stacked estimating equations.  The assembled form
// is block lower triangular:
//
//   [  A   0   0 ]
//   [ -B   C   0 ]
//   [ -D  -E   F ]
//
// with A = sum D1'V1^{-1}D1, C = sum D2'V2^{-1}D2, F = sum D3'V3^{-1}D3 and
// B, D, E built from the residual-transform derivatives.
struct SlopeMatrix {
  Mat A;  // p x p
  Mat B;  // r x p
  Mat C;  // r x r
  Mat D;  // q x p
  Mat E;  // q x r
  Mat F;  // q x q

  Mat assembled() const;
};

SlopeMatrix slope_matrix(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                         const LinkSpec& links, const VarianceFunction& vf,
                         const WorkingStructure& ws);

// Sum over clusters of the outer products of the stacked per-cluster
// estimating-function contributions.
Mat meat_matrix(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                const LinkSpec& links, const VarianceFunction& vf,
                const WorkingStructure& ws);

struct SandwichResult {
  SlopeMatrix sigma1;
  Mat sigma2;
  Mat v_yf;   // full block-triangular bread
  Mat v_lp;   // block-diagonal bread (B, D, E discarded)
  Vec se_yf;
  Vec se_lp;
};

// Both sandwich covariances from the same slope blocks and meat.  The bread
// is inverted by block forward substitution, so the triangular and diagonal
// variants share the A^{-1}, C^{-1}, F^{-1} factors.
SandwichResult assemble_sandwich(const SlopeMatrix& slope, const Mat& meat);

SandwichResult sandwich(const ClusterDataset& dataset, const ThetaVector& theta_hat,
                        const LinkSpec& links, const VarianceFunction& vf,
                        const WorkingStructure& ws);

// Scaled magnitudes of the off-diagonal slope blocks plus the distribution of
// the fitted pairwise correlations.  norm_b is scaled by the total unit
// count, norm_d / norm_e by the total pair count, so the numbers are
// per-observation averages comparable across cluster sizes.
struct BlockDiagnostics {
  double norm_b = 0.0;
  double norm_d = 0.0;
  double norm_e = 0.0;
  double rho_mean = 0.0;                 // mean fitted pairwise correlation
  std::vector<long> rho_histogram;       // counts over kRhoHistBins bins on [-1, 1]
  static constexpr int kRhoHistBins = 40;
  static std::vector<double> histogram_breaks();
};

BlockDiagnostics block_diagnostics(const ClusterDataset& dataset,
                                   const ThetaVector& theta_hat,
                                   const LinkSpec& links, const VarianceFunction& vf,
                                   const WorkingStructure& ws);

}  // namespace geemvc
