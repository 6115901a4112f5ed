#pragma once

#include <array>
#include <optional>
#include <vector>

#include "geemvc/equations.hpp"
#include "geemvc/model.hpp"

namespace geemvc {

struct FitOptions {
  int max_iter = 100;
  double tol = 1e-8;  // max-norm of the stacked theta update
  std::optional<ThetaVector> init;
};

struct FitResult {
  ThetaVector theta;
  bool converged = false;
  int iterations = 0;
  std::vector<double> update_trace;  // max-norm of the applied update per sweep
  long clamp_count = 0;
  long pd_repair_count = 0;
  std::array<double, 3> u_norms{0, 0, 0};  // max-abs of U1, U2, U3 at theta
  bool clamped_at_solution = false;
};

// Starting values: working-independence GEE for beta, a moment-matched scale
// intercept for lambda, zero correlation for gamma.
ThetaVector initialize(const ClusterDataset& dataset, const LinkSpec& links,
                       const VarianceFunction& vf);

// Successive Fisher-scoring-style updates beta -> lambda -> gamma per sweep,
// each step using the most recently updated estimates.
FitResult fit(const ClusterDataset& dataset, const LinkSpec& links,
              const VarianceFunction& vf, const WorkingStructure& ws,
              const FitOptions& opts = {});

// Updates only `comp`, holding the other two components fixed at `pinned`.
// The dataset is expected to carry the (possibly restricted) design for the
// component being refit; `pinned`'s entries for the other components must
// match the dataset's dimensions.  Used by marginal model selection.
FitResult fit_component(const ClusterDataset& dataset, const LinkSpec& links,
                        const VarianceFunction& vf, const WorkingStructure& ws,
                        Component comp, const ThetaVector& pinned,
                        const FitOptions& opts = {});

}  // namespace geemvc
