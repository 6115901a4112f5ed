#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geemvc/fitter.hpp"
#include "geemvc/variance.hpp"

namespace geemvc {

enum class PenaltyScale { LogN, Two };
enum class VarianceFlavor { YF, LP };
enum class SelectionStrategy { LicJoint, LicMarginal, QicYF, QicLP };

std::string strategy_name(SelectionStrategy s);
std::string penalty_name(PenaltyScale p);

// Active-column masks per component; index 0 (the intercept position) is
// always forced on.
struct CandidateSupport {
  std::vector<bool> mean_mask;
  std::vector<bool> scale_mask;
  std::vector<bool> corr_mask;

  static CandidateSupport full(int p, int r, int q);
  void validate() const;
  int active_count() const;
  bool operator==(const CandidateSupport&) const = default;
};

struct CriterionValue {
  CandidateSupport support;
  double loss = 0.0;     // lack-of-fit term (-2Q for QIC)
  double penalty = 0.0;  // complexity term
  double total = 0.0;
  bool feasible = true;
  std::string note;
};

struct SelectionOptions {
  FitOptions fit_opts{};
  PenaltyScale penalty = PenaltyScale::LogN;
  bool symmetrize_slope = false;  // replace Sigma1 by its symmetric part
  std::int64_t max_joint_candidates = std::int64_t(1) << 20;
};

// Full-model artifacts shared by every candidate evaluation.
struct FullFitContext {
  FitResult fit;
  SlopeMatrix slope;
  Mat meat;
  SandwichResult sand;
};

FullFitContext full_fit_context(const ClusterDataset& dataset, const LinkSpec& links,
                                const VarianceFunction& vf, const WorkingStructure& ws,
                                const FitOptions& opts = {});

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

// Joint criterion: quadratic lack of fit of the zero-padded candidate
// estimate against the full model under the full slope matrix, plus
// scale * tr(Sigma1_c V_c) with the candidate's own slope and triangular-bread
// sandwich.
CriterionValue lic_joint(const ClusterDataset& dataset, const LinkSpec& links,
                         const VarianceFunction& vf, const WorkingStructure& ws,
                         const FullFitContext& ctx, const CandidateSupport& candidate,
                         const SelectionOptions& opts = {});

// Marginal criterion for one component; the other two components stay pinned
// at their full-model estimates and the slope/variance matrices are restricted
// to the component under consideration.
CriterionValue lic_marginal(const ClusterDataset& dataset, const LinkSpec& links,
                            const VarianceFunction& vf, const WorkingStructure& ws,
                            const FullFitContext& ctx, Component comp,
                            const std::vector<bool>& mask,
                            const SelectionOptions& opts = {});

// Quasi-likelihood criterion for one component: -2 Q + scale * tr(Omega V),
// where Omega is the negative Hessian of the quasi-likelihood at the
// candidate estimate and V the chosen sandwich flavor's component block.
CriterionValue qic(const ClusterDataset& dataset, const LinkSpec& links,
                   const VarianceFunction& vf, const WorkingStructure& ws,
                   const FullFitContext& ctx, Component comp,
                   const std::vector<bool>& mask, VarianceFlavor flavor,
                   const SelectionOptions& opts = {});

// ---------------------------------------------------------------------------
// Subset search
// ---------------------------------------------------------------------------

struct SelectionResult {
  SelectionStrategy strategy{};
  PenaltyScale penalty{};
  CandidateSupport chosen;
  ThetaVector theta_padded;  // winner refit, zero-padded to full dimensions
  FitResult refit;           // joint refit on the winning support
  std::vector<CriterionValue> candidates;
  int infeasible_count = 0;
};

// Enumerates candidate supports (intercepts forced), refits each, and returns
// the argmin by total; ties broken by fewer active parameters, then by
// lexicographically smaller mask.
SelectionResult select(const ClusterDataset& dataset, const LinkSpec& links,
                       const VarianceFunction& vf, const WorkingStructure& ws,
                       SelectionStrategy strategy, const SelectionOptions& opts = {});

// ---------------------------------------------------------------------------
// Restriction helpers and quasi-likelihood primitives (shared with tests and
// the simulation study)
// ---------------------------------------------------------------------------

ClusterDataset restrict_dataset(const ClusterDataset& ds, const CandidateSupport& support);
ClusterDataset restrict_component(const ClusterDataset& ds, Component comp,
                                  const std::vector<bool>& mask);
Vec pad_with_zeros(const Vec& restricted, const std::vector<bool>& mask);
Vec restrict_vector(const Vec& full, const std::vector<bool>& mask);
ThetaVector restrict_theta(const ThetaVector& theta, const CandidateSupport& support);
ThetaVector pad_theta(const ThetaVector& theta_c, const CandidateSupport& support);

// Enumerate all masks of length k with index 0 forced on, in increasing
// order of the free-column bit pattern.
std::vector<std::vector<bool>> enumerate_masks(int k);

// Quasi-likelihood kernels.  q1 integrates (y-t)/(phi v(t)) from y to mu
// (closed form for a constant variance function, adaptive quadrature
// otherwise); q2 and q3 are closed forms.
double q1_unit(double y, double mu_hat, double phi_tilde, const VarianceFunction& vf);
double q2_unit(double s_tilde, double phi_hat);
double q3_pair(double z_tilde, double rho_hat);

// Internal batched evaluation used by the simulation study so that every
// method / penalty combination reuses the same candidate refits.
struct MarginalCandidateArtifacts {
  std::vector<bool> mask;
  bool feasible = true;
  std::string note;
  Vec estimate;      // restricted component estimate
  double lic_loss = 0.0;
  double lic_trace = 0.0;
  double q_value = 0.0;
  double qic_trace_yf = 0.0;
  double qic_trace_lp = 0.0;
};

struct JointCandidateArtifacts {
  CandidateSupport support;
  bool feasible = true;
  std::string note;
  double loss = 0.0;
  double trace = 0.0;
};

struct SelectionSweep {
  FullFitContext ctx;
  std::vector<JointCandidateArtifacts> joint;
  std::array<std::vector<MarginalCandidateArtifacts>, 3> marginal;
};

SelectionSweep selection_sweep(const ClusterDataset& dataset, const LinkSpec& links,
                               const VarianceFunction& vf, const WorkingStructure& ws,
                               const SelectionOptions& opts, bool want_joint,
                               bool want_marginal, bool parallel_candidates = false);

double penalty_scale_value(PenaltyScale p, int n_clusters);

// Winner masks from precomputed artifacts (exposed for the study driver).
CandidateSupport pick_joint_winner(const SelectionSweep& sweep, double scale);
CandidateSupport pick_marginal_winner(const SelectionSweep& sweep, double scale,
                                      SelectionStrategy strategy);

}  // namespace geemvc
