#include "geemvc/selection.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace geemvc {

std::string strategy_name(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::LicJoint: return "lic-joint";
    case SelectionStrategy::LicMarginal: return "lic-marginal";
    case SelectionStrategy::QicYF: return "qic-yf";
    case SelectionStrategy::QicLP: return "qic-lp";
  }
  return "lic-joint";
}

std::string penalty_name(PenaltyScale p) {
  return p == PenaltyScale::LogN ? "bic" : "aic";
}

double penalty_scale_value(PenaltyScale p, int n_clusters) {
  return p == PenaltyScale::LogN ? std::log(static_cast<double>(n_clusters)) : 2.0;
}

// ---------------------------------------------------------------------------
// Support handling
// ---------------------------------------------------------------------------

CandidateSupport CandidateSupport::full(int p, int r, int q) {
  CandidateSupport s;
  s.mean_mask.assign(p, true);
  s.scale_mask.assign(r, true);
  s.corr_mask.assign(q, true);
  return s;
}

void CandidateSupport::validate() const {
  for (const auto* m : {&mean_mask, &scale_mask, &corr_mask}) {
    if (m->empty() || !(*m)[0])
      throw ConfigError("candidate support must keep the leading (intercept) column");
  }
}

int CandidateSupport::active_count() const {
  auto cnt = [](const std::vector<bool>& m) {
    return static_cast<int>(std::count(m.begin(), m.end(), true));
  };
  return cnt(mean_mask) + cnt(scale_mask) + cnt(corr_mask);
}

std::vector<std::vector<bool>> enumerate_masks(int k) {
  std::vector<std::vector<bool>> out;
  const int free_cols = k - 1;
  out.reserve(std::size_t(1) << free_cols);
  for (std::uint64_t bits = 0; bits < (std::uint64_t(1) << free_cols); ++bits) {
    std::vector<bool> mask(k, false);
    mask[0] = true;
    for (int j = 0; j < free_cols; ++j) mask[j + 1] = (bits >> j) & 1;
    out.push_back(std::move(mask));
  }
  return out;
}

Vec restrict_vector(const Vec& full, const std::vector<bool>& mask) {
  Vec out(std::count(mask.begin(), mask.end(), true));
  int t = 0;
  for (size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) out[t++] = full[static_cast<Eigen::Index>(j)];
  return out;
}

Vec pad_with_zeros(const Vec& restricted, const std::vector<bool>& mask) {
  Vec out = Vec::Zero(static_cast<Eigen::Index>(mask.size()));
  int t = 0;
  for (size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) out[static_cast<Eigen::Index>(j)] = restricted[t++];
  return out;
}

namespace {

Mat select_columns(const Mat& X, const std::vector<bool>& mask) {
  Mat out(X.rows(), std::count(mask.begin(), mask.end(), true));
  int t = 0;
  for (size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) out.col(t++) = X.col(static_cast<Eigen::Index>(j));
  return out;
}

}  // namespace

ClusterDataset restrict_dataset(const ClusterDataset& ds, const CandidateSupport& support) {
  support.validate();
  std::vector<Cluster> cs;
  cs.reserve(ds.clusters.size());
  for (const auto& c : ds.clusters) {
    Cluster rc;
    rc.id = c.id;
    rc.y = c.y;
    rc.X1 = select_columns(c.X1, support.mean_mask);
    rc.X2 = select_columns(c.X2, support.scale_mask);
    rc.X3 = select_columns(c.X3, support.corr_mask);
    cs.push_back(std::move(rc));
  }
  const int p = static_cast<int>(std::count(support.mean_mask.begin(), support.mean_mask.end(), true));
  const int r = static_cast<int>(std::count(support.scale_mask.begin(), support.scale_mask.end(), true));
  const int q = static_cast<int>(std::count(support.corr_mask.begin(), support.corr_mask.end(), true));
  return ClusterDataset(std::move(cs), p, r, q);
}

ClusterDataset restrict_component(const ClusterDataset& ds, Component comp,
                                  const std::vector<bool>& mask) {
  CandidateSupport s = CandidateSupport::full(ds.p, ds.r, ds.q);
  (comp == Component::Mean ? s.mean_mask
   : comp == Component::Scale ? s.scale_mask
                              : s.corr_mask) = mask;
  return restrict_dataset(ds, s);
}

ThetaVector restrict_theta(const ThetaVector& theta, const CandidateSupport& support) {
  return ThetaVector(restrict_vector(theta.beta, support.mean_mask),
                     restrict_vector(theta.lambda, support.scale_mask),
                     restrict_vector(theta.gamma, support.corr_mask));
}

ThetaVector pad_theta(const ThetaVector& theta_c, const CandidateSupport& support) {
  return ThetaVector(pad_with_zeros(theta_c.beta, support.mean_mask),
                     pad_with_zeros(theta_c.lambda, support.scale_mask),
                     pad_with_zeros(theta_c.gamma, support.corr_mask));
}

// ---------------------------------------------------------------------------
// Quasi-likelihood kernels
// ---------------------------------------------------------------------------

namespace {

// Adaptive Simpson quadrature; the integrands here are smooth.
template <typename F>
double simpson_step(const F& f, double a, double m, double b, double fa, double fm,
                    double fb, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson_step(f, a, lm, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson_step(f, m, rm, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double result = simpson_step(f, a, m, b, fa, fm, fb, whole, tol, 48);
  if (!std::isfinite(result)) throw NumericError("quadrature non-convergence");
  return result;
}

constexpr double kSTildeFloor = 1e-12;

}  // namespace

double q1_unit(double y, double mu_hat, double phi_tilde, const VarianceFunction& vf) {
  if (vf.kind == VarKind::ConstantOne)
    return -(y - mu_hat) * (y - mu_hat) / (2.0 * phi_tilde);
  return adaptive_simpson(
      [&](double t) { return (y - t) / (phi_tilde * vf.value(t)); }, y, mu_hat,
      1e-12);
}

double q2_unit(double s_tilde, double phi_hat) {
  const double s = std::max(s_tilde, kSTildeFloor);
  return 0.5 * (1.0 - s / phi_hat - std::log(phi_hat / s));
}

double q3_pair(double z_tilde, double rho_hat) {
  return z_tilde * (std::atan(rho_hat) - std::atan(z_tilde)) -
         0.5 * std::log((1.0 + rho_hat * rho_hat) / (1.0 + z_tilde * z_tilde));
}

// ---------------------------------------------------------------------------
// Internal evaluation machinery
// ---------------------------------------------------------------------------

namespace {

struct ComponentSpan {
  Eigen::Index offset;
  Eigen::Index dim;
};

ComponentSpan component_span(const ClusterDataset& ds, Component comp) {
  switch (comp) {
    case Component::Mean: return {0, ds.p};
    case Component::Scale: return {ds.p, ds.r};
    case Component::Corr: return {ds.p + ds.r, ds.q};
  }
  return {0, ds.p};
}

const Mat& diagonal_block(const SlopeMatrix& sm, Component comp) {
  switch (comp) {
    case Component::Mean: return sm.A;
    case Component::Scale: return sm.C;
    case Component::Corr: return sm.F;
  }
  return sm.A;
}

Mat maybe_symmetrize(const Mat& S, bool symmetrize) {
  if (!symmetrize) return S;
  return 0.5 * (S + S.transpose());
}

// Marginal quantities of the full fit needed as plug-ins by the
// quasi-likelihoods: phi-tilde, s-tilde, z-tilde per cluster.
struct TildeQuantities {
  std::vector<Vec> mu, phi, s, z;
};

TildeQuantities tilde_quantities(const ClusterDataset& ds, const ThetaVector& theta_f,
                                 const LinkSpec& links, const VarianceFunction& vf) {
  TildeQuantities tq;
  tq.mu.reserve(ds.clusters.size());
  for (const auto& c : ds.clusters) {
    const Marginals m = evaluate_marginals(c, theta_f, links, vf);
    const Vec eps = c.y - m.mu;
    Vec s = eps.array().square() / m.v.array();
    const Vec sd = (m.phi.array() * m.v.array()).sqrt();
    Vec z(c.pairs());
    for (int j = 0; j < c.size(); ++j)
      for (int k = j + 1; k < c.size(); ++k)
        z[Cluster::pair_row(j, k, c.size())] = eps[j] * eps[k] / (sd[j] * sd[k]);
    tq.mu.push_back(m.mu);
    tq.phi.push_back(m.phi);
    tq.s.push_back(std::move(s));
    tq.z.push_back(std::move(z));
  }
  return tq;
}

// Negative Hessian of the component quasi-likelihood at the candidate
// estimate, on the restricted design.
Mat qic_omega(const ClusterDataset& comp_ds, Component comp,
              const ThetaVector& comp_theta, const LinkSpec& links,
              const VarianceFunction& vf, const TildeQuantities& tq) {
  const Eigen::Index dim = comp == Component::Mean ? comp_ds.p
                           : comp == Component::Scale ? comp_ds.r
                                                      : comp_ds.q;
  Mat omega = Mat::Zero(dim, dim);

  for (size_t ci = 0; ci < comp_ds.clusters.size(); ++ci) {
    const Cluster& c = comp_ds.clusters[ci];
    const Marginals m = evaluate_marginals(c, comp_theta, links, vf);
    switch (comp) {
      case Component::Mean: {
        const Vec eta = c.X1 * comp_theta.beta;
        for (int j = 0; j < c.size(); ++j) {
          const double mu = m.mu[j];
          const double vj = vf.value(mu);
          const double dvj = vf.deriv(mu);
          const double eps = c.y[j] - mu;
          const double phi_t = tq.phi[ci][j];
          const double dmu = link_dinv(links.g1, eta[j]);
          const auto x = c.X1.row(j);
          double w = (vj + eps * dvj) / (phi_t * vj * vj) * dmu * dmu;
          if (links.g1 == Link::Log) w -= eps / (phi_t * vj) * mu;  // d2mu = mu x x'
          omega.noalias() += w * x.transpose() * x;
        }
        break;
      }
      case Component::Scale: {
        for (int j = 0; j < c.size(); ++j) {
          const double phi = m.phi[j];
          const double st = std::max(tq.s[ci][j], kSTildeFloor);
          const auto x = c.X2.row(j);
          double w;
          if (links.g2 == Link::Log) {
            w = st / (2.0 * phi);
          } else {
            w = (2.0 * st - phi) / (2.0 * phi * phi * phi);
          }
          omega.noalias() += w * x.transpose() * x;
        }
        break;
      }
      case Component::Corr: {
        for (int t = 0; t < c.pairs(); ++t) {
          const double rho = m.rho[t];
          const double zt = tq.z[ci][t];
          const double opr2 = 1.0 + rho * rho;
          const auto x = c.X3.row(t);
          double w;
          if (links.g3 == Link::Identity) {
            w = (1.0 + 2.0 * zt * rho - rho * rho) / (opr2 * opr2);
          } else {
            const double omr2 = 1.0 - rho * rho;  // d rho / d eta for fisher-z
            w = (1.0 + 2.0 * zt * rho - rho * rho) * omr2 * omr2 / (opr2 * opr2) +
                2.0 * rho * omr2 * (zt - rho) / opr2;
          }
          omega.noalias() += w * x.transpose() * x;
        }
        break;
      }
    }
  }
  return omega;
}

double component_q_value(const ClusterDataset& comp_ds, Component comp,
                         const ThetaVector& comp_theta, const LinkSpec& links,
                         const VarianceFunction& vf, const TildeQuantities& tq) {
  double q = 0.0;
  for (size_t ci = 0; ci < comp_ds.clusters.size(); ++ci) {
    const Cluster& c = comp_ds.clusters[ci];
    const Marginals m = evaluate_marginals(c, comp_theta, links, vf);
    switch (comp) {
      case Component::Mean:
        for (int j = 0; j < c.size(); ++j)
          q += q1_unit(c.y[j], m.mu[j], tq.phi[ci][j], vf);
        break;
      case Component::Scale:
        for (int j = 0; j < c.size(); ++j) q += q2_unit(tq.s[ci][j], m.phi[j]);
        break;
      case Component::Corr:
        for (int t = 0; t < c.pairs(); ++t) q += q3_pair(tq.z[ci][t], m.rho[t]);
        break;
    }
  }
  return q;
}

MarginalCandidateArtifacts evaluate_marginal_candidate(
    const ClusterDataset& ds, const LinkSpec& links, const VarianceFunction& vf,
    const WorkingStructure& ws, const FullFitContext& ctx, Component comp,
    const std::vector<bool>& mask, const TildeQuantities& tq,
    const SelectionOptions& opts) {
  MarginalCandidateArtifacts art;
  art.mask = mask;
  try {
    const ClusterDataset comp_ds = restrict_component(ds, comp, mask);
    ThetaVector pinned = ctx.fit.theta;
    pinned.part(comp) = restrict_vector(ctx.fit.theta.part(comp), mask);

    FitResult fr =
        fit_component(comp_ds, links, vf, ws, comp, pinned, opts.fit_opts);
    if (!fr.converged) {
      art.feasible = false;
      art.note = "component refit did not converge";
      return art;
    }
    art.estimate = fr.theta.part(comp);

    // LIC lack of fit under the full-model component slope block.
    const Vec padded = pad_with_zeros(art.estimate, mask);
    const Vec df = padded - ctx.fit.theta.part(comp);
    const Mat Sf = maybe_symmetrize(diagonal_block(ctx.slope, comp), opts.symmetrize_slope);
    art.lic_loss = df.dot(Sf * df);

    // Candidate slope / sandwich on the composite model.
    const SlopeMatrix slope_c = slope_matrix(comp_ds, fr.theta, links, vf, ws);
    const Mat meat_c = meat_matrix(comp_ds, fr.theta, links, vf, ws);
    const SandwichResult sand_c = assemble_sandwich(slope_c, meat_c);
    const ComponentSpan span = component_span(comp_ds, comp);
    const Mat v_yf = sand_c.v_yf.block(span.offset, span.offset, span.dim, span.dim);
    const Mat v_lp = sand_c.v_lp.block(span.offset, span.offset, span.dim, span.dim);
    const Mat Sc = maybe_symmetrize(diagonal_block(slope_c, comp), opts.symmetrize_slope);
    art.lic_trace = (Sc * v_yf).trace();

    // QIC pieces on the same refit.
    art.q_value = component_q_value(comp_ds, comp, fr.theta, links, vf, tq);
    const Mat omega = qic_omega(comp_ds, comp, fr.theta, links, vf, tq);
    art.qic_trace_yf = (omega * v_yf).trace();
    art.qic_trace_lp = (omega * v_lp).trace();

    if (!std::isfinite(art.lic_loss) || !std::isfinite(art.lic_trace) ||
        !std::isfinite(art.q_value) || !std::isfinite(art.qic_trace_yf) ||
        !std::isfinite(art.qic_trace_lp)) {
      art.feasible = false;
      art.note = "non-finite criterion value";
    }
  } catch (const std::exception& e) {
    art.feasible = false;
    art.note = e.what();
  }
  return art;
}

JointCandidateArtifacts evaluate_joint_candidate(const ClusterDataset& ds,
                                                 const LinkSpec& links,
                                                 const VarianceFunction& vf,
                                                 const WorkingStructure& ws,
                                                 const FullFitContext& ctx,
                                                 const CandidateSupport& support,
                                                 const SelectionOptions& opts) {
  JointCandidateArtifacts art;
  art.support = support;
  try {
    const ClusterDataset rds = restrict_dataset(ds, support);
    FitOptions fo = opts.fit_opts;
    fo.init = restrict_theta(ctx.fit.theta, support);
    const FitResult fr = fit(rds, links, vf, ws, fo);
    if (!fr.converged) {
      art.feasible = false;
      art.note = "candidate refit did not converge";
      return art;
    }

    const Vec d = pad_theta(fr.theta, support).stacked() - ctx.fit.theta.stacked();
    const Mat Sf = maybe_symmetrize(ctx.slope.assembled(), opts.symmetrize_slope);
    art.loss = d.dot(Sf * d);

    const SlopeMatrix slope_c = slope_matrix(rds, fr.theta, links, vf, ws);
    const Mat meat_c = meat_matrix(rds, fr.theta, links, vf, ws);
    const SandwichResult sand_c = assemble_sandwich(slope_c, meat_c);
    const Mat Sc = maybe_symmetrize(slope_c.assembled(), opts.symmetrize_slope);
    art.trace = (Sc * sand_c.v_yf).trace();

    if (!std::isfinite(art.loss) || !std::isfinite(art.trace)) {
      art.feasible = false;
      art.note = "non-finite criterion value";
    }
  } catch (const std::exception& e) {
    art.feasible = false;
    art.note = e.what();
  }
  return art;
}

bool mask_less(const std::vector<bool>& a, const std::vector<bool>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

bool support_less(const CandidateSupport& a, const CandidateSupport& b) {
  if (a.mean_mask != b.mean_mask) return mask_less(a.mean_mask, b.mean_mask);
  if (a.scale_mask != b.scale_mask) return mask_less(a.scale_mask, b.scale_mask);
  return mask_less(a.corr_mask, b.corr_mask);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public criterion evaluations
// ---------------------------------------------------------------------------

FullFitContext full_fit_context(const ClusterDataset& dataset, const LinkSpec& links,
                                const VarianceFunction& vf, const WorkingStructure& ws,
                                const FitOptions& opts) {
  FullFitContext ctx;
  ctx.fit = fit(dataset, links, vf, ws, opts);
  if (!ctx.fit.converged)
    throw NumericError("full model fit did not converge; cannot run selection");
  ctx.slope = slope_matrix(dataset, ctx.fit.theta, links, vf, ws);
  ctx.meat = meat_matrix(dataset, ctx.fit.theta, links, vf, ws);
  ctx.sand = assemble_sandwich(ctx.slope, ctx.meat);
  return ctx;
}

CriterionValue lic_joint(const ClusterDataset& dataset, const LinkSpec& links,
                         const VarianceFunction& vf, const WorkingStructure& ws,
                         const FullFitContext& ctx, const CandidateSupport& candidate,
                         const SelectionOptions& opts) {
  candidate.validate();
  const JointCandidateArtifacts art =
      evaluate_joint_candidate(dataset, links, vf, ws, ctx, candidate, opts);
  CriterionValue cv;
  cv.support = candidate;
  cv.feasible = art.feasible;
  cv.note = art.note;
  if (art.feasible) {
    cv.loss = art.loss;
    cv.penalty = penalty_scale_value(opts.penalty, dataset.n()) * art.trace;
    cv.total = cv.loss + cv.penalty;
  }
  return cv;
}

namespace {

CriterionValue marginal_to_criterion(const MarginalCandidateArtifacts& art,
                                     const ClusterDataset& ds, Component comp,
                                     const SelectionOptions& opts, bool is_qic,
                                     VarianceFlavor flavor) {
  CriterionValue cv;
  cv.support = CandidateSupport::full(ds.p, ds.r, ds.q);
  (comp == Component::Mean ? cv.support.mean_mask
   : comp == Component::Scale ? cv.support.scale_mask
                              : cv.support.corr_mask) = art.mask;
  cv.feasible = art.feasible;
  cv.note = art.note;
  if (!art.feasible) return cv;
  const double scale = penalty_scale_value(opts.penalty, ds.n());
  if (is_qic) {
    cv.loss = -2.0 * art.q_value;
    cv.penalty = scale * (flavor == VarianceFlavor::YF ? art.qic_trace_yf
                                                       : art.qic_trace_lp);
  } else {
    cv.loss = art.lic_loss;
    cv.penalty = scale * art.lic_trace;
  }
  cv.total = cv.loss + cv.penalty;
  return cv;
}

}  // namespace

CriterionValue lic_marginal(const ClusterDataset& dataset, const LinkSpec& links,
                            const VarianceFunction& vf, const WorkingStructure& ws,
                            const FullFitContext& ctx, Component comp,
                            const std::vector<bool>& mask,
                            const SelectionOptions& opts) {
  if (mask.empty() || !mask[0])
    throw ConfigError("candidate support must keep the leading (intercept) column");
  const TildeQuantities tq = tilde_quantities(dataset, ctx.fit.theta, links, vf);
  const MarginalCandidateArtifacts art =
      evaluate_marginal_candidate(dataset, links, vf, ws, ctx, comp, mask, tq, opts);
  return marginal_to_criterion(art, dataset, comp, opts, false, VarianceFlavor::YF);
}

CriterionValue qic(const ClusterDataset& dataset, const LinkSpec& links,
                   const VarianceFunction& vf, const WorkingStructure& ws,
                   const FullFitContext& ctx, Component comp,
                   const std::vector<bool>& mask, VarianceFlavor flavor,
                   const SelectionOptions& opts) {
  if (mask.empty() || !mask[0])
    throw ConfigError("candidate support must keep the leading (intercept) column");
  const TildeQuantities tq = tilde_quantities(dataset, ctx.fit.theta, links, vf);
  const MarginalCandidateArtifacts art =
      evaluate_marginal_candidate(dataset, links, vf, ws, ctx, comp, mask, tq, opts);
  return marginal_to_criterion(art, dataset, comp, opts, true, flavor);
}

// ---------------------------------------------------------------------------
// Sweeps and winner picking
// ---------------------------------------------------------------------------

SelectionSweep selection_sweep(const ClusterDataset& dataset, const LinkSpec& links,
                               const VarianceFunction& vf, const WorkingStructure& ws,
                               const SelectionOptions& opts, bool want_joint,
                               bool want_marginal, bool parallel_candidates) {
  SelectionSweep sweep;
  sweep.ctx = full_fit_context(dataset, links, vf, ws, opts.fit_opts);

  if (want_joint) {
    const auto mean_masks = enumerate_masks(dataset.p);
    const auto scale_masks = enumerate_masks(dataset.r);
    const auto corr_masks = enumerate_masks(dataset.q);
    const std::int64_t count = static_cast<std::int64_t>(mean_masks.size()) *
                               scale_masks.size() * corr_masks.size();
    if (count > opts.max_joint_candidates)
      throw ConfigError("joint enumeration of " + std::to_string(count) +
                        " candidates exceeds the cap of " +
                        std::to_string(opts.max_joint_candidates));
    std::vector<CandidateSupport> supports;
    supports.reserve(count);
    for (const auto& mm : mean_masks)
      for (const auto& sm : scale_masks)
        for (const auto& cm : corr_masks)
          supports.push_back(CandidateSupport{mm, sm, cm});

    sweep.joint.resize(supports.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel_candidates)
#endif
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(supports.size()); ++i)
      sweep.joint[i] = evaluate_joint_candidate(dataset, links, vf, ws, sweep.ctx,
                                                supports[i], opts);
  }

  if (want_marginal) {
    const TildeQuantities tq = tilde_quantities(dataset, sweep.ctx.fit.theta, links, vf);
    const std::array<Component, 3> comps = {Component::Mean, Component::Scale,
                                            Component::Corr};
    for (int ci = 0; ci < 3; ++ci) {
      const int dim = ci == 0 ? dataset.p : ci == 1 ? dataset.r : dataset.q;
      const auto masks = enumerate_masks(dim);
      sweep.marginal[ci].resize(masks.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel_candidates)
#endif
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(masks.size()); ++i)
        sweep.marginal[ci][i] = evaluate_marginal_candidate(
            dataset, links, vf, ws, sweep.ctx, comps[ci], masks[i], tq, opts);
    }
  }
  return sweep;
}

namespace {

int mask_active(const std::vector<bool>& m) {
  return static_cast<int>(std::count(m.begin(), m.end(), true));
}

}  // namespace

CandidateSupport pick_joint_winner(const SelectionSweep& sweep, double scale) {
  const JointCandidateArtifacts* best = nullptr;
  double best_total = 0.0;
  for (const auto& art : sweep.joint) {
    if (!art.feasible) continue;
    const double total = art.loss + scale * art.trace;
    if (!best || total < best_total ||
        (total == best_total &&
         (art.support.active_count() < best->support.active_count() ||
          (art.support.active_count() == best->support.active_count() &&
           support_less(art.support, best->support))))) {
      best = &art;
      best_total = total;
    }
  }
  if (!best) throw NumericError("no feasible candidate in joint selection");
  return best->support;
}

CandidateSupport pick_marginal_winner(const SelectionSweep& sweep, double scale,
                                      SelectionStrategy strategy) {
  CandidateSupport out;
  std::array<std::vector<bool>*, 3> slots = {&out.mean_mask, &out.scale_mask,
                                             &out.corr_mask};
  for (int ci = 0; ci < 3; ++ci) {
    const MarginalCandidateArtifacts* best = nullptr;
    double best_total = 0.0;
    for (const auto& art : sweep.marginal[ci]) {
      if (!art.feasible) continue;
      double total;
      switch (strategy) {
        case SelectionStrategy::LicMarginal:
          total = art.lic_loss + scale * art.lic_trace;
          break;
        case SelectionStrategy::QicYF:
          total = -2.0 * art.q_value + scale * art.qic_trace_yf;
          break;
        case SelectionStrategy::QicLP:
          total = -2.0 * art.q_value + scale * art.qic_trace_lp;
          break;
        default:
          throw ConfigError("pick_marginal_winner needs a marginal strategy");
      }
      if (!best || total < best_total ||
          (total == best_total &&
           (mask_active(art.mask) < mask_active(best->mask) ||
            (mask_active(art.mask) == mask_active(best->mask) &&
             mask_less(art.mask, best->mask))))) {
        best = &art;
        best_total = total;
      }
    }
    if (!best)
      throw NumericError("no feasible candidate in marginal selection");
    *slots[ci] = best->mask;
  }
  return out;
}

SelectionResult select(const ClusterDataset& dataset, const LinkSpec& links,
                       const VarianceFunction& vf, const WorkingStructure& ws,
                       SelectionStrategy strategy, const SelectionOptions& opts) {
  const bool joint = strategy == SelectionStrategy::LicJoint;
  const SelectionSweep sweep =
      selection_sweep(dataset, links, vf, ws, opts, joint, !joint,
                      /*parallel_candidates=*/true);
  const double scale = penalty_scale_value(opts.penalty, dataset.n());

  SelectionResult res;
  res.strategy = strategy;
  res.penalty = opts.penalty;

  if (joint) {
    res.chosen = pick_joint_winner(sweep, scale);
    for (const auto& art : sweep.joint) {
      CriterionValue cv;
      cv.support = art.support;
      cv.feasible = art.feasible;
      cv.note = art.note;
      if (art.feasible) {
        cv.loss = art.loss;
        cv.penalty = scale * art.trace;
        cv.total = cv.loss + cv.penalty;
      } else {
        ++res.infeasible_count;
      }
      res.candidates.push_back(std::move(cv));
    }
  } else {
    res.chosen = pick_marginal_winner(sweep, scale, strategy);
    const std::array<Component, 3> comps = {Component::Mean, Component::Scale,
                                            Component::Corr};
    for (int ci = 0; ci < 3; ++ci) {
      for (const auto& art : sweep.marginal[ci]) {
        CriterionValue cv = marginal_to_criterion(
            art, dataset, comps[ci], opts, strategy != SelectionStrategy::LicMarginal,
            strategy == SelectionStrategy::QicLP ? VarianceFlavor::LP
                                                 : VarianceFlavor::YF);
        if (!cv.feasible) ++res.infeasible_count;
        res.candidates.push_back(std::move(cv));
      }
    }
  }

  // Refit on the winning support for reporting.
  const ClusterDataset rds = restrict_dataset(dataset, res.chosen);
  FitOptions fo = opts.fit_opts;
  fo.init = restrict_theta(sweep.ctx.fit.theta, res.chosen);
  res.refit = fit(rds, links, vf, ws, fo);
  res.theta_padded = pad_theta(res.refit.theta, res.chosen);
  return res;
}

}  // namespace geemvc
