#include "geemvc/fitter.hpp"

#include <cmath>
#include <string>

namespace geemvc {

namespace {

constexpr int kMaxStepHalvings = 5;

struct StepAccum {
  Mat G;  // sum D' V^{-1} D
  Vec u;  // sum D' V^{-1} residual
  long clamps = 0;
  long repairs = 0;
};

StepAccum accumulate_component(const ClusterDataset& dataset, const ThetaVector& theta,
                               const LinkSpec& links, const VarianceFunction& vf,
                               const WorkingStructure& ws, Component comp) {
  const int dim = comp == Component::Mean ? dataset.p
                  : comp == Component::Scale ? dataset.r
                                             : dataset.q;
  StepAccum acc;
  acc.G = Mat::Zero(dim, dim);
  acc.u = Vec::Zero(dim);

  for (int idx : dataset.id_order()) {
    const Cluster& c = dataset.clusters[idx];
    if (comp == Component::Corr && c.pairs() == 0) continue;
    ClusterQuantities cq = cluster_quantities(c, theta, links, vf, ws);
    acc.clamps += cq.marg.clamp_count;
    acc.repairs += cq.pd_repairs;

    const Mat& D = comp == Component::Mean ? cq.D1
                   : comp == Component::Scale ? cq.D2
                                              : cq.D3;
    const Mat& V = comp == Component::Mean ? cq.V1
                   : comp == Component::Scale ? cq.V2
                                              : cq.V3;
    const Vec resid = comp == Component::Mean ? cq.eps
                      : comp == Component::Scale ? Vec(cq.s - cq.marg.phi)
                                                 : Vec(cq.z - cq.marg.rho);
    SymSolver solver(V);
    acc.G += D.transpose() * solver.solve(D);
    acc.u += D.transpose() * solver.solve(resid);
    acc.repairs += solver.repairs();
  }
  return acc;
}

bool marginals_finite(const ClusterDataset& dataset, const ThetaVector& theta,
                      const LinkSpec& links, const VarianceFunction& vf) {
  try {
    for (const auto& c : dataset.clusters) {
      Marginals m = evaluate_marginals(c, theta, links, vf);
      if (!m.mu.allFinite() || !m.phi.allFinite() || !m.rho.allFinite() ||
          !m.v.allFinite())
        return false;
    }
  } catch (const NumericError&) {
    return false;
  }
  return true;
}

Vec solve_update(const StepAccum& acc, const char* what) {
  Eigen::LDLT<Mat> ldlt(acc.G);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
    throw NumericError(std::string("singular update system for ") + what);
  Vec d = ldlt.solve(acc.u);
  return d;
}

// Applies one damped component update.  Returns the max-norm of the applied
// step, accumulating clamp/repair counters.
double component_step(const ClusterDataset& dataset, ThetaVector& theta,
                      const LinkSpec& links, const VarianceFunction& vf,
                      const WorkingStructure& ws, Component comp, int sweep,
                      long& clamps, long& repairs) {
  static const char* names[] = {"mean", "scale", "correlation"};
  const auto ci = static_cast<int>(comp);
  StepAccum acc = accumulate_component(dataset, theta, links, vf, ws, comp);
  clamps += acc.clamps;
  repairs += acc.repairs;

  Vec delta = solve_update(acc, names[ci]);
  if (!delta.allFinite())
    throw NumericError("diverged at iteration " + std::to_string(sweep) +
                       " (non-finite " + names[ci] + " update)");

  double step = 1.0;
  for (int h = 0; h <= kMaxStepHalvings; ++h, step *= 0.5) {
    ThetaVector trial = theta;
    trial.part(comp) += step * delta;
    if (marginals_finite(dataset, trial, links, vf)) {
      theta = trial;
      return step * delta.cwiseAbs().maxCoeff();
    }
  }
  throw NumericError("diverged at iteration " + std::to_string(sweep) + " (" +
                     names[ci] + " step not recoverable)");
}

}  // namespace

ThetaVector initialize(const ClusterDataset& dataset, const LinkSpec& links,
                       const VarianceFunction& vf) {
  ThetaVector theta = ThetaVector::zeros(dataset.p, dataset.r, dataset.q);

  // Working-independence GEE for beta: R1 = I, phi = 1, iterated to
  // convergence (one step when g1 is the identity and v is constant).
  // phi is bypassed entirely here, so an identity scale link at lambda = 0
  // cannot trip the positivity check.
  auto mean_and_v = [&](const Cluster& c, const Vec& beta, Vec& mu, Vec& v) {
    const Vec eta1 = c.X1 * beta;
    if (!eta1.allFinite())
      throw NumericError("divergent linear predictor in cluster " +
                         std::to_string(c.id));
    mu.resize(c.size());
    v.resize(c.size());
    for (int j = 0; j < c.size(); ++j) {
      mu[j] = link_inverse(links.g1, eta1[j]);
      v[j] = vf.value(mu[j]);
    }
  };

  for (int it = 0; it < 50; ++it) {
    Mat G = Mat::Zero(dataset.p, dataset.p);
    Vec u = Vec::Zero(dataset.p);
    for (int idx : dataset.id_order()) {
      const Cluster& c = dataset.clusters[idx];
      Vec mu, v;
      mean_and_v(c, theta.beta, mu, v);
      const Vec eta1 = c.X1 * theta.beta;
      Vec d1(c.size());
      for (int j = 0; j < c.size(); ++j) d1[j] = link_dinv(links.g1, eta1[j]);
      const Mat D1 = d1.asDiagonal() * c.X1;
      const Vec w = v.cwiseInverse();  // V1 = diag(v) under phi=1, R1=I
      G += D1.transpose() * w.asDiagonal() * D1;
      u += D1.transpose() * w.asDiagonal() * (c.y - mu);
    }
    Eigen::LDLT<Mat> ldlt(G);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw NumericError("rank-deficient mean design");
    const Vec delta = ldlt.solve(u);
    theta.beta += delta;
    if (delta.cwiseAbs().maxCoeff() <= 1e-10) break;
  }

  // Scale intercept matched to the average of s_ij at beta0.
  {
    double sum_s = 0.0;
    std::int64_t count = 0;
    for (const auto& c : dataset.clusters) {
      Vec mu, v;
      mean_and_v(c, theta.beta, mu, v);
      const Vec eps = c.y - mu;
      sum_s += (eps.array().square() / v.array()).sum();
      count += c.size();
    }
    const double mean_s = std::max(sum_s / static_cast<double>(count), 1e-8);
    theta.lambda[0] = link_forward(links.g2, mean_s);
  }

  // gamma0 = 0: working independence.
  return theta;
}

FitResult fit(const ClusterDataset& dataset, const LinkSpec& links,
              const VarianceFunction& vf, const WorkingStructure& ws,
              const FitOptions& opts) {
  links.validate();
  if (opts.max_iter < 1 || opts.tol <= 0.0)
    throw ConfigError("fit options need max_iter >= 1 and tol > 0");

  FitResult res;
  res.theta = opts.init ? *opts.init : initialize(dataset, links, vf);
  const bool has_pairs = dataset.total_pairs() > 0 && dataset.q > 0;

  for (int t = 1; t <= opts.max_iter; ++t) {
    double sweep_delta = 0.0;
    sweep_delta = std::max(sweep_delta,
                           component_step(dataset, res.theta, links, vf, ws,
                                          Component::Mean, t, res.clamp_count,
                                          res.pd_repair_count));
    sweep_delta = std::max(sweep_delta,
                           component_step(dataset, res.theta, links, vf, ws,
                                          Component::Scale, t, res.clamp_count,
                                          res.pd_repair_count));
    if (has_pairs)
      sweep_delta = std::max(sweep_delta,
                             component_step(dataset, res.theta, links, vf, ws,
                                            Component::Corr, t, res.clamp_count,
                                            res.pd_repair_count));
    res.update_trace.push_back(sweep_delta);
    res.iterations = t;
    if (sweep_delta <= opts.tol) break;
  }

  const EstimatingFunctions u =
      estimating_functions(dataset, res.theta, links, vf, ws);
  res.u_norms = {u.u1.size() ? u.u1.cwiseAbs().maxCoeff() : 0.0,
                 u.u2.size() ? u.u2.cwiseAbs().maxCoeff() : 0.0,
                 u.u3.size() ? u.u3.cwiseAbs().maxCoeff() : 0.0};
  res.clamped_at_solution = u.clamp_events > 0;

  const double max_u = std::max({res.u_norms[0], res.u_norms[1], res.u_norms[2]});
  res.converged = !res.update_trace.empty() &&
                  res.update_trace.back() <= opts.tol &&
                  max_u <= 1e-6 * dataset.n();
  return res;
}

FitResult fit_component(const ClusterDataset& dataset, const LinkSpec& links,
                        const VarianceFunction& vf, const WorkingStructure& ws,
                        Component comp, const ThetaVector& pinned,
                        const FitOptions& opts) {
  FitResult res;
  res.theta = opts.init ? *opts.init : pinned;

  for (int t = 1; t <= opts.max_iter; ++t) {
    const double d = component_step(dataset, res.theta, links, vf, ws, comp, t,
                                    res.clamp_count, res.pd_repair_count);
    res.update_trace.push_back(d);
    res.iterations = t;
    if (d <= opts.tol) break;
  }
  res.converged =
      !res.update_trace.empty() && res.update_trace.back() <= opts.tol;
  return res;
}

}  // namespace geemvc
