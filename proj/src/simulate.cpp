#include "geemvc/simulate.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace geemvc {

namespace {

constexpr double kZ975 = 1.959963984540054;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Vec theta3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

}  // namespace

std::mt19937_64 replicate_engine(std::uint64_t seed, std::uint64_t replicate) {
  const std::uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(replicate + 1));
  return std::mt19937_64(key);
}

// ---------------------------------------------------------------------------
// Scenario presets
// ---------------------------------------------------------------------------

ScenarioConfig ScenarioConfig::preset(Scenario s) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.links.g1 = Link::Identity;
  cfg.links.g2 = Link::Log;
  switch (s) {
    case Scenario::EstI:
    case Scenario::Custom:
      cfg.true_theta = ThetaVector(theta3(0, -1, 0.5), theta3(2, 1, -1),
                                   theta3(0.5, 0.25, 0.125));
      cfg.vf = VarianceFunction::constant_one();
      cfg.links.g3 = Link::Identity;
      cfg.size_rule = ClusterSizeRule::Fixed4;
      cfg.corr_design = CorrDesign::ToeplitzLags;
      break;
    case Scenario::EstII:
      cfg = preset(Scenario::EstI);
      cfg.scenario = Scenario::EstII;
      cfg.vf = VarianceFunction::tanh_shift();
      break;
    case Scenario::SelI:
      cfg.true_theta = ThetaVector(theta3(1, -1, 0), theta3(2, 1, 0),
                                   theta3(0.2, -0.2, 0));
      cfg.vf = VarianceFunction::constant_one();
      cfg.links.g3 = Link::FisherZ;
      cfg.size_rule = ClusterSizeRule::Binomial10x07;
      cfg.corr_design = CorrDesign::NormalH;
      break;
    case Scenario::SelII:
      cfg.true_theta = ThetaVector(theta3(1, -1, 0), theta3(2, 1, 0),
                                   theta3(0.5, 0.5, 0));
      cfg.vf = VarianceFunction::tanh_shift();
      cfg.links.g3 = Link::Identity;
      cfg.size_rule = ClusterSizeRule::Fixed4;
      cfg.corr_design = CorrDesign::ToeplitzLags;
      break;
    case Scenario::SelIII:
      cfg = preset(Scenario::SelII);
      cfg.scenario = Scenario::SelIII;
      cfg.vf = VarianceFunction::constant_one();
      break;
    case Scenario::LpReplica:
      cfg.true_theta = ThetaVector(theta3(0, -1, 0.5), theta3(2, 1, -1),
                                   theta3(0.1, -0.2, 0.15));
      cfg.vf = VarianceFunction::constant_one();
      cfg.links.g3 = Link::FisherZ;
      cfg.size_rule = ClusterSizeRule::Binomial10x07;
      cfg.corr_design = CorrDesign::NormalH;
      break;
  }
  return cfg;
}

ScenarioConfig ScenarioConfig::from_name(const std::string& name) {
  if (name == "est-I" || name == "est-i" || name == "est1") return preset(Scenario::EstI);
  if (name == "est-II" || name == "est-ii" || name == "est2") return preset(Scenario::EstII);
  if (name == "sel-I" || name == "sel-i" || name == "sel1") return preset(Scenario::SelI);
  if (name == "sel-II" || name == "sel-ii" || name == "sel2") return preset(Scenario::SelII);
  if (name == "sel-III" || name == "sel-iii" || name == "sel3") return preset(Scenario::SelIII);
  if (name == "lp-replica") return preset(Scenario::LpReplica);
  if (name == "custom") return preset(Scenario::Custom);
  throw ConfigError("unknown scenario '" + name +
                    "' (est-I, est-II, sel-I, sel-II, sel-III, lp-replica, custom)");
}

std::string ScenarioConfig::name() const {
  switch (scenario) {
    case Scenario::EstI: return "est-I";
    case Scenario::EstII: return "est-II";
    case Scenario::SelI: return "sel-I";
    case Scenario::SelII: return "sel-II";
    case Scenario::SelIII: return "sel-III";
    case Scenario::LpReplica: return "lp-replica";
    case Scenario::Custom: return "custom";
  }
  return "custom";
}

void ScenarioConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
  links.validate();
}

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

namespace {

// Bivariate N(0, CS(0.5)) via its Cholesky factor.
void draw_cs05_pair(std::mt19937_64& rng, std::normal_distribution<double>& stdn,
                    double& a, double& b) {
  const double n1 = stdn(rng), n2 = stdn(rng);
  a = n1;
  b = 0.5 * n1 + std::sqrt(0.75) * n2;
}

Vec draw_cs3(std::mt19937_64& rng, std::normal_distribution<double>& stdn,
             const Mat& chol) {
  Vec n(3);
  n << stdn(rng), stdn(rng), stdn(rng);
  return chol * n;
}

int draw_cluster_size(std::mt19937_64& rng, ClusterSizeRule rule) {
  if (rule == ClusterSizeRule::Fixed4) return 4;
  std::binomial_distribution<int> bin(10, 0.7);
  int m = bin(rng);
  while (m < 2) m = bin(rng);  // the correlation model needs at least one pair
  return m;
}

}  // namespace

Cluster generate_cluster(std::mt19937_64& rng, const ScenarioConfig& scenario,
                         std::int64_t cluster_id, int* resamples) {
  std::normal_distribution<double> stdn(0.0, 1.0);
  const Vec& beta = scenario.true_theta.beta;
  const Vec& lambda = scenario.true_theta.lambda;
  const Vec& gamma = scenario.true_theta.gamma;
  const int q = static_cast<int>(gamma.size());

  const int m = draw_cluster_size(rng, scenario.size_rule);
  const int np = m * (m - 1) / 2;

  Cluster c;
  c.id = cluster_id;
  c.X1.resize(m, 3);
  c.X2.resize(m, 3);
  c.X3.resize(np, q);

  for (int j = 0; j < m; ++j) {
    double x1, x2, z1, z2;
    draw_cs05_pair(rng, stdn, x1, x2);
    draw_cs05_pair(rng, stdn, z1, z2);
    c.X1.row(j) << 1.0, x1, x2;
    c.X2.row(j) << 1.0, z1, z2;
  }

  Mat h_chol;
  double h_bound = std::numeric_limits<double>::infinity();
  if (scenario.corr_design == CorrDesign::NormalH) {
    Mat cs = Mat::Identity(3, 3);
    cs(0, 1) = cs(0, 2) = cs(1, 0) = cs(1, 2) = cs(2, 0) = cs(2, 1) = scenario.h_cs_param;
    h_chol = cs.llt().matrixL();
    const double gnorm = gamma.norm();
    if (gnorm > 0.0)
      h_bound = std::abs(std::atanh(0.9 / (m - 1))) / gnorm;
  }

  // Pair covariates; resample on a non-positive-definite generated R.
  Mat R;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 100)
      throw NumericError("could not generate a positive definite correlation "
                         "matrix for cluster " + std::to_string(cluster_id));
    for (int j = 0; j < m; ++j) {
      for (int k = j + 1; k < m; ++k) {
        const int t = Cluster::pair_row(j, k, m);
        if (scenario.corr_design == CorrDesign::ToeplitzLags) {
          c.X3.row(t).setZero();
          const int lag = k - j;
          if (lag - 1 < q) c.X3(t, lag - 1) = 1.0;
        } else {
          Vec h = draw_cs3(rng, stdn, h_chol);
          while (h.norm() > h_bound) h = draw_cs3(rng, stdn, h_chol);
          c.X3.row(t) = h.transpose();
        }
      }
    }
    Vec rho(np);
    const Vec eta3 = c.X3 * gamma;
    for (int t = 0; t < np; ++t) rho[t] = link_inverse(scenario.links.g3, eta3[t]);
    R = correlation_from_pairs(rho, m);
    Eigen::LLT<Mat> llt(R);
    if (llt.info() == Eigen::Success) break;
    if (resamples) ++(*resamples);
    if (scenario.corr_design == CorrDesign::ToeplitzLags)
      throw NumericError("fixed Toeplitz correlation matrix is not positive "
                         "definite for the configured gamma");
  }

  const Vec mu = c.X1 * beta;
  Vec phi(m), v(m);
  for (int j = 0; j < m; ++j) {
    phi[j] = link_inverse(scenario.links.g2, (c.X2.row(j) * lambda).value());
    v[j] = scenario.vf.value(mu[j]);
  }
  const Vec sd = (phi.array() * v.array()).sqrt();
  const Mat sigma = sd.asDiagonal() * R * sd.asDiagonal();
  const Mat L = sigma.llt().matrixL();

  Vec xi(m);
  for (int j = 0; j < m; ++j) xi[j] = stdn(rng);
  c.y = mu + L * xi;
  return c;
}

ClusterDataset generate_dataset(const ScenarioConfig& scenario, int replicate) {
  std::mt19937_64 rng = replicate_engine(scenario.seed, replicate);
  std::vector<Cluster> clusters;
  clusters.reserve(scenario.n_clusters);
  for (int i = 0; i < scenario.n_clusters; ++i)
    clusters.push_back(generate_cluster(rng, scenario, i));
  return ClusterDataset(std::move(clusters), 3, 3,
                        static_cast<int>(scenario.true_theta.gamma.size()));
}

FitResult lp_constant_variance_fit(const ClusterDataset& dataset, const LinkSpec& links,
                                   const WorkingStructure& ws, const FitOptions& opts) {
  return fit(dataset, links, VarianceFunction::constant_one(), ws, opts);
}

// ---------------------------------------------------------------------------
// Estimation study
// ---------------------------------------------------------------------------

std::vector<std::string> parameter_names(const ThetaVector& truth) {
  std::vector<std::string> names;
  for (int j = 0; j < truth.beta.size(); ++j) names.push_back("beta" + std::to_string(j));
  for (int j = 0; j < truth.lambda.size(); ++j) names.push_back("lambda" + std::to_string(j));
  for (int j = 0; j < truth.gamma.size(); ++j) names.push_back("gamma" + std::to_string(j));
  return names;
}

ReplicateSummary aggregate_estimation(const ScenarioConfig& scenario,
                                      const std::vector<EstimationReplicate>& reps) {
  ReplicateSummary out;
  out.scenario_name = scenario.name();
  out.replicates = static_cast<int>(reps.size());
  out.n_clusters = scenario.n_clusters;
  out.seed = scenario.seed;
  out.truth = scenario.true_theta.stacked();
  out.param_names = parameter_names(scenario.true_theta);

  const Eigen::Index dim = out.truth.size();
  out.est_mean = Vec::Zero(dim);
  out.ese = Vec::Zero(dim);
  out.ase_yf = Vec::Zero(dim);
  out.ase_lp = Vec::Zero(dim);
  out.cp_yf = Vec::Zero(dim);
  out.cp_lp = Vec::Zero(dim);
  out.rho_hist.assign(BlockDiagnostics::kRhoHistBins, 0.0);

  int used = 0;
  for (const auto& rep : reps) {
    if (!rep.converged) continue;
    ++used;
    out.est_mean += rep.est;
    out.ase_yf += rep.se_yf;
    out.ase_lp += rep.se_lp;
    for (Eigen::Index k = 0; k < dim; ++k) {
      if (std::abs(rep.est[k] - out.truth[k]) <= kZ975 * rep.se_yf[k]) out.cp_yf[k] += 1;
      if (std::abs(rep.est[k] - out.truth[k]) <= kZ975 * rep.se_lp[k]) out.cp_lp[k] += 1;
    }
    out.mean_norm_b += rep.diag.norm_b;
    out.mean_norm_d += rep.diag.norm_d;
    out.mean_norm_e += rep.diag.norm_e;
    out.mean_rho_mean += rep.diag.rho_mean;
    for (int b = 0; b < BlockDiagnostics::kRhoHistBins; ++b)
      out.rho_hist[b] += static_cast<double>(rep.diag.rho_histogram[b]);
  }
  out.convergence_rate = reps.empty() ? 0.0 : static_cast<double>(used) / reps.size();
  if (used == 0) return out;

  out.est_mean /= used;
  out.ase_yf /= used;
  out.ase_lp /= used;
  out.cp_yf *= 100.0 / used;
  out.cp_lp *= 100.0 / used;
  out.mean_norm_b /= used;
  out.mean_norm_d /= used;
  out.mean_norm_e /= used;
  out.mean_rho_mean /= used;
  for (auto& h : out.rho_hist) h /= used;

  if (used >= 2) {
    Vec ss = Vec::Zero(dim);
    for (const auto& rep : reps) {
      if (!rep.converged) continue;
      ss += (rep.est - out.est_mean).cwiseAbs2();
    }
    out.ese = (ss / (used - 1)).cwiseSqrt();
  }

  // Constant-variance comparator aggregates.
  int lp_used = 0;
  for (const auto& rep : reps) lp_used += rep.lp_converged ? 1 : 0;
  if (lp_used > 0) {
    out.has_lp_comparator = true;
    out.lp_est_mean = Vec::Zero(dim);
    out.lp_ase = Vec::Zero(dim);
    out.lp_cp = Vec::Zero(dim);
    out.lp_ese = Vec::Zero(dim);
    for (const auto& rep : reps) {
      if (!rep.lp_converged) continue;
      out.lp_est_mean += rep.lp_est;
      out.lp_ase += rep.lp_se;
      for (Eigen::Index k = 0; k < dim; ++k)
        if (std::abs(rep.lp_est[k] - out.truth[k]) <= kZ975 * rep.lp_se[k])
          out.lp_cp[k] += 1;
    }
    out.lp_est_mean /= lp_used;
    out.lp_ase /= lp_used;
    out.lp_cp *= 100.0 / lp_used;
    if (lp_used >= 2) {
      Vec ss = Vec::Zero(dim);
      for (const auto& rep : reps) {
        if (!rep.lp_converged) continue;
        ss += (rep.lp_est - out.lp_est_mean).cwiseAbs2();
      }
      out.lp_ese = (ss / (lp_used - 1)).cwiseSqrt();
    }
  }
  return out;
}

ReplicateSummary run_estimation_study(const ScenarioConfig& scenario) {
  scenario.validate();
  const bool with_comparator = scenario.vf.kind != VarKind::ConstantOne;
  std::vector<EstimationReplicate> reps(scenario.replicates);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int rep = 0; rep < scenario.replicates; ++rep) {
    EstimationReplicate rec;
    try {
      const ClusterDataset ds = generate_dataset(scenario, rep);
      const FitResult fr = fit(ds, scenario.links, scenario.vf, scenario.working);
      if (fr.converged) {
        rec.converged = true;
        rec.est = fr.theta.stacked();
        const SandwichResult sw =
            sandwich(ds, fr.theta, scenario.links, scenario.vf, scenario.working);
        rec.se_yf = sw.se_yf;
        rec.se_lp = sw.se_lp;
        rec.diag = block_diagnostics(ds, fr.theta, scenario.links, scenario.vf,
                                     scenario.working);
      }
      if (with_comparator) {
        const FitResult lp = lp_constant_variance_fit(ds, scenario.links,
                                                      scenario.working);
        if (lp.converged) {
          rec.lp_converged = true;
          rec.lp_est = lp.theta.stacked();
          const SandwichResult sw =
              sandwich(ds, lp.theta, scenario.links,
                       VarianceFunction::constant_one(), scenario.working);
          rec.lp_se = sw.se_lp;  // LP flavor: block-diagonal bread
        }
      }
    } catch (const std::exception&) {
      rec.converged = false;
    }
    reps[rep] = std::move(rec);
  }
  return aggregate_estimation(scenario, reps);
}

// ---------------------------------------------------------------------------
// Selection study
// ---------------------------------------------------------------------------

std::vector<bool> truth_mask(const Vec& coef) {
  std::vector<bool> mask(coef.size());
  for (Eigen::Index j = 0; j < coef.size(); ++j) mask[j] = coef[j] != 0.0;
  mask[0] = true;
  return mask;
}

ReplicateSummary run_selection_study(const ScenarioConfig& scenario,
                                     const std::vector<SelectionStrategy>& methods,
                                     const std::vector<PenaltyScale>& penalties) {
  scenario.validate();
  ReplicateSummary out;
  out.scenario_name = scenario.name();
  out.replicates = scenario.replicates;
  out.n_clusters = scenario.n_clusters;
  out.seed = scenario.seed;
  out.truth = scenario.true_theta.stacked();
  out.param_names = parameter_names(scenario.true_theta);
  if (methods.empty() || penalties.empty()) return out;

  const bool want_joint =
      std::find(methods.begin(), methods.end(), SelectionStrategy::LicJoint) !=
      methods.end();
  const bool want_marginal =
      std::any_of(methods.begin(), methods.end(), [](SelectionStrategy s) {
        return s != SelectionStrategy::LicJoint;
      });

  const std::vector<bool> truth_beta = truth_mask(scenario.true_theta.beta);
  const std::vector<bool> truth_lambda = truth_mask(scenario.true_theta.lambda);
  const std::vector<bool> truth_gamma = truth_mask(scenario.true_theta.gamma);

  struct RepOutcome {
    bool ok = false;
    // per method x penalty: correctness of beta / lambda / gamma
    std::vector<std::array<bool, 3>> correct;
  };
  std::vector<RepOutcome> outcomes(scenario.replicates);
  const int n_cells = static_cast<int>(methods.size() * penalties.size());

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int rep = 0; rep < scenario.replicates; ++rep) {
    RepOutcome oc;
    oc.correct.resize(n_cells);
    try {
      const ClusterDataset ds = generate_dataset(scenario, rep);
      SelectionOptions opts;
      const SelectionSweep sweep =
          selection_sweep(ds, scenario.links, scenario.vf, scenario.working, opts,
                          want_joint, want_marginal);
      int cell = 0;
      for (const auto method : methods) {
        for (const auto pen : penalties) {
          const double scale = penalty_scale_value(pen, ds.n());
          const CandidateSupport chosen =
              method == SelectionStrategy::LicJoint
                  ? pick_joint_winner(sweep, scale)
                  : pick_marginal_winner(sweep, scale, method);
          oc.correct[cell][0] = chosen.mean_mask == truth_beta;
          oc.correct[cell][1] = chosen.scale_mask == truth_lambda;
          oc.correct[cell][2] = chosen.corr_mask == truth_gamma;
          ++cell;
        }
      }
      oc.ok = true;
    } catch (const std::exception&) {
      oc.ok = false;
    }
    outcomes[rep] = std::move(oc);
  }

  int used = 0;
  for (const auto& oc : outcomes) used += oc.ok ? 1 : 0;
  out.convergence_rate =
      scenario.replicates > 0 ? static_cast<double>(used) / scenario.replicates : 0.0;

  int cell = 0;
  for (const auto method : methods) {
    for (const auto pen : penalties) {
      SelectionCell sc;
      sc.strategy = method;
      sc.penalty = pen;
      sc.n_used = used;
      std::array<long, 7> tally{};
      for (const auto& oc : outcomes) {
        if (!oc.ok) continue;
        const auto& c = oc.correct[cell];
        tally[0] += c[0];
        tally[1] += c[1];
        tally[2] += c[2];
        tally[3] += c[0] && c[1];
        tally[4] += c[0] && c[2];
        tally[5] += c[1] && c[2];
        tally[6] += c[0] && c[1] && c[2];
      }
      for (int k = 0; k < 7; ++k)
        sc.percent[k] = used > 0 ? 100.0 * tally[k] / used : 0.0;
      out.selection.push_back(sc);
      ++cell;
    }
  }
  return out;
}

}  // namespace geemvc
