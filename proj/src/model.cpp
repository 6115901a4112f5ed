#include "geemvc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace geemvc {

// ---------------------------------------------------------------------------
// Links
// ---------------------------------------------------------------------------

double link_forward(Link g, double x) {
  switch (g) {
    case Link::Identity: return x;
    case Link::Log: return std::log(x);
    case Link::FisherZ: return std::atanh(x);
  }
  return x;
}

double link_inverse(Link g, double eta) {
  switch (g) {
    case Link::Identity: return eta;
    case Link::Log: return std::exp(eta);
    case Link::FisherZ: return std::tanh(eta);
  }
  return eta;
}

double link_dinv(Link g, double eta) {
  switch (g) {
    case Link::Identity: return 1.0;
    case Link::Log: return std::exp(eta);
    case Link::FisherZ: {
      const double t = std::tanh(eta);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

std::string link_name(Link g) {
  switch (g) {
    case Link::Identity: return "identity";
    case Link::Log: return "log";
    case Link::FisherZ: return "fisher-z";
  }
  return "identity";
}

Link link_from_name(const std::string& name) {
  if (name == "identity") return Link::Identity;
  if (name == "log") return Link::Log;
  if (name == "fisher-z" || name == "fisherz") return Link::FisherZ;
  throw ConfigError("unknown link '" + name + "' (identity, log, fisher-z)");
}

void LinkSpec::validate() const {
  if (g1 != Link::Identity && g1 != Link::Log)
    throw ConfigError("mean link must be identity or log");
  if (g2 != Link::Identity && g2 != Link::Log)
    throw ConfigError("scale link must be log or identity");
  if (g3 != Link::Identity && g3 != Link::FisherZ)
    throw ConfigError("correlation link must be identity or fisher-z");
}

// ---------------------------------------------------------------------------
// Variance function
// ---------------------------------------------------------------------------

VarianceFunction VarianceFunction::constant_one() {
  VarianceFunction vf;
  vf.kind = VarKind::ConstantOne;
  vf.v = [](double) { return 1.0; };
  vf.dv = [](double) { return 0.0; };
  return vf;
}

VarianceFunction VarianceFunction::tanh_shift() {
  VarianceFunction vf;
  vf.kind = VarKind::TanhShift;
  vf.v = [](double mu) { return 1.0 + 0.35 * std::tanh(mu); };
  vf.dv = [](double mu) {
    const double t = std::tanh(mu);
    return 0.35 * (1.0 - t * t);
  };
  return vf;
}

VarianceFunction VarianceFunction::custom(std::function<double(double)> v_fn,
                                          std::function<double(double)> dv_fn) {
  VarianceFunction vf;
  vf.kind = VarKind::Custom;
  vf.v = std::move(v_fn);
  vf.dv = std::move(dv_fn);
  return vf;
}

VarianceFunction variance_from_name(const std::string& name) {
  if (name == "constant-one" || name == "constant") return VarianceFunction::constant_one();
  if (name == "tanh-shift") return VarianceFunction::tanh_shift();
  throw ConfigError("unknown variance function '" + name +
                    "' (constant-one, tanh-shift)");
}

std::string variance_name(const VarianceFunction& vf) {
  switch (vf.kind) {
    case VarKind::ConstantOne: return "constant-one";
    case VarKind::TanhShift: return "tanh-shift";
    case VarKind::Custom: return "custom";
  }
  return "custom";
}

// ---------------------------------------------------------------------------
// ThetaVector
// ---------------------------------------------------------------------------

ThetaVector ThetaVector::zeros(int p, int r, int q) {
  return ThetaVector(Vec::Zero(p), Vec::Zero(r), Vec::Zero(q));
}

ThetaVector ThetaVector::from_stacked(const Vec& stacked, int p, int r, int q) {
  if (stacked.size() != p + r + q)
    throw NumericError("stacked parameter length mismatch");
  return ThetaVector(stacked.segment(0, p), stacked.segment(p, r),
                     stacked.segment(p + r, q));
}

Vec ThetaVector::stacked() const {
  Vec out(size());
  out << beta, lambda, gamma;
  return out;
}

const Vec& ThetaVector::part(Component c) const {
  switch (c) {
    case Component::Mean: return beta;
    case Component::Scale: return lambda;
    case Component::Corr: return gamma;
  }
  return beta;
}

Vec& ThetaVector::part(Component c) {
  switch (c) {
    case Component::Mean: return beta;
    case Component::Scale: return lambda;
    case Component::Corr: return gamma;
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Cluster / dataset
// ---------------------------------------------------------------------------

int Cluster::pair_row(int j, int k, int m) {
  // Upper-triangular stacking: (0,1),(0,2),...,(0,m-1),(1,2),...
  return j * m - j * (j + 1) / 2 + (k - j - 1);
}

void Cluster::validate() const {
  const int m = size();
  if (m < 1) throw ConfigError("cluster " + std::to_string(id) + " is empty");
  if (X1.rows() != m || X2.rows() != m)
    throw ConfigError("cluster " + std::to_string(id) +
                      ": unit design row count != cluster size");
  if (X3.rows() != pairs())
    throw ConfigError("cluster " + std::to_string(id) +
                      ": pair design rows != m(m-1)/2");
}

ClusterDataset::ClusterDataset(std::vector<Cluster> cs, int p_, int r_, int q_)
    : clusters(std::move(cs)), p(p_), r(r_), q(q_) {
  validate();
  id_order_.resize(clusters.size());
  std::iota(id_order_.begin(), id_order_.end(), 0);
  std::stable_sort(id_order_.begin(), id_order_.end(), [&](int a, int b) {
    return clusters[a].id < clusters[b].id;
  });
}

std::int64_t ClusterDataset::total_units() const {
  std::int64_t t = 0;
  for (const auto& c : clusters) t += c.size();
  return t;
}

std::int64_t ClusterDataset::total_pairs() const {
  std::int64_t t = 0;
  for (const auto& c : clusters) t += c.pairs();
  return t;
}

void ClusterDataset::validate() const {
  if (clusters.empty()) throw ConfigError("dataset has no clusters");
  std::set<std::int64_t> ids;
  for (const auto& c : clusters) {
    c.validate();
    if (c.X1.cols() != p || c.X2.cols() != r || c.X3.cols() != q)
      throw ConfigError("cluster " + std::to_string(c.id) +
                        ": design column counts differ from dataset (p,r,q)");
    if (!ids.insert(c.id).second)
      throw ConfigError("duplicate cluster id " + std::to_string(c.id));
  }
}

// ---------------------------------------------------------------------------
// Working correlation matrices
// ---------------------------------------------------------------------------

Mat WorkingCorr::matrix(int m) const {
  Mat R = Mat::Identity(m, m);
  switch (kind) {
    case CorrKind::Identity:
      break;
    case CorrKind::CS: {
      if (m > 1 && (u <= -1.0 / (m - 1) || u >= 1.0))
        throw NumericError("CS working correlation not positive definite for m=" +
                           std::to_string(m));
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          if (a != b) R(a, b) = u;
      break;
    }
    case CorrKind::AR1: {
      if (std::abs(u) >= 1.0)
        throw NumericError("AR1 working correlation needs |u| < 1");
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          R(a, b) = std::pow(u, std::abs(a - b));
      break;
    }
  }
  return R;
}

// ---------------------------------------------------------------------------
// Marginals
// ---------------------------------------------------------------------------

Marginals evaluate_marginals(const Cluster& cluster, const ThetaVector& theta,
                             const LinkSpec& links, const VarianceFunction& vf) {
  const int m = cluster.size();
  const int np = cluster.pairs();
  Marginals out;
  out.mu.resize(m);
  out.phi.resize(m);
  out.v.resize(m);
  out.rho.resize(np);

  const Vec eta1 = cluster.X1 * theta.beta;
  const Vec eta2 = cluster.X2 * theta.lambda;
  if (!eta1.allFinite() || !eta2.allFinite())
    throw NumericError("divergent linear predictor in cluster " +
                       std::to_string(cluster.id));

  for (int j = 0; j < m; ++j) {
    out.mu[j] = link_inverse(links.g1, eta1[j]);
    out.phi[j] = link_inverse(links.g2, eta2[j]);
    out.v[j] = vf.value(out.mu[j]);
    if (!std::isfinite(out.mu[j]) || !std::isfinite(out.phi[j]))
      throw NumericError("divergent linear predictor in cluster " +
                         std::to_string(cluster.id));
    if (out.phi[j] <= 0.0)
      throw NumericError("nonpositive scale in cluster " + std::to_string(cluster.id));
    if (out.v[j] <= 0.0)
      throw NumericError("nonpositive variance function value in cluster " +
                         std::to_string(cluster.id));
  }

  if (np > 0) {
    const Vec eta3 = cluster.X3 * theta.gamma;
    if (!eta3.allFinite())
      throw NumericError("divergent linear predictor in cluster " +
                         std::to_string(cluster.id));
    for (int t = 0; t < np; ++t) {
      double rho = link_inverse(links.g3, eta3[t]);
      if (links.g3 == Link::Identity && std::abs(rho) > kRhoClampLimit) {
        rho = std::clamp(rho, -kRhoClampLimit, kRhoClampLimit);
        ++out.clamp_count;
      }
      out.rho[t] = rho;
    }
  }
  return out;
}

}  // namespace geemvc
