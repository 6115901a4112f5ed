#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "geemvc/errors.hpp"

namespace geemvc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Link functions
// ---------------------------------------------------------------------------

enum class Link { Identity, Log, FisherZ };

double link_forward(Link g, double x);   // eta = g(x)
double link_inverse(Link g, double eta); // x = g^{-1}(eta)
double link_dinv(Link g, double eta);    // d g^{-1} / d eta

std::string link_name(Link g);
Link link_from_name(const std::string& name);

// Links for the mean (g1), scale (g2) and correlation (g3) regressions.
// The set is a closed enumeration: g1 in {identity, log}, g2 in {log,
// identity}, g3 in {identity, fisher-z}.
struct LinkSpec {
  Link g1 = Link::Identity;
  Link g2 = Link::Log;
  Link g3 = Link::Identity;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Variance function v(mu)
// ---------------------------------------------------------------------------

enum class VarKind { ConstantOne, TanhShift, Custom };

struct VarianceFunction {
  VarKind kind = VarKind::ConstantOne;
  std::function<double(double)> v;
  std::function<double(double)> dv;

  static VarianceFunction constant_one();
  static VarianceFunction tanh_shift();  // v(mu) = 1 + 0.35*tanh(mu)
  static VarianceFunction custom(std::function<double(double)> v_fn,
                                 std::function<double(double)> dv_fn);

  double value(double mu) const { return v(mu); }
  double deriv(double mu) const { return dv(mu); }
};

VarianceFunction variance_from_name(const std::string& name);
std::string variance_name(const VarianceFunction& vf);

// ---------------------------------------------------------------------------
// Parameter vector theta = (beta, lambda, gamma)
// ---------------------------------------------------------------------------

enum class Component { Mean = 0, Scale = 1, Corr = 2 };

struct ThetaVector {
  Vec beta;    // p
  Vec lambda;  // r
  Vec gamma;   // q

  ThetaVector() = default;
  ThetaVector(Vec b, Vec l, Vec g)
      : beta(std::move(b)), lambda(std::move(l)), gamma(std::move(g)) {}

  static ThetaVector zeros(int p, int r, int q);
  static ThetaVector from_stacked(const Vec& stacked, int p, int r, int q);

  Eigen::Index size() const { return beta.size() + lambda.size() + gamma.size(); }
  Vec stacked() const;

  const Vec& part(Component c) const;
  Vec& part(Component c);
};

// ---------------------------------------------------------------------------
// Clustered data
// ---------------------------------------------------------------------------

// One independent cluster: response y (length m), unit-level designs X1
// (mean, m x p) and X2 (scale, m x r), and the pair-level design X3
// (m(m-1)/2 x q).  X3 rows are stacked in the upper-triangular pair order
// (1,2),(1,3),...,(1,m),(2,3),...,(m-1,m).
struct Cluster {
  std::int64_t id = 0;
  Vec y;
  Mat X1;
  Mat X2;
  Mat X3;

  int size() const { return static_cast<int>(y.size()); }
  int pairs() const { return size() * (size() - 1) / 2; }

  // Row of X3 (and of z/rho) holding the pair (j,k), 0-based with j < k < m.
  static int pair_row(int j, int k, int m);

  void validate() const;
};

struct ClusterDataset {
  std::vector<Cluster> clusters;
  int p = 0, r = 0, q = 0;

  ClusterDataset() = default;
  ClusterDataset(std::vector<Cluster> cs, int p_, int r_, int q_);

  int n() const { return static_cast<int>(clusters.size()); }
  std::int64_t total_units() const;
  std::int64_t total_pairs() const;

  // Cluster indices sorted by cluster id; every accumulation over clusters
  // follows this order so that results do not depend on input order.
  const std::vector<int>& id_order() const { return id_order_; }

  void validate() const;

 private:
  std::vector<int> id_order_;
};

// ---------------------------------------------------------------------------
// Working covariance structure choices for V2 and V3
// ---------------------------------------------------------------------------

enum class CorrKind { Identity, CS, AR1 };

struct WorkingCorr {
  CorrKind kind = CorrKind::Identity;
  double u = 0.0;  // fixed working parameter in (-1, 1)

  // Dense m x m working correlation; throws NumericError when the chosen
  // parameter is not positive definite at this size (CS needs u > -1/(m-1)).
  Mat matrix(int m) const;
  bool is_identity() const { return kind == CorrKind::Identity; }
};

enum class V3Mode {
  DeltaScaled,    // V3 = Delta3^{1/2} R3 Delta3^{1/2}, Delta3 = diag(1+rho^2)
  PlainIdentity,  // V3 = I
};

struct WorkingStructure {
  WorkingCorr r2{};
  WorkingCorr r3{};
  V3Mode v3_mode = V3Mode::DeltaScaled;
};

// ---------------------------------------------------------------------------
// Marginal evaluation
// ---------------------------------------------------------------------------

// Correlations from the identity link are clamped to this box during
// iteration; clamp events are counted, never silently dropped.
inline constexpr double kRhoClampLimit = 0.99;

struct Marginals {
  Vec mu;   // m
  Vec phi;  // m
  Vec rho;  // m(m-1)/2
  Vec v;    // m, variance function at mu
  int clamp_count = 0;
};

// mu = g1^{-1}(X1 beta), phi = g2^{-1}(X2 lambda), rho = g3^{-1}(X3 gamma),
// v = vf(mu).  Throws NumericError on non-finite linear predictors or a
// nonpositive scale.
Marginals evaluate_marginals(const Cluster& cluster, const ThetaVector& theta,
                             const LinkSpec& links, const VarianceFunction& vf);

}  // namespace geemvc
