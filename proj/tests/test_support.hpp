#pragma once

#include <functional>
#include <random>

#include "geemvc/equations.hpp"
#include "geemvc/model.hpp"

namespace geemvc::testing {

// Random small instance generator for property-style tests: n clusters of
// size <= max_m with smooth parameter values that keep every link inside its
// comfortable range.
struct SmallInstance {
  ClusterDataset dataset;
  ThetaVector theta;
  LinkSpec links;
  VarianceFunction vf;
  WorkingStructure ws;
};

inline SmallInstance random_small_instance(std::mt19937_64& rng, bool tanh_vf = true,
                                           int max_n = 5, int max_m = 4) {
  std::uniform_int_distribution<int> n_dist(2, max_n);
  std::uniform_int_distribution<int> m_dist(2, max_m);
  std::normal_distribution<double> stdn(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-0.3, 0.3);

  const int p = 2, r = 2, q = 2;
  SmallInstance inst;
  inst.links.g1 = Link::Identity;
  inst.links.g2 = Link::Log;
  inst.links.g3 = Link::FisherZ;
  inst.vf = tanh_vf ? VarianceFunction::tanh_shift() : VarianceFunction::constant_one();

  const int n = n_dist(rng);
  std::vector<Cluster> clusters;
  for (int i = 0; i < n; ++i) {
    const int m = m_dist(rng);
    Cluster c;
    c.id = i;
    c.y.resize(m);
    c.X1.resize(m, p);
    c.X2.resize(m, r);
    c.X3.resize(m * (m - 1) / 2, q);
    for (int j = 0; j < m; ++j) {
      c.X1(j, 0) = 1.0;
      c.X1(j, 1) = stdn(rng);
      c.X2(j, 0) = 1.0;
      c.X2(j, 1) = 0.5 * stdn(rng);
      c.y[j] = stdn(rng) * 1.5 + 0.2;
    }
    for (int t = 0; t < c.pairs(); ++t) {
      c.X3(t, 0) = 1.0;
      c.X3(t, 1) = 0.5 * stdn(rng);
    }
    clusters.push_back(std::move(c));
  }
  inst.dataset = ClusterDataset(std::move(clusters), p, r, q);

  Vec beta(p), lambda(r), gamma(q);
  beta << 0.3 + unif(rng), unif(rng);
  lambda << 0.5 + unif(rng), unif(rng);
  gamma << unif(rng), unif(rng);
  inst.theta = ThetaVector(beta, lambda, gamma);
  return inst;
}

// Mixed absolute/relative elementwise comparison.
inline double rel_err(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double denom = std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / denom);
    }
  return worst;
}

// Central finite difference of a vector-valued function of theta.
inline Mat numeric_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x0,
                            double h = 1e-6) {
  const Vec f0 = f(x0);
  Mat J(f0.size(), x0.size());
  for (Eigen::Index k = 0; k < x0.size(); ++k) {
    const double hk = h * std::max(1.0, std::abs(x0[k]));
    Vec xp = x0, xm = x0;
    xp[k] += hk;
    xm[k] -= hk;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * hk);
  }
  return J;
}

}  // namespace geemvc::testing
