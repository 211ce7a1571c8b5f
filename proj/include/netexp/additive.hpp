#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <vector>

#include "netexp/design.hpp"
#include "netexp/frame.hpp"

namespace netexp {

// Variance machinery for outcomes that are additive in the assignment vector:
// Y_kj(a) = beta0 + sum_i beta_i a_i, one coefficient vector per target.

// E[(1, A)(1, A)^T] under the assignment design, an (n+1) x (n+1) matrix.
Eigen::MatrixXd design_moment_matrix(const Design& f);

// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rtol = 1e-10);

// Regression-style coefficient estimate pinv * (1, A) * y_obs.
Eigen::VectorXd additive_coef_hat(const Eigen::MatrixXd& pinv, Mask a, int n,
                                  double y_obs);

// Per-cluster engine caching normalized second-moment ("tilt") matrices
//   T[key1 at a1 under d1, key2 at a2 under d2]
//     = sum_v d1(v) d2(v) / f(v) * (1,v)(1,v)^T over {v : v_key1=a1, v_key2=a2}
//       / { d1(A_key1 = a1) * d2(A_key2 = a2) },
// so that beta_j^T T beta_j' is the leading bilinear term of the covariance
// bracket for the pair of targets. Conflicting pins (same key, different
// arms) give T = 0. The d slots select the intervention: 0 = pi, 1 = pi_alt.
class AdditiveEngine {
 public:
  AdditiveEngine(const Design& f, const Design& pi, const Design* pi_alt = nullptr);

  const Eigen::MatrixXd& tilt(int key1, int a1, int d1, int key2, int a2, int d2);
  // (1, P(A_i = 1 | A_key = a)) under intervention d, as an (n+1)-vector.
  Eigen::VectorXd anchor(int key, int a, int d) const;
  int n() const { return f_.n_units(); }

 private:
  const Design& intervention(int d) const;

  Design f_, pi_;
  std::optional<Design> alt_;
  std::map<std::uint64_t, Eigen::MatrixXd> cache_;
};

// Unscaled covariance bracket for one cluster:
//   sum_{j,j'} [ b1_j^T T(key_j,a1,d1; key_j',a2,d2) b2_j'
//                - {anchor(key_j,a1,d1).b1_j} {anchor(key_j',a2,d2).b2_j'} ].
// Requires every target to have a single key unit.
double additive_cov_block(AdditiveEngine& eng, const Cluster& cl,
                          const std::vector<Eigen::VectorXd>& b1, int a1, int d1,
                          const std::vector<Eigen::VectorXd>& b2, int a2, int d2);

// Covariance of zeta_{b1}(A) and zeta_{b2}(A) under f, where
//   zeta_b(v) = sum_j pi_kj(v) / f(v) * (1,v)^T b_j
// and pi_kj is the intervention restricted to target j's admissible set.
// Unscaled (no 1/|S|^2 factor); enumerates the support of f.
double additive_zeta_cov(const Cluster& cl, const Design& f, const Design& pi,
                         const AdmissibleSpec& adm,
                         const std::vector<Eigen::VectorXd>& b1,
                         const std::vector<Eigen::VectorXd>& b2);

struct AdditiveCluster {
  const Cluster* cl = nullptr;
  const Design* f = nullptr;
  const Design* pi = nullptr;
  const Design* pi_alt = nullptr;
  std::vector<Eigen::VectorXd> beta;  // one (n+1)-vector per target
};

// Exact variances given the true coefficient vectors.
double var_mu_additive(const std::vector<AdditiveCluster>& cs, int a);
double var_de_additive(const std::vector<AdditiveCluster>& cs);
double var_ie_additive(const std::vector<AdditiveCluster>& cs, int a);
double var_tau_additive(const std::vector<AdditiveCluster>& cs,
                        const AdmissibleSpec& adm);

// Plug-in estimators: coefficients are estimated per target from the observed
// assignment and outcome, then substituted into the exact formulas. Upwardly
// biased (conservative) in expectation.
double var_mu_additive_hat(const Dataset& ds, int a);
double var_de_additive_hat(const Dataset& ds);
double var_ie_additive_hat(const Dataset& ds, int a);
double var_tau_additive_hat(const Dataset& ds, const AdmissibleSpec& adm);

// Estimated coefficient vectors for every target of every cluster.
std::vector<std::vector<Eigen::VectorXd>> additive_coef_hats(const Dataset& ds);

// Cluster views over a dataset with the supplied coefficients plugged in;
// the dataset must outlive the result.
std::vector<AdditiveCluster> additive_plug_in(
    const Dataset& ds, std::vector<std::vector<Eigen::VectorXd>> coef);

}  // namespace netexp
