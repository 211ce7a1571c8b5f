#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "netexp/estimators.hpp"

namespace netexp {

// Full schedule of potential outcomes for one cluster: the outcome of target
// j under every assignment vector in the cluster's design support. Three
// structured forms are recognized so that conditional expectations can be
// evaluated analytically instead of by support enumeration:
//   * stratified: y(j, a) = g(j, #treated key units of j, #treated overall),
//     which covers both single-key and multi-key outcome models;
//   * additive:   y(j, a) = beta[j][0] + sum_i beta[j][1 + i] * a_i;
//   * general:    an arbitrary callable.
class PotentialOutcomeTable {
 public:
  using Fn = std::function<double(int j, Mask a)>;

  static PotentialOutcomeTable from_function(int n_targets, Fn y);
  static PotentialOutcomeTable stratified(
      const Cluster& cl,
      std::function<double(int j, int key_treated, int total_treated)> g);
  // One coefficient row per target: intercept followed by one slope per
  // intervention unit.
  static PotentialOutcomeTable additive(std::vector<std::vector<double>> beta);

  int n_targets() const { return n_targets_; }
  double y(int j, Mask a) const;

  bool stratified_form() const { return static_cast<bool>(strat_); }
  bool additive_form() const { return !beta_.empty(); }
  double stratified_value(int j, int key_treated, int total_treated) const;
  const std::vector<std::vector<double>>& coefficients() const { return beta_; }

 private:
  PotentialOutcomeTable() = default;

  int n_targets_ = 0;
  Fn y_;                                         // general form
  std::function<double(int, int, int)> strat_;   // stratified form
  std::vector<Mask> key_masks_;                  // aligned with strat_
  std::vector<std::vector<double>> beta_;        // additive form
};

// Exhaustive-enumeration reference for a fully specified world: a dataset
// skeleton (frame + designs; observed assignment and outcomes are ignored)
// together with one potential-outcome table per cluster.
//
// Estimands are computed directly from their definition as intervention
// averages of the tables. Distributional summaries of arbitrary statistics
// are computed by enumerating the joint assignment support of the design f,
// rebuilding the realized dataset point by point; statistics are registered
// as closures over `const Dataset&` so estimator code is exercised through
// its production interface.
class Oracle {
 public:
  static constexpr std::size_t kProductCap = std::size_t(1) << 22;

  Oracle(Dataset base, std::vector<PotentialOutcomeTable> tables,
         std::size_t product_cap = kProductCap);

  // Exact estimand value by direct averaging over the intervention law(s).
  // Uses the table's structured form when available, otherwise enumerates
  // the conditional intervention support (kNumericError past the cap).
  double estimand(const EstimandSpec& spec) const;

  // Monte Carlo fallback for non-enumerable intervention supports: samples
  // each conditional law `draws` times with an independent stream per target
  // and reports the standard error of the estimate.
  struct McEstimate {
    double value = 0.0;
    double se = 0.0;
  };
  McEstimate estimand_mc(const EstimandSpec& spec, std::int64_t draws,
                         Rng& rng) const;

  using Statistic = std::function<double(const Dataset&)>;
  struct Moments {
    double mean = 0.0;
    double variance = 0.0;
  };

  // The realized dataset at a joint assignment. The returned reference is a
  // shared buffer, valid until the next call into the oracle.
  const Dataset& at(const std::vector<Mask>& assign);

  double expectation(const Statistic& stat);
  Moments moments(const Statistic& stat);
  double covariance(const Statistic& s1, const Statistic& s2);

  // Signed conservativeness margin E[estimate] - reference; nonnegative
  // (up to tolerance) when the estimator is conservative for the reference.
  double conservative_margin(const Statistic& estimate, double reference);

  // Moments of a per-cluster separable statistic (1/K) sum_k g(k, A_k),
  // computed cluster by cluster via independence across clusters — no joint
  // enumeration, so this scales to worlds whose product support is out of
  // reach.
  Moments moments_separable(
      const std::function<double(int k, Mask a)>& g) const;

  long double joint_support_size() const;
  int n_clusters() const { return base_.n_clusters(); }

 private:
  void for_each_joint(
      const std::function<void(const std::vector<Mask>&, double)>& fn);

  Dataset base_;  // assign/y double as the evaluation buffer
  std::vector<PotentialOutcomeTable> tables_;
  std::size_t product_cap_ = kProductCap;
};

}  // namespace netexp
