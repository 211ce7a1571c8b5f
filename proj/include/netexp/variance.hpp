#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "netexp/estimators.hpp"

namespace netexp {

// True when every assignment in the design's support treats the same number
// of units (complete randomization, stratified designs, and explicit tables
// with constant popcount qualify; Bernoulli does not).
bool fixed_proportion(const Design& d);

// True when the design is complete randomization over all its units; if so
// and n_treated is non-null, stores the common treated count.
bool is_complete_randomization(const Design& d, int* n_treated = nullptr);

// ---------------------------------------------------------------------------
// Pairwise variance coefficients for single-key target structures.
//
// kappa(i,a,i2,b) = S(i:a, i2:b) / (pi_m(i,a) * pi_m(i2,b)) - 1, where
// S(fixes) = sum over assignments v consistent with the fixes of
// pi(v)^2 / f(v).  Diagonal entries (i==i2, a==b) give the per-unit
// coefficient; i==i2 with a!=b is an impossible joint event, so the ratio
// sum is empty and kappa is exactly -1.
// ---------------------------------------------------------------------------
class KappaEngine {
 public:
  KappaEngine(const Design& f, const Design& pi);

  double kappa(int i, int a, int i2, int b) const;
  double pi_marginal(int i, int a) const;
  double f_marginal(int i, int a) const;
  // Joint probability under f of unit i at arm a and unit i2 at arm b.
  double f_pair(int i, int a, int i2, int b) const;
  int n() const { return f_.n_units(); }
  const Design& f() const { return f_; }
  const Design& pi() const { return pi_; }

 private:
  int slot2(int i, int a) const { return 2 * i + a; }
  int slot4(int i, int a, int i2, int b) const {
    return slot2(i, a) * 2 * f_.n_units() + slot2(i2, b);
  }

  Design f_;
  Design pi_;
  // Dense lazily filled memo tables: every entry is a pure function of the
  // two designs, so an engine kept alive amortizes the probability DPs
  // across repeated quadratic-form evaluations.
  mutable std::vector<double> kappa_, fpair_, fmar_, pimar_;
  mutable std::vector<unsigned char> kappa_ok_, fpair_ok_, fmar_ok_,
      pimar_ok_;
};

// Difference-measure analog used for indirect-effect variances: coefficients
// built from u_i(v) = pi(v)/pi_m(i,a) - ti(v)/ti_m(i,a).  ctilde is the
// single-unit sum of u_i(v)^2 / f(v); dtilde the cross-unit sum of
// u_i(v) u_i2(v) / f(v).  There is no -1 shift, and impossible joint events
// yield exactly zero.
class KappaDiffEngine {
 public:
  KappaDiffEngine(const Design& f, const Design& pi, const Design& ti);

  double ctilde(int i, int a) const;
  double dtilde(int i, int i2, int a) const;
  double f_marginal(int i, int a) const;
  double f_pair_same(int i, int i2, int a) const;
  int n() const { return f_.n_units(); }

 private:
  Design f_;
  Design pi_;
  Design ti_;
  // Dense lazily filled memos, same rationale as KappaEngine.
  mutable std::vector<double> ctilde_, dtilde_, fmar_, fpair_;
  mutable std::vector<unsigned char> ctilde_ok_, dtilde_ok_, fmar_ok_,
      fpair_ok_;
};

// ---------------------------------------------------------------------------
// Quadratic forms.  Each returns the per-cluster bracket
//   sum_i kappa(i,a;i,b) x_i z_i + sum_{i != i2} kappa(i,a;i2,b) x_i z_{i2}
// or its observed-data estimate; callers apply the 1/K^2 and 1/|S_k|^2
// scaling.  x and z are pooled per-unit vectors of length n.
// ---------------------------------------------------------------------------
double quad_exact(const KappaEngine& ke, const std::vector<double>& x, int a,
                  const std::vector<double>& z, int b);

// Diagonal surrogate used by observed-data estimates when a != b (the joint
// event A_i=a, A_i=b is impossible, so the diagonal cannot be weighted
// directly).  HalfSum replaces -x_i z_i by the bound term
// -(1/2){1(A_i=a)/f_m(i,a) x_i^2 + 1(A_i=b)/f_m(i,b) z_i^2}; Arm1 and Arm0
// estimate the product via the arm named by `a` or `b` respectively, which
// is valid when one factor is a known constant (degree counts).
enum class CrossDiag { HalfSum, Arm1, Arm0 };

double quad_hat(const KappaEngine& ke, Mask A, const std::vector<double>& x,
                int a, const std::vector<double>& z, int b,
                CrossDiag cd = CrossDiag::HalfSum);

double quad_diff_exact(const KappaDiffEngine& kd, const std::vector<double>& x,
                       int a);
double quad_diff_hat(const KappaDiffEngine& kd, Mask A,
                     const std::vector<double>& x, int a);

// ---------------------------------------------------------------------------
// Event-group engine for estimands whose admissible sets are count events
// (general tau, including multiple key units per target).  Targets sharing an
// identical admissible constraint list form one group; outcomes are pooled
// within groups; coefficients are ratio sums of the restricted intervention
// against the design.
// ---------------------------------------------------------------------------
struct EventGroups {
  // One entry per distinct admissible constraint list, in first-seen target
  // order.  targets[g] lists the member target indices.
  std::vector<std::vector<Constraint>> events;
  std::vector<std::vector<int>> targets;
};

EventGroups event_groups(const Cluster& cl, const AdmissibleSpec& adm);

// Pools per-target values (observed or potential) into per-group sums.
std::vector<double> pool_by_group(const EventGroups& g,
                                  const std::vector<double>& per_target);

class EventEngine {
 public:
  EventEngine(const Design& f, const Design& pi, const EventGroups& g);

  int n_groups() const { return static_cast<int>(events_.size()); }
  double ctilde(int g) const;
  double dtilde(int g, int g2) const;
  double f_event(int g) const;
  double f_joint(int g, int g2) const;
  bool event_holds(int g, Mask A) const;
  bool joint_holds(int g, int g2, Mask A) const;

 private:
  Design f_;
  Design pi_;
  std::vector<std::vector<Constraint>> events_;
  std::vector<Design> restricted_;
  mutable std::unordered_map<std::uint32_t, double> cache_;
};

// Per-cluster bracket for the event-group variance and its observed-data
// estimate.  x holds pooled per-group values.  The estimate replaces any
// non-measurable cross term (joint event probability zero with nonzero
// coefficient and values) by the conservative half-sum bound of the two
// diagonal terms and sets *used_fallback.  The bilinear forms give the
// covariance bracket between two HT sums sharing the event structure.
double event_quad_exact(const EventEngine& ee, const std::vector<double>& x);
double event_quad_exact(const EventEngine& ee, const std::vector<double>& x,
                        const std::vector<double>& z);
double event_quad_hat(const EventEngine& ee, Mask A,
                      const std::vector<double>& x, bool* used_fallback);
double event_quad_hat(const EventEngine& ee, Mask A,
                      const std::vector<double>& x, const std::vector<double>& z,
                      bool* used_fallback);

// Guards shared by the quadratic-form variance estimators.
void require_single_key(const Cluster& cl);
void require_fixed_proportion(const Design& f, const std::string& cluster_id);

// ---------------------------------------------------------------------------
// Cluster inputs for exact (design-distribution) variance computations.
// y1/y0 are pooled per-unit potential outcome sums under the stratified
// interference assumption; y is the full per-target potential outcome
// function used by the general-form and smoothness-bound paths.
// ---------------------------------------------------------------------------
struct VarCluster {
  const Cluster* cl = nullptr;
  const Design* f = nullptr;
  const Design* pi = nullptr;
  const Design* pi_alt = nullptr;
  std::vector<double> y1;
  std::vector<double> y0;
  std::function<double(int, Mask)> y;
};

// Exact variances under stratified interference (single key unit per
// target).  The DE bound replaces the unidentified cross diagonal by the
// half-sum surrogate; it equals the variance exactly when y1 == y0.
double var_mu_stratified(const std::vector<VarCluster>& cs, int a);
double var_de_stratified(const std::vector<VarCluster>& cs);
double var_de_stratified_bound(const std::vector<VarCluster>& cs);
double var_ie_stratified(const std::vector<VarCluster>& cs, int a);

// Exact variance of the HT estimator of mu_a without the stratified
// restriction: per-target second-moment sums assembled over the enumerable
// support of the design.
double var_mu_general(const std::vector<VarCluster>& cs, int a);

// Exact event-group variance for general tau; outcomes must be constant on
// each admissible event, and x-values are evaluated by the caller.
struct EventCluster {
  const Cluster* cl = nullptr;
  const Design* f = nullptr;
  const Design* pi = nullptr;
  EventGroups groups;
  std::vector<double> x;  // pooled per-group potential outcomes
};
double var_tau_event(const std::vector<EventCluster>& cs);

// ---------------------------------------------------------------------------
// Reusable per-cluster engine cache.  Engines depend only on the designs
// (f_k, pi_k[, pi_alt_k]), never on the realized assignment or outcomes, so
// repeated variance evaluations on a dataset whose designs do not change
// (e.g. simulation replications that only rewrite assign/y) can share them.
// Slots are keyed by cluster position; reuse the cache only while the
// dataset's design vectors are unchanged.
// ---------------------------------------------------------------------------
struct VarEngineCache {
  std::vector<std::unique_ptr<KappaEngine>> kappa;    // (f_k, pi_k)
  std::vector<std::unique_ptr<KappaDiffEngine>> diff; // (f_k, pi_k, pi_alt_k)

  const KappaEngine& kappa_for(const Dataset& ds, int k);
  const KappaDiffEngine& diff_for(const Dataset& ds, int k);
};

// ---------------------------------------------------------------------------
// Observed-data variance estimates (dataset-level).  These validate the
// fixed-proportion design requirement and the single-key target structure,
// then assemble the per-cluster quadratic forms with pooled observed
// outcomes.  Estimates for mu and IE are design-unbiased; the DE estimate is
// conservative (its expectation is var_de_stratified_bound).  Passing an
// engine cache amortizes coefficient computation across calls.
// ---------------------------------------------------------------------------
double var_mu_stratified_hat(const Dataset& ds, int a,
                             VarEngineCache* cache = nullptr);
double var_de_stratified_hat(const Dataset& ds,
                             VarEngineCache* cache = nullptr);
double var_ie_stratified_hat(const Dataset& ds, int a,
                             VarEngineCache* cache = nullptr);

struct EventVarEstimate {
  double value = 0.0;
  bool used_fallback = false;  // a non-measurable cross term was bounded
};
EventVarEstimate var_tau_event_hat(const Dataset& ds,
                                   const AdmissibleSpec& adm);

// ---------------------------------------------------------------------------
// Complete-randomization closed forms (intervention equal to a CR design).
// Exact variances use pooled potentials; estimates use within-arm sample
// variances of pooled observed outcomes.
// ---------------------------------------------------------------------------
double var_mu_cr(const std::vector<VarCluster>& cs, int a);
double var_de_cr(const std::vector<VarCluster>& cs);
double var_mu_cr_hat(const Dataset& ds, int a);
double var_de_cr_hat(const Dataset& ds);

// ---------------------------------------------------------------------------
// Smoothness-based upper bound for designs with unrestricted interference.
// Requires complete randomization with intervention equal to the design.
// The outcome function is assumed C(n)-Lipschitz in the unordered L1 distance
// between assignments of the remaining units, with C(n) = c / sqrt(n).
// ---------------------------------------------------------------------------
struct LipschitzSpec {
  double c = 1.0;
  double outcome_bound = 0.0;  // finite-amplitude check only
};

struct LipschitzParts {
  double slack_single = 0.0;  // distance-driven term, per-target sums
  double slack_cross = 0.0;   // distance-driven term, cross-target sums
  double term_sq = 0.0;       // squared-outcome term (exact or estimated)
  double term_cross = 0.0;    // cross-product term (exact or estimated)
  std::vector<std::string> warnings;
  double total() const { return slack_single + slack_cross + term_sq + term_cross; }
};

LipschitzParts lipschitz_bound(const std::vector<VarCluster>& cs, int a,
                               const LipschitzSpec& spec);
LipschitzParts lipschitz_hat(const Dataset& ds, int a,
                             const LipschitzSpec& spec);

}  // namespace netexp
