#pragma once

#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "netexp/common.hpp"

namespace netexp {

// Event "exactly `count` treated units among `units`".
struct Constraint {
  Mask units = 0;
  int count = 0;
  friend bool operator==(const Constraint&, const Constraint&) = default;
};

// Coordinate pin A_unit = value.
struct Fix {
  int unit = 0;
  int value = 0;
};

enum class DesignKind { Cells, Bernoulli, Explicit };

// Distribution of a cluster's assignment vector. Three bases are supported:
//   * Cells: a partition of the units where each cell independently receives a
//     fixed number of treated units, uniformly at random (complete
//     randomization = one cell, stratified randomization = one cell per
//     stratum).
//   * Bernoulli: independent coins with common probability p in (0,1).
//   * Explicit: a finite table of (assignment, probability) pairs.
// Any design can additionally be conditioned on a conjunction of
// subset-count events ("restricted"), which is how admissible sets and
// stochastic interventions are represented.
class Design {
 public:
  static constexpr std::size_t kSupportCap = std::size_t(1) << 20;

  static Design complete(int n, int n_treated);
  // stratum_of[i] in [0, #strata); n_treated_per_stratum indexed by stratum id.
  static Design stratified(int n, const std::vector<int>& stratum_of,
                           const std::vector<int>& n_treated_per_stratum);
  static Design bernoulli(int n, double p);
  static Design explicit_table(int n, std::vector<std::pair<Mask, double>> table);

  // Condition on additional events. Throws if the admissible set is empty.
  Design restricted(const std::vector<Constraint>& extra) const;

  int n_units() const { return n_; }
  DesignKind kind() const { return kind_; }
  const std::vector<Constraint>& conditioning() const { return cond_; }

  double pmf(Mask a) const;
  // P(A_i = value), value in {0,1}.
  double marginal(int i, int value) const;
  double pair_joint(int i, int vi, int j, int vj) const;
  // Probability of a conjunction of events (under this design, i.e. already
  // conditioned on any restriction).
  double event_prob(const std::vector<Constraint>& events,
                    const std::vector<Fix>& fixes = {}) const;
  double conditional_pmf(Mask a, const std::vector<Constraint>& given) const;

  // Number of support points (2^n minus nothing for unrestricted Bernoulli).
  long double support_size() const;
  bool is_uniform() const;

  // Enumerate (assignment, probability) over the support. Throws
  // kNumericError when the support exceeds `cap`.
  void for_each_support(const std::function<void(Mask, double)>& fn,
                        std::size_t cap = kSupportCap) const;
  std::vector<std::pair<Mask, double>> enumerate_support(
      std::size_t cap = kSupportCap) const;

  Mask sample(Rng& rng) const;

  // Internal decomposition used by the cross-design engine: the density is
  // scalar * prod_i (A_i ? f1 : f0) * 1{all constraints hold}.
  struct FactorForm {
    long double scalar = 1.0L;
    long double f1 = 1.0L, f0 = 1.0L;
    std::vector<Constraint> cons;
  };
  FactorForm factor_form() const;  // throws for Explicit designs

 private:
  Design() = default;
  void init_weights();

  DesignKind kind_ = DesignKind::Cells;
  int n_ = 0;
  std::vector<Mask> cell_mask_;
  std::vector<int> cell_treat_;
  double p_ = 0.5;
  std::vector<std::pair<Mask, double>> table_;  // Explicit: final, normalized
  std::unordered_map<Mask, double> table_idx_;
  std::vector<Constraint> cond_;
  long double base_event_weight_ = 1.0L;  // P_base(conditioning event)
  long double support_size_ = 0.0L;
};

// Sum over assignments v (coordinates in `fixes` pinned, all `events`
// holding) of A(v) * B(v) / F(v); B and F may be null (treated as 1).
// Verifies that the summed region lies inside the support of F and throws
// kAssumptionError otherwise (positivity/overlap violation).
long double ratio_weight_sum(const Design& A, const Design* B, const Design* F,
                             const std::vector<Fix>& fixes = {},
                             const std::vector<Constraint>& events = {});

// Number of assignment vectors satisfying `cons` with `fixes` pinned
// (unweighted counting over {0,1}^n).
long double constrained_count(int n, const std::vector<Constraint>& cons,
                              const std::vector<Fix>& fixes = {});

}  // namespace netexp
