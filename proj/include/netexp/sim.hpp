#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "netexp/infer.hpp"
#include "netexp/oracle.hpp"

namespace netexp {

// ---------------------------------------------------------------------------
// Monte Carlo study of the estimators on a bipartite population: K clusters,
// n_k intervention units assigned by complete randomization with equal
// allocation, and m_k non-intervention target units, each attached to one
// intervention unit chosen uniformly at random (the attachment is part of
// the fixed population).  Outcomes follow one of two data-generating models
// built from per-unit covariates (W1, W2 standard normal; W3 one for exactly
// half of each cluster); both depend on the assignment only through the key
// unit's arm and the cluster's treated proportion, so the potential tables
// are stored in stratified form and truth values come from the exact oracle.
// ---------------------------------------------------------------------------

enum class SimModel { M1, M2 };
enum class SimIntervention { Pi1, Pi2 };

// "M1" / "M2" and "pi1" / "pi2" (the CSV spellings).
std::string sim_model_name(SimModel m);
std::string sim_intervention_name(SimIntervention v);

struct SimConfig {
  int K = 10;
  int n_k = 32;  // intervention units per cluster; even, at most 64
  int m_k = 50;  // target units per cluster
  SimModel model = SimModel::M1;
  // Pi1: the stochastic intervention equals the assignment design (complete
  // randomization, n_k/2 treated).  Pi2: stratified by W3 with equal
  // allocation within each stratum (n_k/4 treated per stratum).
  SimIntervention intervention = SimIntervention::Pi1;
  std::int64_t reps = 1000;
  std::uint64_t seed = 1;
  double alpha = 0.05;      // CI miss probability
  int rerandomize_cap = 1000;  // max rejected draws per replication
};

// The fixed finite population for one (config, seed): the bipartite frame
// with covariates and recorded key attachments, designs, potential tables,
// and oracle truth values for the realized covariate draw.  `data.assign`
// and `data.y` are scratch buffers rewritten by each replication.
struct SimPopulation {
  SimConfig config;
  Dataset data;
  std::vector<PotentialOutcomeTable> tables;
  double truth_mu1 = 0.0;
  double truth_de = 0.0;
};

SimPopulation generate_population(const SimConfig& cfg);

struct RepEstimate {
  double point = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct RepResult {
  bool ok = false;   // false once the rerandomization cap is exhausted
  int redraws = 0;   // rejected assignment draws before the accepted one
  RepEstimate ht_mu1, ht_de, hajek_mu1, hajek_de;
};

// One replication: draws cluster assignments from f, writes observed
// outcomes, and estimates mu_1 and DE with both estimators plus their
// stratified-interference variances and normal CIs at level 1 - alpha.
// When the Hajek denominator is zero (every cluster lands outside the
// intervention's support) the whole draw is rejected and redrawn, up to
// cfg.rerandomize_cap times.  Streams are derived from (seed, cluster,
// replication, attempt), so the result depends only on (cfg, rep).
// The optional caches amortize design-dependent tables across calls.
RepResult run_replication(SimPopulation& pop, std::int64_t rep,
                          EvalCache* eval_cache = nullptr,
                          VarEngineCache* var_cache = nullptr);

struct SimResultRow {
  int K = 0;
  int m_k = 0;
  SimModel model = SimModel::M1;
  SimIntervention intervention = SimIntervention::Pi1;
  std::string estimand;   // "mu1" | "DE"
  std::string estimator;  // "ht" | "hajek"
  double truth = 0.0;
  double bias = 0.0;          // mean(point) - truth
  double emp_se = 0.0;        // sample SD of the points
  double mean_se_hat = 0.0;   // mean of the estimated SEs
  double coverage = 0.0;      // fraction of CIs containing the truth
  double ci_length = 0.0;     // mean CI length
  std::int64_t reps_ok = 0;
  std::int64_t reps_failed = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;    // empirical SE collapsed to zero
};

// Pure fold of the replication results in rep order; requires at least two
// successful replications (raises kUndefinedEstimate otherwise).  Emits one
// row per (estimand, estimator): mu1/ht, mu1/hajek, DE/ht, DE/hajek.
std::vector<SimResultRow> aggregate(const SimPopulation& pop,
                                    const std::vector<RepResult>& reps);

// generate_population + reps + aggregate for one configuration.
std::vector<SimResultRow> run_study(const SimConfig& cfg);

// Long-format CSV with header
// K,m_k,model,intervention,estimand,estimator,bias,emp_se,mean_se_hat,
// coverage,ci_length,reps_ok,reps_failed  (floats printed with %.17g).
std::string sim_results_csv(const std::vector<SimResultRow>& rows);

}  // namespace netexp
