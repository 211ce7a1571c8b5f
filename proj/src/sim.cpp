#include "netexp/sim.hpp"

#include <cmath>
#include <utility>

namespace netexp {

std::string sim_model_name(SimModel m) {
  return m == SimModel::M1 ? "M1" : "M2";
}

std::string sim_intervention_name(SimIntervention v) {
  return v == SimIntervention::Pi1 ? "pi1" : "pi2";
}

namespace {

// Stream purposes for the counter-derived generators.  Every random choice
// is drawn from Rng(seed).fork(purpose).fork(cluster).fork(index).fork(rep),
// so the realized population and every replication are independent of
// evaluation order (and of whether other configurations ran first).
enum StreamPurpose : std::uint64_t {
  kCovStream = 1,     // index = intervention unit
  kHalfStream = 2,    // index = 0 (one per-cluster draw for the W3 half)
  kAttachStream = 3,  // index = target
  kAssignStream = 4,  // index = attempt; rep = replication
};

Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t cluster,
           std::uint64_t index, std::uint64_t rep) {
  return Rng(seed).fork(purpose).fork(cluster).fork(index).fork(rep);
}

void validate_config(const SimConfig& cfg) {
  if (cfg.K < 1) fail(kSchemaError, "simulation needs at least one cluster");
  if (cfg.n_k < 2 || cfg.n_k > 64 || cfg.n_k % 2 != 0)
    fail(kSchemaError,
         "intervention units per cluster must be even and between 2 and 64");
  if (cfg.intervention == SimIntervention::Pi2 && cfg.n_k % 4 != 0)
    fail(kSchemaError,
         "the stratified intervention splits each stratum evenly; the unit "
         "count per cluster must be divisible by 4");
  if (cfg.m_k < 1) fail(kSchemaError, "each cluster needs a target unit");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    fail(kSchemaError, "confidence level alpha must lie in (0,1)");
  if (cfg.reps < 0) fail(kSchemaError, "replication count must be >= 0");
  if (cfg.rerandomize_cap < 0)
    fail(kSchemaError, "rerandomization cap must be >= 0");
}

EstimandSpec mu1_spec() {
  EstimandSpec s;
  s.kind = EstimandKind::Mu;
  s.arm = 1;
  return s;
}

EstimandSpec de_spec() {
  EstimandSpec s;
  s.kind = EstimandKind::DE;
  return s;
}

}  // namespace

SimPopulation generate_population(const SimConfig& cfg) {
  validate_config(cfg);
  const int n = cfg.n_k;
  const int m = cfg.m_k;

  SimPopulation pop;
  pop.config = cfg;

  std::vector<Design> f, pi;
  std::vector<PotentialOutcomeTable> tables;
  Frame frame;
  for (int k = 0; k < cfg.K; ++k) {
    Cluster cl;
    cl.id = "c" + std::to_string(k);

    // Intervention units and their covariates.  W3 marks a uniformly random
    // half of the cluster (drawn by partial Fisher-Yates).
    std::vector<double> w1(n), w2(n), w3(n, 0.0);
    for (int i = 0; i < n; ++i) {
      cl.unit_ids.push_back("i" + std::to_string(i));
      cl.unit_index[cl.unit_ids.back()] = i;
      Rng cs = stream(cfg.seed, kCovStream, k, i, 0);
      w1[i] = cs.normal();
      w2[i] = cs.normal();
    }
    {
      Rng hs = stream(cfg.seed, kHalfStream, k, 0, 0);
      std::vector<int> order(n);
      for (int i = 0; i < n; ++i) order[i] = i;
      for (int i = 0; i < n / 2; ++i) {
        int j = i + static_cast<int>(hs.below(n - i));
        std::swap(order[i], order[j]);
        w3[order[i]] = 1.0;
      }
    }
    for (int i = 0; i < n; ++i)
      cl.covariates.push_back(
          {{"W1", w1[i]}, {"W2", w2[i]}, {"W3", w3[i]}});

    // Targets, each attached to one uniformly chosen key unit.
    std::vector<double> kw1(m), kw2(m), kw3(m);
    for (int j = 0; j < m; ++j) {
      cl.target_ids.push_back("t" + std::to_string(j));
      cl.target_index[cl.target_ids.back()] = j;
      Rng as = stream(cfg.seed, kAttachStream, k, j, 0);
      const int key = static_cast<int>(as.below(n));
      cl.keys.push_back({key});
      kw1[j] = w1[key];
      kw2[j] = w2[key];
      kw3[j] = w3[key];
    }

    // Outcomes depend on the key unit's arm and the treated proportion.
    const bool m2 = cfg.model == SimModel::M2;
    const double dn = static_cast<double>(n);
    auto g = [kw1, kw2, kw3, m2, dn](int j, int key_treated,
                                     int total_treated) {
      const double a = static_cast<double>(key_treated);
      const double p = static_cast<double>(total_treated) / dn;
      double out = 5.0 - 2.5 * a - 1.5 * p + kw1[j] - 0.5 * kw2[j] +
                   3.0 * kw3[j] + a * p;
      if (m2) out += 2.0 * (kw1[j] + kw2[j]) * a;
      return out;
    };
    tables.push_back(PotentialOutcomeTable::stratified(cl, g));

    f.push_back(Design::complete(n, n / 2));
    if (cfg.intervention == SimIntervention::Pi1) {
      pi.push_back(f.back());
    } else {
      std::vector<int> stratum_of(n);
      for (int i = 0; i < n; ++i) stratum_of[i] = w3[i] > 0.5 ? 1 : 0;
      pi.push_back(Design::stratified(n, stratum_of, {n / 4, n / 4}));
    }

    frame.cluster_index[cl.id] = static_cast<int>(frame.clusters.size());
    frame.clusters.push_back(std::move(cl));
  }

  pop.data = Dataset{std::move(frame), std::move(f), std::move(pi),
                     {},          std::vector<Mask>(cfg.K, 0),
                     std::vector<std::vector<double>>(
                         cfg.K, std::vector<double>(m, 0.0))};
  pop.tables = std::move(tables);

  // Truth for the realized covariate draw, via the exact oracle (the
  // stratified table form keeps this analytic even at n = 32).
  Oracle oracle(pop.data, pop.tables);
  pop.truth_mu1 = oracle.estimand(mu1_spec());
  pop.truth_de = oracle.estimand(de_spec());
  return pop;
}

RepResult run_replication(SimPopulation& pop, std::int64_t rep,
                          EvalCache* eval_cache, VarEngineCache* var_cache) {
  const SimConfig& cfg = pop.config;
  Dataset& ds = pop.data;

  InferOptions ht;
  ht.estimator = PointEstimator::HT;
  ht.alpha = cfg.alpha;
  ht.eval_cache = eval_cache;
  ht.var_cache = var_cache;
  InferOptions hj = ht;
  hj.estimator = PointEstimator::Hajek;

  auto pack = [](const EstimateReport& r) {
    return RepEstimate{r.point, r.se, r.ci_lo, r.ci_hi};
  };

  RepResult out;
  for (int attempt = 0; attempt <= cfg.rerandomize_cap; ++attempt) {
    for (int k = 0; k < cfg.K; ++k) {
      Rng dr = stream(cfg.seed, kAssignStream, k, attempt,
                      static_cast<std::uint64_t>(rep));
      ds.assign[k] = ds.f[k].sample(dr);
      const Mask a = ds.assign[k];
      for (int j = 0; j < cfg.m_k; ++j) ds.y[k][j] = pop.tables[k].y(j, a);
    }
    try {
      out.hajek_mu1 = pack(run_estimate(ds, mu1_spec(), hj));
      out.hajek_de = pack(run_estimate(ds, de_spec(), hj));
    } catch (const NxError& e) {
      if (e.code() == kUndefinedEstimate) continue;  // reject, redraw
      throw;
    }
    out.ht_mu1 = pack(run_estimate(ds, mu1_spec(), ht));
    out.ht_de = pack(run_estimate(ds, de_spec(), ht));
    out.ok = true;
    out.redraws = attempt;
    return out;
  }
  out.ok = false;
  out.redraws = cfg.rerandomize_cap;
  return out;
}

std::vector<SimResultRow> aggregate(const SimPopulation& pop,
                                    const std::vector<RepResult>& reps) {
  const SimConfig& cfg = pop.config;
  std::int64_t ok = 0;
  for (const RepResult& r : reps) ok += r.ok ? 1 : 0;
  const std::int64_t failed = static_cast<std::int64_t>(reps.size()) - ok;
  if (ok == 0)
    fail(kUndefinedEstimate,
         "all replications failed: the rerandomization cap was exhausted in "
         "every draw");
  if (ok < 2)
    fail(kUndefinedEstimate,
         "fewer than two successful replications; the empirical standard "
         "error is undefined");

  struct Series {
    const char* estimand;
    const char* estimator;
    double truth;
    RepEstimate RepResult::*field;
  };
  const Series series[] = {
      {"mu1", "ht", pop.truth_mu1, &RepResult::ht_mu1},
      {"mu1", "hajek", pop.truth_mu1, &RepResult::hajek_mu1},
      {"DE", "ht", pop.truth_de, &RepResult::ht_de},
      {"DE", "hajek", pop.truth_de, &RepResult::hajek_de},
  };

  std::vector<SimResultRow> rows;
  for (const Series& s : series) {
    long double mean = 0.0L, m2 = 0.0L, se_sum = 0.0L, len_sum = 0.0L;
    std::int64_t covered = 0, seen = 0;
    for (const RepResult& r : reps) {
      if (!r.ok) continue;
      const RepEstimate& e = r.*(s.field);
      ++seen;
      const long double d = e.point - mean;
      mean += d / seen;
      m2 += d * (e.point - mean);
      se_sum += e.se;
      len_sum += e.ci_hi - e.ci_lo;
      if (e.ci_lo <= s.truth && s.truth <= e.ci_hi) ++covered;
    }
    SimResultRow row;
    row.K = cfg.K;
    row.m_k = cfg.m_k;
    row.model = cfg.model;
    row.intervention = cfg.intervention;
    row.estimand = s.estimand;
    row.estimator = s.estimator;
    row.truth = s.truth;
    row.bias = static_cast<double>(mean) - s.truth;
    row.emp_se = std::sqrt(static_cast<double>(m2 / (seen - 1)));
    row.mean_se_hat = static_cast<double>(se_sum / seen);
    row.coverage = static_cast<double>(covered) / static_cast<double>(seen);
    row.ci_length = static_cast<double>(len_sum / seen);
    row.reps_ok = ok;
    row.reps_failed = failed;
    row.seed = cfg.seed;
    row.degenerate = row.emp_se == 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SimResultRow> run_study(const SimConfig& cfg) {
  SimPopulation pop = generate_population(cfg);
  EvalCache eval_cache;
  VarEngineCache var_cache;
  std::vector<RepResult> reps;
  reps.reserve(static_cast<std::size_t>(cfg.reps));
  for (std::int64_t r = 0; r < cfg.reps; ++r)
    reps.push_back(run_replication(pop, r, &eval_cache, &var_cache));
  return aggregate(pop, reps);
}

std::string sim_results_csv(const std::vector<SimResultRow>& rows) {
  std::string out =
      "K,m_k,model,intervention,estimand,estimator,bias,emp_se,mean_se_hat,"
      "coverage,ci_length,reps_ok,reps_failed\n";
  for (const SimResultRow& r : rows) {
    out += std::to_string(r.K) + ',' + std::to_string(r.m_k) + ',' +
           sim_model_name(r.model) + ',' +
           sim_intervention_name(r.intervention) + ',' + r.estimand + ',' +
           r.estimator + ',' + fmt17(r.bias) + ',' + fmt17(r.emp_se) + ',' +
           fmt17(r.mean_se_hat) + ',' + fmt17(r.coverage) + ',' +
           fmt17(r.ci_length) + ',' + std::to_string(r.reps_ok) + ',' +
           std::to_string(r.reps_failed) + '\n';
  }
  return out;
}

}  // namespace netexp
