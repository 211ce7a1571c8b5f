// Shared test fixtures: tiny synthetic worlds with known potential-outcome
// functions, plus enumeration-based expectations computed straight from the
// definitions (no reuse of the closed-form code paths under test).
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "netexp/estimators.hpp"
#include "netexp/variance.hpp"

namespace nxtest {

using namespace netexp;

// Potential outcome of target j at assignment vector a.
using YFn = std::function<double(int j, Mask a)>;

struct TestCluster {
  Cluster cl;
  Design f = Design::bernoulli(1, 0.5);
  Design pi = Design::bernoulli(1, 0.5);
  Design pi_alt = Design::bernoulli(1, 0.5);
  bool has_alt = false;
  YFn y;
};

inline Cluster make_cluster(const std::string& id, int n_units,
                            const std::vector<std::vector<int>>& keys,
                            std::vector<std::map<std::string, double>> covs = {}) {
  Cluster cl;
  cl.id = id;
  for (int i = 0; i < n_units; ++i) {
    cl.unit_ids.push_back("u" + std::to_string(i));
    cl.unit_index[cl.unit_ids.back()] = i;
  }
  if (covs.empty()) covs.resize(n_units);
  cl.covariates = std::move(covs);
  for (std::size_t j = 0; j < keys.size(); ++j) {
    cl.target_ids.push_back("t" + std::to_string(j));
    cl.target_index[cl.target_ids.back()] = static_cast<int>(j);
  }
  cl.keys = keys;
  return cl;
}

inline bool satisfies(Mask a, const std::vector<Constraint>& cons) {
  for (const auto& c : cons)
    if (std::popcount(a & c.units) != c.count) return false;
  return true;
}

struct TestWorld {
  std::vector<TestCluster> tcs;

  Dataset dataset(const std::vector<Mask>& assigns) const {
    Dataset ds;
    bool any_alt = false;
    for (const auto& tc : tcs) any_alt = any_alt || tc.has_alt;
    for (std::size_t k = 0; k < tcs.size(); ++k) {
      const auto& tc = tcs[k];
      ds.frame.clusters.push_back(tc.cl);
      ds.frame.cluster_index[tc.cl.id] = static_cast<int>(k);
      ds.f.push_back(tc.f);
      ds.pi.push_back(tc.pi);
      if (any_alt) ds.pi_alt.push_back(tc.has_alt ? tc.pi_alt : tc.pi);
      ds.assign.push_back(assigns[k]);
      std::vector<double> yk(tc.cl.n_targets());
      for (int j = 0; j < tc.cl.n_targets(); ++j) yk[j] = tc.y(j, assigns[k]);
      ds.y.push_back(std::move(yk));
    }
    return ds;
  }

  // Exact value of one estimand leg, straight from the definition:
  // mean over clusters of (1/|S_k|) sum_j E_{pi | C_kj}[Y_j], where the
  // conditional expectation enumerates the base intervention support and
  // filters on the admissible constraints.
  double exact_leg(const AdmissibleSpec& adm, bool alt) const {
    long double acc = 0.0L;
    for (const auto& tc : tcs) {
      const Design& pi = alt && tc.has_alt ? tc.pi_alt : tc.pi;
      long double cluster = 0.0L;
      for (int j = 0; j < tc.cl.n_targets(); ++j) {
        auto cons = admissible_constraints(adm, tc.cl, j);
        long double num = 0.0L, den = 0.0L;
        pi.for_each_support([&](Mask v, double pr) {
          if (!satisfies(v, cons)) return;
          num += (long double)pr * tc.y(j, v);
          den += pr;
        });
        if (den <= 0.0L)
          fail(kAssumptionError, "exact_leg: admissible set has zero mass");
        cluster += num / den;
      }
      acc += cluster / tc.cl.n_targets();
    }
    return static_cast<double>(acc / tcs.size());
  }

  double exact_estimand(const EstimandSpec& spec) const {
    auto kt = [](int arm) {
      AdmissibleSpec a;
      a.kind = AdmissibleSpec::KeyTreated;
      a.a = arm;
      return a;
    };
    switch (spec.kind) {
      case EstimandKind::Mu:
        return exact_leg(kt(spec.arm), false);
      case EstimandKind::DE:
        return exact_leg(kt(1), false) - exact_leg(kt(0), false);
      case EstimandKind::IE:
        return exact_leg(kt(spec.arm), false) - exact_leg(kt(spec.arm), true);
      case EstimandKind::TE:
        return exact_leg(kt(1), false) - exact_leg(kt(0), true);
      case EstimandKind::Tau:
      case EstimandKind::TauMulti:
        return exact_leg(spec.admissible, false);
    }
    fail(kSchemaError, "exact_estimand: unknown kind");
  }

  // Enumerates the product of the clusters' assignment supports and calls
  // fn(probability, realized assignments).
  void for_each_joint(
      const std::function<void(double, const std::vector<Mask>&)>& fn) const {
    std::vector<std::vector<std::pair<Mask, double>>> supports;
    for (const auto& tc : tcs) supports.push_back(tc.f.enumerate_support());
    std::vector<Mask> assigns(tcs.size());
    std::function<void(std::size_t, double)> rec = [&](std::size_t k,
                                                       double pr) {
      if (k == tcs.size()) {
        fn(pr, assigns);
        return;
      }
      for (const auto& [v, p] : supports[k]) {
        assigns[k] = v;
        rec(k + 1, pr * p);
      }
    };
    rec(0, 1.0);
  }

  double expect_joint(const std::function<double(const Dataset&)>& stat) const {
    long double acc = 0.0L;
    for_each_joint([&](double pr, const std::vector<Mask>& assigns) {
      acc += (long double)pr * stat(dataset(assigns));
    });
    return static_cast<double>(acc);
  }

  // Mean and variance of a statistic of the realized dataset.
  std::pair<double, double> joint_mean_var(
      const std::function<double(const Dataset&)>& stat) const {
    long double m = 0.0L, m2 = 0.0L;
    for_each_joint([&](double pr, const std::vector<Mask>& assigns) {
      double s = stat(dataset(assigns));
      m += (long double)pr * s;
      m2 += (long double)pr * s * s;
    });
    return {static_cast<double>(m), static_cast<double>(m2 - m * m)};
  }
};

// --------------------------------------------------------------------------
// Randomized small-world generator for property tests.

struct RandomWorldOpts {
  int max_clusters = 2;
  int min_units = 2;
  int max_units = 5;
  int max_targets = 6;
  bool allow_bernoulli = true;
  bool allow_pi_neq_f = true;     // intervention differing from the design
  bool allow_restricted_pi = true;
  bool multi_key = false;         // targets may have several key units
  bool stratified_outcomes = false;  // Y_j depends only on its key treatment
  bool want_alt = false;          // generate a second intervention
  bool measurable = false;  // every unit-pair arm event has positive design mass
};

inline Design random_base_design(Rng& rng, int n, bool allow_bernoulli,
                                 bool measurable = false) {
  int kind = static_cast<int>(rng.below(allow_bernoulli ? 3 : 2));
  if (measurable) {
    // CR with 2 <= m <= n-2, or strata of size >= 4 with interior counts >= 2
    // on both sides, so every pairwise arm event is possible.
    if (kind != 0 && n >= 8) {
      int s0 = 4 + static_cast<int>(rng.below(std::uint64_t(n - 7)));
      std::vector<int> stratum_of(n, 1);
      for (int i = 0; i < s0; ++i) stratum_of[i] = 0;
      int t0 = 2 + static_cast<int>(rng.below(std::uint64_t(s0 - 3)));
      int t1 = 2 + static_cast<int>(rng.below(std::uint64_t(n - s0 - 3)));
      return Design::stratified(n, stratum_of, {t0, t1});
    }
    int m = 2 + static_cast<int>(rng.below(std::uint64_t(n - 3)));
    return Design::complete(n, m);
  }
  if (kind == 0 || n < 4) {
    int m = 1 + static_cast<int>(rng.below(std::uint64_t(n - 1)));
    return Design::complete(n, m);
  }
  if (kind == 1) {
    // two strata, each of size >= 2, interior treated counts
    int s0 = 2 + static_cast<int>(rng.below(std::uint64_t(n - 3)));
    std::vector<int> stratum_of(n, 1);
    for (int i = 0; i < s0; ++i) stratum_of[i] = 0;
    int t0 = 1 + static_cast<int>(rng.below(std::uint64_t(s0 - 1)));
    int t1 = 1 + static_cast<int>(rng.below(std::uint64_t(n - s0 - 1)));
    return Design::stratified(n, stratum_of, {t0, t1});
  }
  return Design::bernoulli(n, 0.2 + 0.6 * rng.uniform());
}

// A design whose support is contained in f's.
inline Design random_compatible_pi(Rng& rng, int n, const Design& f,
                                   const RandomWorldOpts& o) {
  if (!o.allow_pi_neq_f || rng.below(2) == 0) return f;
  if (f.kind() == DesignKind::Bernoulli && rng.below(2) == 0)
    return random_base_design(rng, n, false);
  if (o.allow_restricted_pi) {
    // condition f on a random subset-count event with positive mass
    for (int attempt = 0; attempt < 20; ++attempt) {
      Mask sub = 0;
      for (int i = 0; i < n; ++i)
        if (rng.below(2)) sub |= Mask(1) << i;
      if (sub == 0) continue;
      int c = static_cast<int>(rng.below(std::uint64_t(std::popcount(sub) + 1)));
      if (f.event_prob({{sub, c}}) <= 0.0) continue;
      return f.restricted({{sub, c}});
    }
  }
  return f;
}

inline AdmissibleSpec random_admissible(Rng& rng, bool multi_key) {
  AdmissibleSpec adm;
  switch (rng.below(3)) {
    case 0:
      adm.kind = AdmissibleSpec::Unrestricted;
      break;
    case 1:
      adm.kind = AdmissibleSpec::KeyTreated;
      adm.a = static_cast<int>(rng.below(2));
      break;
    default:
      adm.kind = AdmissibleSpec::KeyProportion;
      adm.p_star = multi_key ? std::vector<double>{0.0, 0.5, 1.0}[rng.below(3)]
                             : static_cast<double>(rng.below(2));
      break;
  }
  return adm;
}

// Every target's admissible set must have positive mass under every leg's
// intervention law for the estimand to be well defined.
inline bool legs_feasible(const TestCluster& tc, const EstimandSpec& spec) {
  std::vector<std::pair<const Design*, AdmissibleSpec>> legs;
  auto kt = [](int arm) {
    AdmissibleSpec a;
    a.kind = AdmissibleSpec::KeyTreated;
    a.a = arm;
    return a;
  };
  switch (spec.kind) {
    case EstimandKind::Mu:
      legs = {{&tc.pi, kt(spec.arm)}};
      break;
    case EstimandKind::DE:
      legs = {{&tc.pi, kt(1)}, {&tc.pi, kt(0)}};
      break;
    case EstimandKind::IE:
      legs = {{&tc.pi, kt(spec.arm)}, {&tc.pi_alt, kt(spec.arm)}};
      break;
    case EstimandKind::TE:
      legs = {{&tc.pi, kt(1)}, {&tc.pi_alt, kt(0)}};
      break;
    default:
      legs = {{&tc.pi, spec.admissible}};
      if (tc.has_alt) legs.push_back({&tc.pi_alt, spec.admissible});
      break;
  }
  for (const auto& [pi, adm] : legs)
    for (int j = 0; j < tc.cl.n_targets(); ++j) {
      auto cons = admissible_constraints(adm, tc.cl, j);
      if (!cons.empty() &&
          pi->event_prob(cons) <= 0.0)
        return false;
    }
  return true;
}

inline TestCluster random_cluster(Rng& rng, const std::string& id,
                                  const RandomWorldOpts& o,
                                  const EstimandSpec& spec) {
  for (int attempt = 0;; ++attempt) {
    if (attempt > 200) fail(kNumericError, "random_cluster: no feasible draw");
    int lo = o.measurable ? std::max(o.min_units, 4) : o.min_units;
    int n = lo + static_cast<int>(rng.below(std::uint64_t(o.max_units - lo + 1)));
    int s = 1 + static_cast<int>(rng.below(std::uint64_t(o.max_targets)));
    std::vector<std::vector<int>> keys(s);
    for (auto& ks : keys) {
      if (o.multi_key && rng.below(2)) {
        int r = 2 + static_cast<int>(rng.below(std::uint64_t(std::min(n, 3) - 1)));
        while (static_cast<int>(ks.size()) < r) {
          int cand = static_cast<int>(rng.below(std::uint64_t(n)));
          bool dup = false;
          for (int e : ks) dup = dup || e == cand;
          if (!dup) ks.push_back(cand);
        }
        std::sort(ks.begin(), ks.end());
      } else {
        ks.push_back(static_cast<int>(rng.below(std::uint64_t(n))));
      }
    }
    TestCluster tc;
    tc.cl = make_cluster(id, n, keys);
    tc.f = random_base_design(rng, n, o.allow_bernoulli, o.measurable);
    tc.pi = random_compatible_pi(rng, n, tc.f, o);
    tc.has_alt = o.want_alt;
    tc.pi_alt = o.want_alt ? random_compatible_pi(rng, n, tc.f, o) : tc.pi;
    if (o.stratified_outcomes) {
      // Y_j(a) depends only on the treated count among j's key units
      std::vector<std::vector<double>> tab(s);
      for (int j = 0; j < s; ++j) {
        tab[j].resize(keys[j].size() + 1);
        for (auto& v : tab[j]) v = -3.0 + 6.0 * rng.uniform();
      }
      Mask masks[64];
      for (int j = 0; j < s; ++j) masks[j] = tc.cl.key_mask(j);
      tc.y = [tab, masks](int j, Mask a) {
        return tab[j][std::popcount(a & masks[j])];
      };
    } else {
      std::vector<std::vector<double>> tab(s, std::vector<double>(Mask(1) << n));
      for (auto& row : tab)
        for (auto& v : row) v = -3.0 + 6.0 * rng.uniform();
      tc.y = [tab](int j, Mask a) { return tab[j][a]; };
    }
    if (legs_feasible(tc, spec)) return tc;
  }
}

inline TestWorld random_world(Rng& rng, const RandomWorldOpts& o,
                              const EstimandSpec& spec) {
  TestWorld w;
  int K = 1 + static_cast<int>(rng.below(std::uint64_t(o.max_clusters)));
  for (int k = 0; k < K; ++k)
    w.tcs.push_back(random_cluster(rng, "c" + std::to_string(k), o, spec));
  return w;
}

// --------------------------------------------------------------------------
// Bridges into the variance layer (single-key clusters whose outcomes depend
// only on the key unit's own arm).

// Pooled per-unit potentials at arm a.
inline std::vector<double> pooled_arm(const TestCluster& tc, int a) {
  std::vector<double> out(tc.cl.n_units(), 0.0);
  for (int j = 0; j < tc.cl.n_targets(); ++j) {
    int i = tc.cl.single_key(j);
    out[i] += tc.y(j, a ? (Mask(1) << i) : Mask(0));
  }
  return out;
}

// VarCluster views into a world; the world must outlive the result.
inline std::vector<VarCluster> var_clusters(const TestWorld& w) {
  std::vector<VarCluster> cs;
  for (const auto& tc : w.tcs) {
    VarCluster c;
    c.cl = &tc.cl;
    c.f = &tc.f;
    c.pi = &tc.pi;
    c.pi_alt = tc.has_alt ? &tc.pi_alt : nullptr;
    bool single = true;
    for (const auto& ks : tc.cl.keys) single = single && ks.size() == 1;
    if (single) {
      c.y1 = pooled_arm(tc, 1);
      c.y0 = pooled_arm(tc, 0);
    }
    c.y = tc.y;
    cs.push_back(std::move(c));
  }
  return cs;
}

}  // namespace nxtest
