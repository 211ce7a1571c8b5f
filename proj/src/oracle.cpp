#include "netexp/oracle.hpp"

#include <bit>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

namespace netexp {

namespace {

int popcnt(Mask m) { return std::popcount(m); }

Mask full_mask(int n) {
  return n >= 64 ? ~Mask(0) : (Mask(1) << n) - 1;
}

}  // namespace

// ---- PotentialOutcomeTable --------------------------------------------------

PotentialOutcomeTable PotentialOutcomeTable::from_function(int n_targets,
                                                           Fn y) {
  if (n_targets < 0) fail(kIntegrityError, "negative target count");
  if (!y) fail(kIntegrityError, "potential outcome function is empty");
  PotentialOutcomeTable t;
  t.n_targets_ = n_targets;
  t.y_ = std::move(y);
  return t;
}

PotentialOutcomeTable PotentialOutcomeTable::stratified(
    const Cluster& cl,
    std::function<double(int j, int key_treated, int total_treated)> g) {
  if (!g) fail(kIntegrityError, "potential outcome function is empty");
  PotentialOutcomeTable t;
  t.n_targets_ = cl.n_targets();
  t.strat_ = std::move(g);
  t.key_masks_.reserve(cl.n_targets());
  for (int j = 0; j < cl.n_targets(); ++j)
    t.key_masks_.push_back(cl.key_mask(j));
  return t;
}

PotentialOutcomeTable PotentialOutcomeTable::additive(
    std::vector<std::vector<double>> beta) {
  if (beta.empty()) fail(kIntegrityError, "additive potential table is empty");
  const std::size_t len = beta.front().size();
  if (len < 1 || len > 65)
    fail(kIntegrityError, "additive coefficient row needs an intercept and "
                          "at most 64 slopes");
  for (const auto& row : beta)
    if (row.size() != len)
      fail(kIntegrityError, "additive coefficient rows have unequal lengths");
  PotentialOutcomeTable t;
  t.n_targets_ = static_cast<int>(beta.size());
  t.beta_ = std::move(beta);
  return t;
}

double PotentialOutcomeTable::y(int j, Mask a) const {
  if (j < 0 || j >= n_targets_)
    fail(kIntegrityError, "target index outside the potential table");
  if (strat_) return strat_(j, popcnt(a & key_masks_[j]), popcnt(a));
  if (!beta_.empty()) {
    const auto& row = beta_[j];
    long double acc = row[0];
    for (std::size_t i = 1; i < row.size(); ++i)
      if (a & (Mask(1) << (i - 1))) acc += row[i];
    return static_cast<double>(acc);
  }
  return y_(j, a);
}

double PotentialOutcomeTable::stratified_value(int j, int key_treated,
                                               int total_treated) const {
  if (!strat_)
    fail(kIntegrityError, "potential table has no stratified form");
  if (j < 0 || j >= n_targets_)
    fail(kIntegrityError, "target index outside the potential table");
  return strat_(j, key_treated, total_treated);
}

// ---- Oracle -----------------------------------------------------------------

Oracle::Oracle(Dataset base, std::vector<PotentialOutcomeTable> tables,
               std::size_t product_cap)
    : base_(std::move(base)), tables_(std::move(tables)),
      product_cap_(product_cap) {
  const int K = base_.n_clusters();
  if (K == 0) fail(kIntegrityError, "dataset has no clusters");
  if (static_cast<int>(tables_.size()) != K)
    fail(kIntegrityError,
         "potential table count does not match the number of clusters");
  if (static_cast<int>(base_.f.size()) != K ||
      static_cast<int>(base_.pi.size()) != K ||
      (base_.has_alt() && static_cast<int>(base_.pi_alt.size()) != K))
    fail(kIntegrityError, "design count does not match the number of clusters");
  base_.assign.assign(K, 0);
  base_.y.resize(K);
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = base_.frame.clusters[k];
    if (cl.n_targets() == 0)
      fail(kIntegrityError, "cluster '" + cl.id + "' has no targets");
    if (tables_[k].n_targets() != cl.n_targets())
      fail(kIntegrityError, "potential table of cluster '" + cl.id +
                                "' does not match its target count");
    base_.y[k].assign(cl.n_targets(), 0.0);
  }
}

const Dataset& Oracle::at(const std::vector<Mask>& assign) {
  const int K = base_.n_clusters();
  if (static_cast<int>(assign.size()) != K)
    fail(kIntegrityError, "assignment count does not match the number of "
                          "clusters");
  for (int k = 0; k < K; ++k) {
    base_.assign[k] = assign[k];
    const int S = base_.frame.clusters[k].n_targets();
    for (int j = 0; j < S; ++j) base_.y[k][j] = tables_[k].y(j, assign[k]);
  }
  return base_;
}

long double Oracle::joint_support_size() const {
  long double prod = 1.0L;
  for (const Design& d : base_.f) prod *= d.support_size();
  return prod;
}

void Oracle::for_each_joint(
    const std::function<void(const std::vector<Mask>&, double)>& fn) {
  const int K = base_.n_clusters();
  if (joint_support_size() > static_cast<long double>(product_cap_))
    fail(kNumericError,
         "joint assignment support exceeds the oracle enumeration cap");
  std::vector<std::vector<std::pair<Mask, double>>> sup(K);
  for (int k = 0; k < K; ++k) sup[k] = base_.f[k].enumerate_support();
  std::vector<std::size_t> idx(K, 0);
  std::vector<Mask> a(K);
  while (true) {
    long double pr = 1.0L;
    for (int k = 0; k < K; ++k) {
      a[k] = sup[k][idx[k]].first;
      pr *= sup[k][idx[k]].second;
    }
    fn(a, static_cast<double>(pr));
    int k = K - 1;
    while (k >= 0 && ++idx[k] == sup[k].size()) {
      idx[k] = 0;
      --k;
    }
    if (k < 0) break;
  }
}

namespace {

// Conditional mean of one target's potential outcomes under its restricted
// intervention law, preferring analytic forms over support enumeration.
// `totals` caches the pmf of the overall treated count for the law (shared
// by all targets with the same law); it is filled on first use.
double conditional_mean(const PotentialOutcomeTable& table, int j, int n_units,
                        const Design& dj, Mask key_mask,
                        std::optional<std::vector<std::pair<int, double>>>* totals,
                        std::optional<std::vector<double>>* marginals) {
  if (table.stratified_form()) {
    if (!totals->has_value()) {
      std::vector<std::pair<int, double>> pmf;
      const Mask all = full_mask(n_units);
      for (int t = 0; t <= n_units; ++t) {
        double p = dj.event_prob({{all, t}});
        if (p > 0.0) pmf.emplace_back(t, p);
      }
      *totals = std::move(pmf);
    }
    const int kk = popcnt(key_mask);
    long double acc = 0.0L;
    for (int c = 0; c <= kk; ++c) {
      double pc = dj.event_prob({{key_mask, c}});
      if (pc <= 0.0) continue;
      if ((*totals)->size() == 1) {
        // The overall count is almost surely constant (fixed-allocation
        // designs): the joint pmf factorizes trivially.
        acc += static_cast<long double>(pc) *
               table.stratified_value(j, c, (*totals)->front().first);
      } else {
        const Mask all = full_mask(n_units);
        for (const auto& [t, pt] : **totals) {
          (void)pt;
          double pj = dj.event_prob({{key_mask, c}, {all, t}});
          if (pj > 0.0)
            acc += static_cast<long double>(pj) *
                   table.stratified_value(j, c, t);
        }
      }
    }
    return static_cast<double>(acc);
  }
  if (table.additive_form()) {
    if (!marginals->has_value()) {
      std::vector<double> q(static_cast<std::size_t>(n_units));
      for (int i = 0; i < n_units; ++i) q[i] = dj.marginal(i, 1);
      *marginals = std::move(q);
    }
    const auto& row = table.coefficients()[j];
    long double acc = row[0];
    for (std::size_t i = 1; i < row.size(); ++i)
      acc += static_cast<long double>(row[i]) * (**marginals)[i - 1];
    return static_cast<double>(acc);
  }
  long double acc = 0.0L;
  dj.for_each_support([&](Mask a, double p) {
    acc += static_cast<long double>(p) * table.y(j, a);
  });
  return static_cast<double>(acc);
}

}  // namespace

double Oracle::estimand(const EstimandSpec& spec) const {
  const auto legs = estimand_legs(base_, spec);
  const int K = base_.n_clusters();
  long double total = 0.0L;
  for (const Leg& leg : legs) {
    const auto& pis = leg.pi_index == 0 ? base_.pi : base_.pi_alt;
    long double acc = 0.0L;
    for (int k = 0; k < K; ++k) {
      const Cluster& cl = base_.frame.clusters[k];
      const int S = cl.n_targets();
      TargetDesigns td(cl, pis[k], leg.adm);
      std::vector<std::optional<std::vector<std::pair<int, double>>>> totals(
          td.n_distinct());
      std::vector<std::optional<std::vector<double>>> marginals(
          td.n_distinct());
      long double cluster = 0.0L;
      for (int j = 0; j < S; ++j) {
        const int d = td.index_of(j);
        cluster += conditional_mean(tables_[k], j, cl.n_units(), td.of(j),
                                    cl.key_mask(j), &totals[d], &marginals[d]);
      }
      acc += cluster / S;
    }
    total += static_cast<long double>(leg.sign) * acc / K;
  }
  return static_cast<double>(total);
}

Oracle::McEstimate Oracle::estimand_mc(const EstimandSpec& spec,
                                       std::int64_t draws, Rng& rng) const {
  if (draws < 2)
    fail(kSchemaError, "Monte Carlo estimand evaluation needs at least 2 draws");
  const auto legs = estimand_legs(base_, spec);
  const int K = base_.n_clusters();
  long double value = 0.0L, var = 0.0L;
  for (const Leg& leg : legs) {
    const auto& pis = leg.pi_index == 0 ? base_.pi : base_.pi_alt;
    for (int k = 0; k < K; ++k) {
      const Cluster& cl = base_.frame.clusters[k];
      const int S = cl.n_targets();
      TargetDesigns td(cl, pis[k], leg.adm);
      for (int j = 0; j < S; ++j) {
        const Design& dj = td.of(j);
        long double mean = 0.0L, m2 = 0.0L;
        for (std::int64_t t = 0; t < draws; ++t) {
          const double v = tables_[k].y(j, dj.sample(rng));
          const long double delta = v - mean;
          mean += delta / static_cast<long double>(t + 1);
          m2 += delta * (v - mean);
        }
        const long double w =
            static_cast<long double>(leg.sign) / (static_cast<double>(K) * S);
        value += w * mean;
        var += w * w * (m2 / static_cast<long double>(draws - 1)) /
               static_cast<long double>(draws);
      }
    }
  }
  return {static_cast<double>(value),
          std::sqrt(static_cast<double>(var))};
}

double Oracle::expectation(const Statistic& stat) {
  long double acc = 0.0L;
  for_each_joint([&](const std::vector<Mask>& a, double pr) {
    acc += static_cast<long double>(pr) * stat(at(a));
  });
  return static_cast<double>(acc);
}

Oracle::Moments Oracle::moments(const Statistic& stat) {
  long double m = 0.0L, m2 = 0.0L;
  for_each_joint([&](const std::vector<Mask>& a, double pr) {
    const long double s = stat(at(a));
    m += pr * s;
    m2 += pr * s * s;
  });
  return {static_cast<double>(m), static_cast<double>(m2 - m * m)};
}

double Oracle::covariance(const Statistic& s1, const Statistic& s2) {
  long double m1 = 0.0L, m2 = 0.0L, m12 = 0.0L;
  for_each_joint([&](const std::vector<Mask>& a, double pr) {
    const Dataset& ds = at(a);
    const long double v1 = s1(ds), v2 = s2(ds);
    m1 += pr * v1;
    m2 += pr * v2;
    m12 += pr * v1 * v2;
  });
  return static_cast<double>(m12 - m1 * m2);
}

double Oracle::conservative_margin(const Statistic& estimate,
                                   double reference) {
  return expectation(estimate) - reference;
}

Oracle::Moments Oracle::moments_separable(
    const std::function<double(int k, Mask a)>& g) const {
  const int K = base_.n_clusters();
  long double mean = 0.0L, var = 0.0L;
  for (int k = 0; k < K; ++k) {
    long double m = 0.0L, m2 = 0.0L;
    base_.f[k].for_each_support([&](Mask a, double pr) {
      const long double v = g(k, a);
      m += pr * v;
      m2 += pr * v * v;
    });
    mean += m;
    var += m2 - m * m;
  }
  const long double kk = static_cast<long double>(K);
  return {static_cast<double>(mean / kk),
          static_cast<double>(var / (kk * kk))};
}

}  // namespace netexp
