#include "netexp/design.hpp"

#include <algorithm>
#include <bit>
#include <map>

namespace netexp {

namespace {

inline Mask full_mask(int n) {
  return n >= 64 ? ~Mask(0) : ((Mask(1) << n) - 1);
}

inline int popcnt(Mask m) { return std::popcount(m); }

// Dedupe / sanity-check a constraint list. Returns false when the event is
// empty by construction (conflicting counts or impossible cardinalities).
bool canonicalize(std::vector<Constraint>& cons) {
  std::map<Mask, int> seen;
  std::vector<Constraint> out;
  for (const auto& c : cons) {
    if (c.count < 0 || c.count > popcnt(c.units)) return false;
    if (c.units == 0) {
      if (c.count != 0) return false;
      continue;
    }
    auto it = seen.find(c.units);
    if (it != seen.end()) {
      if (it->second != c.count) return false;
      continue;
    }
    seen.emplace(c.units, c.count);
    out.push_back(c);
  }
  cons = std::move(out);
  return true;
}

// Core engine: sum over assignments of the units in `universe` of
//   prod_i (A_i ? g1 : g0)  subject to  popcount(a & cons[m].units) == count.
// Works atom-by-atom on the partition induced by constraint membership.
long double dp_weighted_sum(Mask universe, long double g1, long double g0,
                            std::vector<Constraint> cons) {
  for (auto& c : cons) {
    c.units &= universe;
  }
  if (!canonicalize(cons)) return 0.0L;
  const int m = static_cast<int>(cons.size());
  if (m == 0) {
    long double tot = 1.0L;
    int freecnt = popcnt(universe);
    for (int i = 0; i < freecnt; ++i) tot *= (g1 + g0);
    return tot;
  }
  if (m > 32) fail(kNumericError, "too many simultaneous design constraints");

  // Units outside every constraint contribute a free factor (g1+g0).
  Mask constrained = 0;
  for (const auto& c : cons) constrained |= c.units;
  long double free_factor = 1.0L;
  for (int i = popcnt(universe & ~constrained); i > 0; --i) free_factor *= (g1 + g0);

  // Atoms: maximal groups of units sharing the same constraint membership.
  std::map<std::uint32_t, int> atom_size;
  Mask rest = universe & constrained;
  while (rest) {
    int u = std::countr_zero(rest);
    rest &= rest - 1;
    std::uint32_t pat = 0;
    for (int j = 0; j < m; ++j)
      if (cons[j].units >> u & 1) pat |= (1u << j);
    atom_size[pat] += 1;
  }
  std::vector<std::uint32_t> apat;
  std::vector<int> asz;
  for (auto& [p, s] : atom_size) {
    apat.push_back(p);
    asz.push_back(s);
  }
  const int na = static_cast<int>(apat.size());

  // Flattened DP state: accumulated count per constraint.
  std::vector<std::size_t> stride(m);
  std::size_t nstates = 1;
  for (int j = 0; j < m; ++j) {
    stride[j] = nstates;
    nstates *= static_cast<std::size_t>(cons[j].count) + 1;
    if (nstates > (std::size_t(1) << 26))
      fail(kNumericError, "design constraint state space too large");
  }
  // Remaining capacity per constraint after each atom, for pruning.
  std::vector<std::vector<int>> remcap(na + 1, std::vector<int>(m, 0));
  for (int a = na - 1; a >= 0; --a) {
    for (int j = 0; j < m; ++j)
      remcap[a][j] = remcap[a + 1][j] + ((apat[a] >> j & 1) ? asz[a] : 0);
  }

  const int maxsz = *std::max_element(asz.begin(), asz.end());
  std::vector<long double> pow1(maxsz + 1, 1.0L), pow0(maxsz + 1, 1.0L);
  for (int t = 1; t <= maxsz; ++t) {
    pow1[t] = pow1[t - 1] * g1;
    pow0[t] = pow0[t - 1] * g0;
  }

  std::vector<long double> cur(nstates, 0.0L), nxt;
  cur[0] = 1.0L;
  std::vector<int> counts(m, 0);
  for (int a = 0; a < na; ++a) {
    nxt.assign(nstates, 0.0L);
    for (std::size_t s = 0; s < nstates; ++s) {
      if (cur[s] == 0.0L) continue;
      // Decode state.
      std::size_t rem = s;
      bool feasible = true;
      for (int j = m - 1; j >= 0; --j) {
        counts[j] = static_cast<int>(rem / stride[j]);
        rem %= stride[j];
        if (counts[j] + remcap[a][j] < cons[j].count) {
          feasible = false;
        }
      }
      if (!feasible) continue;
      for (int t = 0; t <= asz[a]; ++t) {
        std::size_t s2 = s;
        bool ok = true;
        for (int j = 0; j < m && ok; ++j) {
          if (apat[a] >> j & 1) {
            if (counts[j] + t > cons[j].count) ok = false;
            else s2 += stride[j] * static_cast<std::size_t>(t);
          }
        }
        if (!ok) break;  // larger t only overshoots further
        nxt[s2] += cur[s] * binom_ld(asz[a], t) * pow1[t] * pow0[asz[a] - t];
      }
    }
    cur.swap(nxt);
  }
  std::size_t target = 0;
  for (int j = 0; j < m; ++j) target += stride[j] * static_cast<std::size_t>(cons[j].count);
  return cur[target] * free_factor;
}

bool satisfies(Mask a, const std::vector<Constraint>& cons) {
  for (const auto& c : cons)
    if (popcnt(a & c.units) != c.count) return false;
  return true;
}

// Reduce pinned coordinates out of (universe, constraints), multiplying the
// per-unit factor of each pinned value into `scalar`. Returns false when the
// fixes are contradictory or break a constraint.
bool apply_fixes(Mask& universe, std::vector<Constraint>& cons, long double g1,
                 long double g0, const std::vector<Fix>& fixes,
                 long double& scalar) {
  std::map<int, int> pin;
  for (const auto& f : fixes) {
    if (f.unit < 0 || f.value < 0 || f.value > 1) return false;
    auto [it, fresh] = pin.emplace(f.unit, f.value);
    if (!fresh && it->second != f.value) return false;
  }
  for (const auto& [u, v] : pin) {
    Mask bit = Mask(1) << u;
    if (!(universe & bit)) return false;
    universe &= ~bit;
    scalar *= (v ? g1 : g0);
    for (auto& c : cons) {
      if (c.units & bit) {
        c.units &= ~bit;
        c.count -= v;
        if (c.count < 0) return false;
      }
    }
  }
  return true;
}

}  // namespace

// ---- factories ------------------------------------------------------------

Design Design::complete(int n, int n_treated) {
  if (n < 1 || n > 64) fail(kSchemaError, "complete design: cluster size must be in [1,64]");
  if (n_treated < 0 || n_treated > n)
    fail(kSchemaError, "complete design: n_treated outside [0, n]");
  Design d;
  d.kind_ = DesignKind::Cells;
  d.n_ = n;
  d.cell_mask_ = {full_mask(n)};
  d.cell_treat_ = {n_treated};
  d.init_weights();
  return d;
}

Design Design::stratified(int n, const std::vector<int>& stratum_of,
                          const std::vector<int>& n_treated_per_stratum) {
  if (n < 1 || n > 64) fail(kSchemaError, "stratified design: cluster size must be in [1,64]");
  if (static_cast<int>(stratum_of.size()) != n)
    fail(kSchemaError, "stratified design: stratum_of must have one entry per unit");
  const int ns = static_cast<int>(n_treated_per_stratum.size());
  std::vector<Mask> masks(ns, 0);
  for (int i = 0; i < n; ++i) {
    int s = stratum_of[i];
    if (s < 0 || s >= ns) fail(kSchemaError, "stratified design: stratum id out of range");
    masks[s] |= Mask(1) << i;
  }
  Design d;
  d.kind_ = DesignKind::Cells;
  d.n_ = n;
  for (int s = 0; s < ns; ++s) {
    if (masks[s] == 0 && n_treated_per_stratum[s] != 0)
      fail(kSchemaError, "stratified design: treated units requested in an empty stratum");
    if (masks[s] == 0) continue;
    if (n_treated_per_stratum[s] < 0 || n_treated_per_stratum[s] > popcnt(masks[s]))
      fail(kSchemaError, "stratified design: per-stratum treated count out of range");
    d.cell_mask_.push_back(masks[s]);
    d.cell_treat_.push_back(n_treated_per_stratum[s]);
  }
  if (d.cell_mask_.empty()) fail(kSchemaError, "stratified design: no strata");
  d.init_weights();
  return d;
}

Design Design::bernoulli(int n, double p) {
  if (n < 1 || n > 64) fail(kSchemaError, "bernoulli design: cluster size must be in [1,64]");
  if (!(p > 0.0 && p < 1.0)) fail(kSchemaError, "bernoulli design: p must lie in (0,1)");
  Design d;
  d.kind_ = DesignKind::Bernoulli;
  d.n_ = n;
  d.p_ = p;
  d.init_weights();
  return d;
}

Design Design::explicit_table(int n, std::vector<std::pair<Mask, double>> table) {
  if (n < 1 || n > 64) fail(kSchemaError, "explicit design: cluster size must be in [1,64]");
  if (table.empty()) fail(kSchemaError, "explicit design: empty table");
  std::sort(table.begin(), table.end());
  double tot = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto [mask, pr] = table[i];
    if (mask > full_mask(n)) fail(kSchemaError, "explicit design: assignment uses unknown units");
    if (!(pr > 0.0)) fail(kSchemaError, "explicit design: probabilities must be positive");
    if (i > 0 && table[i - 1].first == mask)
      fail(kSchemaError, "explicit design: duplicate assignment row");
    tot += pr;
  }
  if (std::abs(tot - 1.0) > 1e-6)
    fail(kSchemaError, "explicit design: probabilities must sum to 1");
  for (auto& [mask, pr] : table) pr /= tot;
  Design d;
  d.kind_ = DesignKind::Explicit;
  d.n_ = n;
  d.table_ = std::move(table);
  d.init_weights();
  return d;
}

Design Design::restricted(const std::vector<Constraint>& extra) const {
  Design d = *this;
  if (kind_ == DesignKind::Explicit) {
    std::vector<std::pair<Mask, double>> kept;
    double tot = 0.0;
    for (const auto& [mask, pr] : table_) {
      if (satisfies(mask, extra)) {
        kept.emplace_back(mask, pr);
        tot += pr;
      }
    }
    if (kept.empty() || tot <= 0.0)
      fail(kAssumptionError, "restriction yields an empty admissible set");
    for (auto& [mask, pr] : kept) pr /= tot;
    d.table_ = std::move(kept);
  } else {
    for (const auto& c : extra) d.cond_.push_back(c);
  }
  d.init_weights();
  return d;
}

void Design::init_weights() {
  table_idx_.clear();
  switch (kind_) {
    case DesignKind::Cells: {
      std::vector<Constraint> cons;
      for (std::size_t c = 0; c < cell_mask_.size(); ++c)
        cons.push_back({cell_mask_[c], cell_treat_[c]});
      for (const auto& c : cond_) cons.push_back(c);
      support_size_ = dp_weighted_sum(full_mask(n_), 1.0L, 1.0L, cons);
      if (support_size_ <= 0.0L)
        fail(kAssumptionError, "restriction yields an empty admissible set");
      long double unrestricted = 1.0L;
      for (std::size_t c = 0; c < cell_mask_.size(); ++c)
        unrestricted *= binom_ld(popcnt(cell_mask_[c]), cell_treat_[c]);
      base_event_weight_ = support_size_ / unrestricted;
      break;
    }
    case DesignKind::Bernoulli: {
      base_event_weight_ =
          dp_weighted_sum(full_mask(n_), (long double)p_, 1.0L - (long double)p_, cond_);
      if (base_event_weight_ <= 0.0L)
        fail(kAssumptionError, "restriction yields an empty admissible set");
      support_size_ = dp_weighted_sum(full_mask(n_), 1.0L, 1.0L, cond_);
      break;
    }
    case DesignKind::Explicit: {
      support_size_ = static_cast<long double>(table_.size());
      base_event_weight_ = 1.0L;
      for (const auto& [mask, pr] : table_) table_idx_.emplace(mask, pr);
      break;
    }
  }
}

// ---- pointwise queries ------------------------------------------------------

double Design::pmf(Mask a) const {
  switch (kind_) {
    case DesignKind::Cells: {
      for (std::size_t c = 0; c < cell_mask_.size(); ++c)
        if (popcnt(a & cell_mask_[c]) != cell_treat_[c]) return 0.0;
      if (!satisfies(a, cond_)) return 0.0;
      return static_cast<double>(1.0L / support_size_);
    }
    case DesignKind::Bernoulli: {
      if (!satisfies(a, cond_)) return 0.0;
      int t = popcnt(a & full_mask(n_));
      long double w = 1.0L;
      for (int i = 0; i < t; ++i) w *= p_;
      for (int i = 0; i < n_ - t; ++i) w *= (1.0L - p_);
      return static_cast<double>(w / base_event_weight_);
    }
    case DesignKind::Explicit: {
      auto it = table_idx_.find(a);
      return it == table_idx_.end() ? 0.0 : it->second;
    }
  }
  return 0.0;
}

double Design::marginal(int i, int value) const {
  return event_prob({}, {{i, value}});
}

double Design::pair_joint(int i, int vi, int j, int vj) const {
  if (i == j) return vi == vj ? marginal(i, vi) : 0.0;
  return event_prob({}, {{i, vi}, {j, vj}});
}

double Design::event_prob(const std::vector<Constraint>& events,
                          const std::vector<Fix>& fixes) const {
  return static_cast<double>(ratio_weight_sum(*this, nullptr, nullptr, fixes, events));
}

double Design::conditional_pmf(Mask a, const std::vector<Constraint>& given) const {
  if (!satisfies(a, given)) return 0.0;
  double pe = event_prob(given);
  if (pe <= 0.0) fail(kAssumptionError, "conditioning event has probability zero");
  return pmf(a) / pe;
}

long double Design::support_size() const { return support_size_; }

bool Design::is_uniform() const {
  switch (kind_) {
    case DesignKind::Cells:
      return true;
    case DesignKind::Bernoulli:
      return p_ == 0.5;
    case DesignKind::Explicit: {
      double p0 = table_.front().second;
      for (const auto& [mask, pr] : table_)
        if (std::abs(pr - p0) > 1e-12 * std::max(1.0, std::abs(p0))) return false;
      return true;
    }
  }
  return false;
}

Design::FactorForm Design::factor_form() const {
  FactorForm ff;
  switch (kind_) {
    case DesignKind::Cells: {
      ff.scalar = 1.0L / support_size_;
      for (std::size_t c = 0; c < cell_mask_.size(); ++c)
        ff.cons.push_back({cell_mask_[c], cell_treat_[c]});
      for (const auto& c : cond_) ff.cons.push_back(c);
      break;
    }
    case DesignKind::Bernoulli: {
      ff.scalar = 1.0L / base_event_weight_;
      ff.f1 = p_;
      ff.f0 = 1.0L - (long double)p_;
      ff.cons = cond_;
      break;
    }
    case DesignKind::Explicit:
      fail(kNumericError, "factor_form unavailable for explicit designs");
  }
  return ff;
}

// ---- enumeration ------------------------------------------------------------

void Design::for_each_support(const std::function<void(Mask, double)>& fn,
                              std::size_t cap) const {
  if (kind_ == DesignKind::Explicit) {
    if (table_.size() > cap) fail(kNumericError, "support enumeration exceeds cap");
    for (const auto& [mask, pr] : table_) fn(mask, pr);
    return;
  }
  if (support_size_ > static_cast<long double>(cap))
    fail(kNumericError, "support enumeration exceeds cap");

  std::vector<Constraint> cons = cond_;
  if (kind_ == DesignKind::Cells)
    for (std::size_t c = 0; c < cell_mask_.size(); ++c)
      cons.push_back({cell_mask_[c], cell_treat_[c]});
  const int m = static_cast<int>(cons.size());
  // Per-unit constraint membership for pruning.
  std::vector<std::vector<int>> member(n_);
  std::vector<int> remaining(m), current(m, 0);
  for (int j = 0; j < m; ++j) remaining[j] = popcnt(cons[j].units);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < m; ++j)
      if (cons[j].units >> i & 1) member[i].push_back(j);

  long double logp1 = 0, logp0 = 0;  // unused for Cells
  double punif = kind_ == DesignKind::Cells ? static_cast<double>(1.0L / support_size_) : 0.0;
  (void)logp1;
  (void)logp0;

  Mask a = 0;
  std::function<void(int)> rec = [&](int i) {
    if (i == n_) {
      double pr;
      if (kind_ == DesignKind::Cells) {
        pr = punif;
      } else {
        int t = popcnt(a);
        long double w = 1.0L;
        for (int x = 0; x < t; ++x) w *= p_;
        for (int x = 0; x < n_ - t; ++x) w *= (1.0L - p_);
        pr = static_cast<double>(w / base_event_weight_);
      }
      fn(a, pr);
      return;
    }
    for (int v = 0; v <= 1; ++v) {
      bool ok = true;
      for (int j : member[i]) {
        int c2 = current[j] + v;
        if (c2 > cons[j].count || c2 + (remaining[j] - 1) < cons[j].count) {
          ok = false;
          break;
        }
      }
      if (ok) {
        for (int j : member[i]) {
          current[j] += v;
          remaining[j] -= 1;
        }
        if (v) a |= Mask(1) << i;
        rec(i + 1);
        if (v) a &= ~(Mask(1) << i);
        for (int j : member[i]) {
          current[j] -= v;
          remaining[j] += 1;
        }
      }
    }
  };
  rec(0);
}

std::vector<std::pair<Mask, double>> Design::enumerate_support(std::size_t cap) const {
  std::vector<std::pair<Mask, double>> out;
  for_each_support([&](Mask a, double p) { out.emplace_back(a, p); }, cap);
  return out;
}

// ---- sampling ---------------------------------------------------------------

Mask Design::sample(Rng& rng) const {
  if (kind_ == DesignKind::Explicit) {
    double u = rng.uniform(), acc = 0.0;
    for (const auto& [mask, pr] : table_) {
      acc += pr;
      if (u < acc) return mask;
    }
    return table_.back().first;
  }
  if (cond_.empty()) {
    if (kind_ == DesignKind::Bernoulli) {
      Mask a = 0;
      for (int i = 0; i < n_; ++i)
        if (rng.uniform() < p_) a |= Mask(1) << i;
      return a;
    }
    // Independent cells: partial Fisher-Yates within each cell.
    Mask a = 0;
    for (std::size_t c = 0; c < cell_mask_.size(); ++c) {
      std::vector<int> idx;
      Mask rest = cell_mask_[c];
      while (rest) {
        idx.push_back(std::countr_zero(rest));
        rest &= rest - 1;
      }
      int t = cell_treat_[c];
      for (int k = 0; k < t; ++k) {
        std::size_t j = k + static_cast<std::size_t>(rng.below(idx.size() - k));
        std::swap(idx[k], idx[j]);
        a |= Mask(1) << idx[k];
      }
    }
    return a;
  }
  // Conditioned designs: exact sequential-conditional sampling.
  const long double g1 = kind_ == DesignKind::Bernoulli ? (long double)p_ : 1.0L;
  const long double g0 = kind_ == DesignKind::Bernoulli ? 1.0L - (long double)p_ : 1.0L;
  std::vector<Constraint> cons = cond_;
  if (kind_ == DesignKind::Cells)
    for (std::size_t c = 0; c < cell_mask_.size(); ++c)
      cons.push_back({cell_mask_[c], cell_treat_[c]});
  Mask a = 0;
  Mask universe = full_mask(n_);
  std::vector<Constraint> work = cons;
  long double total = dp_weighted_sum(universe, g1, g0, work);
  for (int i = 0; i < n_; ++i) {
    Mask bit = Mask(1) << i;
    // Weight of continuations with A_i = 1.
    Mask uni1 = universe & ~bit;
    std::vector<Constraint> c1 = work;
    long double w1 = 0.0L;
    bool ok1 = true;
    for (auto& c : c1) {
      if (c.units & bit) {
        c.units &= ~bit;
        if (--c.count < 0) {
          ok1 = false;
          break;
        }
      }
    }
    if (ok1) w1 = g1 * dp_weighted_sum(uni1, g1, g0, c1);
    double pr1 = static_cast<double>(w1 / total);
    if (rng.uniform() < pr1) {
      a |= bit;
      work = std::move(c1);
      total = w1 / g1;
    } else {
      for (auto& c : work) c.units &= ~bit;
      total = std::max(total - w1, 0.0L) / g0;
    }
    universe &= ~bit;
  }
  return a;
}

// ---- cross-design engine ------------------------------------------------------

long double ratio_weight_sum(const Design& A, const Design* B, const Design* F,
                             const std::vector<Fix>& fixes,
                             const std::vector<Constraint>& events) {
  const int n = A.n_units();
  if ((B && B->n_units() != n) || (F && F->n_units() != n))
    fail(kIntegrityError, "cross-design sum over mismatched cluster sizes");

  const Design* iter = nullptr;
  if (A.kind() == DesignKind::Explicit) iter = &A;
  else if (B && B->kind() == DesignKind::Explicit) iter = B;
  else if (F && F->kind() == DesignKind::Explicit) iter = &A;

  if (iter || (F && F->kind() == DesignKind::Explicit)) {
    // Enumeration fallback: iterate the support of a finite design.
    long double acc = 0.0L;
    const Design& src = iter ? *iter : A;
    src.for_each_support([&](Mask v, double psrc) {
      (void)psrc;
      for (const auto& f : fixes)
        if (((v >> f.unit) & 1) != static_cast<Mask>(f.value)) return;
      for (const auto& c : events)
        if (std::popcount(v & c.units) != c.count) return;
      long double pa = A.pmf(v);
      long double pb = B ? (long double)B->pmf(v) : 1.0L;
      if (pa == 0.0L || pb == 0.0L) return;
      if (F) {
        long double pf = F->pmf(v);
        if (pf <= 0.0L)
          fail(kAssumptionError,
               "overlap violation: intervention support outside assignment support");
        acc += pa * pb / pf;
      } else {
        acc += pa * pb;
      }
    });
    return acc;
  }

  auto fa = A.factor_form();
  Design::FactorForm fb, ff;
  if (B) fb = B->factor_form();
  if (F) ff = F->factor_form();
  if (F && (ff.f1 == 0.0L || ff.f0 == 0.0L))
    fail(kNumericError, "degenerate denominator design");

  long double scalar = fa.scalar * (B ? fb.scalar : 1.0L) / (F ? ff.scalar : 1.0L);
  long double g1 = fa.f1 * (B ? fb.f1 : 1.0L) / (F ? ff.f1 : 1.0L);
  long double g0 = fa.f0 * (B ? fb.f0 : 1.0L) / (F ? ff.f0 : 1.0L);

  std::vector<Constraint> cons = fa.cons;
  if (B) cons.insert(cons.end(), fb.cons.begin(), fb.cons.end());
  for (const auto& c : events) cons.push_back(c);

  Mask universe = (n >= 64 ? ~Mask(0) : ((Mask(1) << n) - 1));

  if (F && !ff.cons.empty()) {
    // Positivity: the summation region must lie inside the support of F.
    Mask u1 = universe, u2 = universe;
    long double s1 = 1.0L, s2 = 1.0L;
    std::vector<Constraint> c1 = cons, c2 = cons;
    c2.insert(c2.end(), ff.cons.begin(), ff.cons.end());
    bool ok1 = apply_fixes(u1, c1, 1.0L, 1.0L, fixes, s1);
    bool ok2 = apply_fixes(u2, c2, 1.0L, 1.0L, fixes, s2);
    long double cnt_region = ok1 ? dp_weighted_sum(u1, 1.0L, 1.0L, c1) : 0.0L;
    long double cnt_inside = ok2 ? dp_weighted_sum(u2, 1.0L, 1.0L, c2) : 0.0L;
    if (cnt_region != cnt_inside)
      fail(kAssumptionError,
           "overlap violation: intervention support outside assignment support");
    cons = std::move(c2);
    // fixes already applied to c2/u2; finish with the factor weights.
    long double fixed_scalar = 1.0L;
    Mask u = universe;
    std::vector<Constraint> cfinal = fa.cons;
    if (B) cfinal.insert(cfinal.end(), fb.cons.begin(), fb.cons.end());
    cfinal.insert(cfinal.end(), ff.cons.begin(), ff.cons.end());
    for (const auto& c : events) cfinal.push_back(c);
    if (!apply_fixes(u, cfinal, g1, g0, fixes, fixed_scalar)) return 0.0L;
    return scalar * fixed_scalar * dp_weighted_sum(u, g1, g0, cfinal);
  }

  long double fixed_scalar = 1.0L;
  if (!apply_fixes(universe, cons, g1, g0, fixes, fixed_scalar)) return 0.0L;
  return scalar * fixed_scalar * dp_weighted_sum(universe, g1, g0, cons);
}

long double constrained_count(int n, const std::vector<Constraint>& cons,
                              const std::vector<Fix>& fixes) {
  Mask universe = (n >= 64 ? ~Mask(0) : ((Mask(1) << n) - 1));
  long double scalar = 1.0L;
  std::vector<Constraint> work = cons;
  if (!apply_fixes(universe, work, 1.0L, 1.0L, fixes, scalar)) return 0.0L;
  return dp_weighted_sum(universe, 1.0L, 1.0L, work);
}

}  // namespace netexp
