#include "netexp/variance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <optional>
#include <tuple>

namespace netexp {

namespace {

Mask all_units_mask(int n) {
  return n >= 64 ? ~Mask(0) : ((Mask(1) << n) - 1);
}

int arm_of(Mask A, int i) { return static_cast<int>((A >> i) & 1u); }

std::uint32_t pack4(int i, int a, int i2, int b) {
  return static_cast<std::uint32_t>(i) | (static_cast<std::uint32_t>(a) << 8) |
         (static_cast<std::uint32_t>(i2) << 16) |
         (static_cast<std::uint32_t>(b) << 24);
}

[[noreturn]] void non_measurable(const std::string& what) {
  fail(ExitCode::kAssumptionError,
       "design cannot measure " + what +
           ": the joint event has probability zero but its variance "
           "coefficient is nonzero");
}

double pooled_at(const std::vector<double>& x, int i) {
  return i < static_cast<int>(x.size()) ? x[i] : 0.0;
}

}  // namespace

void require_single_key(const Cluster& cl) {
  for (int j = 0; j < cl.n_targets(); ++j)
    if (cl.keys[j].size() != 1)
      fail(ExitCode::kAssumptionError,
           "target '" + cl.target_ids[j] + "' in cluster '" + cl.id +
               "' has several key units; use the event-based variance method");
}

void require_fixed_proportion(const Design& f, const std::string& cluster_id) {
  if (!fixed_proportion(f))
    fail(ExitCode::kAssumptionError,
         "variance method requires a fixed number of treated units per "
         "cluster; the design of cluster '" +
             cluster_id + "' draws a random treated count");
}

bool fixed_proportion(const Design& d) {
  if (d.kind() == DesignKind::Cells) return true;
  const Mask all = all_units_mask(d.n_units());
  if (d.kind() == DesignKind::Bernoulli) {
    for (const auto& c : d.conditioning())
      if (c.units == all) return true;
    return false;
  }
  int count = -1;
  bool fixed = true;
  d.for_each_support([&](Mask v, double) {
    int pc = std::popcount(v);
    if (count < 0)
      count = pc;
    else if (pc != count)
      fixed = false;
  });
  return fixed;
}

bool is_complete_randomization(const Design& d, int* n_treated) {
  if (d.kind() != DesignKind::Cells || !d.conditioning().empty()) return false;
  Design::FactorForm ff = d.factor_form();
  if (ff.cons.size() != 1 || ff.cons[0].units != all_units_mask(d.n_units()))
    return false;
  if (n_treated != nullptr) *n_treated = ff.cons[0].count;
  return true;
}

// ---------------------------------------------------------------------------
// KappaEngine
// ---------------------------------------------------------------------------

KappaEngine::KappaEngine(const Design& f, const Design& pi) : f_(f), pi_(pi) {
  if (f_.n_units() != pi_.n_units())
    fail(ExitCode::kIntegrityError,
         "design and intervention have different unit counts");
  const std::size_t two_n = 2 * static_cast<std::size_t>(f_.n_units());
  kappa_.assign(two_n * two_n, 0.0);
  kappa_ok_.assign(two_n * two_n, 0);
  fpair_.assign(two_n * two_n, 0.0);
  fpair_ok_.assign(two_n * two_n, 0);
  fmar_.assign(two_n, 0.0);
  fmar_ok_.assign(two_n, 0);
  pimar_.assign(two_n, 0.0);
  pimar_ok_.assign(two_n, 0);
}

double KappaEngine::kappa(int i, int a, int i2, int b) const {
  if (i == i2 && a != b) return -1.0;
  if (std::tie(i2, b) < std::tie(i, a)) {
    std::swap(i, i2);
    std::swap(a, b);
  }
  const int slot = slot4(i, a, i2, b);
  if (kappa_ok_[slot]) return kappa_[slot];

  std::vector<Fix> fixes{{i, a}};
  if (i2 != i) fixes.push_back({i2, b});
  const long double s = ratio_weight_sum(pi_, &pi_, &f_, fixes);
  const double m1 = pi_marginal(i, a);
  const double m2 = pi_marginal(i2, b);
  if (m1 <= 0.0 || m2 <= 0.0)
    fail(ExitCode::kAssumptionError,
         "variance coefficient undefined: the intervention never places a "
         "contributing unit at the requested arm");
  const double v =
      static_cast<double>(s / (static_cast<long double>(m1) * m2)) - 1.0;
  kappa_[slot] = v;
  kappa_ok_[slot] = 1;
  return v;
}

double KappaEngine::pi_marginal(int i, int a) const {
  const int slot = slot2(i, a);
  if (!pimar_ok_[slot]) {
    pimar_[slot] = pi_.marginal(i, a);
    pimar_ok_[slot] = 1;
  }
  return pimar_[slot];
}

double KappaEngine::f_marginal(int i, int a) const {
  const int slot = slot2(i, a);
  if (!fmar_ok_[slot]) {
    fmar_[slot] = f_.marginal(i, a);
    fmar_ok_[slot] = 1;
  }
  return fmar_[slot];
}

double KappaEngine::f_pair(int i, int a, int i2, int b) const {
  if (i == i2) return a == b ? f_marginal(i, a) : 0.0;
  const int slot = slot4(i, a, i2, b);
  if (!fpair_ok_[slot]) {
    fpair_[slot] = f_.pair_joint(i, a, i2, b);
    fpair_ok_[slot] = 1;
  }
  return fpair_[slot];
}

// ---------------------------------------------------------------------------
// KappaDiffEngine
// ---------------------------------------------------------------------------

KappaDiffEngine::KappaDiffEngine(const Design& f, const Design& pi,
                                 const Design& ti)
    : f_(f), pi_(pi), ti_(ti) {
  if (f_.n_units() != pi_.n_units() || f_.n_units() != ti_.n_units())
    fail(ExitCode::kIntegrityError,
         "designs of an intervention contrast have different unit counts");
  const std::size_t n = static_cast<std::size_t>(f_.n_units());
  ctilde_.assign(2 * n, 0.0);
  ctilde_ok_.assign(2 * n, 0);
  dtilde_.assign(2 * n * n, 0.0);
  dtilde_ok_.assign(2 * n * n, 0);
  fmar_.assign(2 * n, 0.0);
  fmar_ok_.assign(2 * n, 0);
  fpair_.assign(2 * n * n, 0.0);
  fpair_ok_.assign(2 * n * n, 0);
}

double KappaDiffEngine::ctilde(int i, int a) const {
  const int slot = 2 * i + a;
  if (ctilde_ok_[slot]) return ctilde_[slot];

  const std::vector<Fix> fixes{{i, a}};
  const long double rpp = ratio_weight_sum(pi_, &pi_, &f_, fixes);
  const long double rpt = ratio_weight_sum(pi_, &ti_, &f_, fixes);
  const long double rtt = ratio_weight_sum(ti_, &ti_, &f_, fixes);
  const long double mp = pi_.marginal(i, a);
  const long double mt = ti_.marginal(i, a);
  if (mp <= 0.0L || mt <= 0.0L)
    fail(ExitCode::kAssumptionError,
         "variance coefficient undefined: an intervention never places a "
         "contributing unit at the requested arm");
  const double v = static_cast<double>(rpp / (mp * mp) - 2.0L * rpt / (mp * mt) +
                                       rtt / (mt * mt));
  ctilde_[slot] = v;
  ctilde_ok_[slot] = 1;
  return v;
}

double KappaDiffEngine::dtilde(int i, int i2, int a) const {
  if (i2 < i) std::swap(i, i2);
  const int slot = 2 * (i * f_.n_units() + i2) + a;
  if (dtilde_ok_[slot]) return dtilde_[slot];

  const std::vector<Fix> fixes{{i, a}, {i2, a}};
  const long double rpp = ratio_weight_sum(pi_, &pi_, &f_, fixes);
  const long double rpt = ratio_weight_sum(pi_, &ti_, &f_, fixes);
  const long double rtt = ratio_weight_sum(ti_, &ti_, &f_, fixes);
  const long double mp1 = pi_.marginal(i, a), mp2 = pi_.marginal(i2, a);
  const long double mt1 = ti_.marginal(i, a), mt2 = ti_.marginal(i2, a);
  if (mp1 <= 0.0L || mp2 <= 0.0L || mt1 <= 0.0L || mt2 <= 0.0L)
    fail(ExitCode::kAssumptionError,
         "variance coefficient undefined: an intervention never places a "
         "contributing unit at the requested arm");
  const double v = static_cast<double>(
      rpp / (mp1 * mp2) - rpt / (mp1 * mt2) - rpt / (mt1 * mp2) +
      rtt / (mt1 * mt2));
  dtilde_[slot] = v;
  dtilde_ok_[slot] = 1;
  return v;
}

double KappaDiffEngine::f_marginal(int i, int a) const {
  const int slot = 2 * i + a;
  if (!fmar_ok_[slot]) {
    fmar_[slot] = f_.marginal(i, a);
    fmar_ok_[slot] = 1;
  }
  return fmar_[slot];
}

double KappaDiffEngine::f_pair_same(int i, int i2, int a) const {
  if (i == i2) return f_marginal(i, a);
  if (i2 < i) std::swap(i, i2);
  const int slot = 2 * (i * f_.n_units() + i2) + a;
  if (!fpair_ok_[slot]) {
    fpair_[slot] = f_.pair_joint(i, a, i2, a);
    fpair_ok_[slot] = 1;
  }
  return fpair_[slot];
}

// ---------------------------------------------------------------------------
// Quadratic forms
// ---------------------------------------------------------------------------

double quad_exact(const KappaEngine& ke, const std::vector<double>& x, int a,
                  const std::vector<double>& z, int b) {
  const int n = ke.n();
  long double acc = 0.0L;
  for (int i = 0; i < n; ++i) {
    for (int i2 = 0; i2 < n; ++i2) {
      const double term = pooled_at(x, i) * pooled_at(z, i2);
      if (term == 0.0) continue;
      acc += static_cast<long double>(ke.kappa(i, a, i2, b)) * term;
    }
  }
  return static_cast<double>(acc);
}

double quad_hat(const KappaEngine& ke, Mask A, const std::vector<double>& x,
                int a, const std::vector<double>& z, int b, CrossDiag cd) {
  const int n = ke.n();
  long double acc = 0.0L;
  for (int i = 0; i < n; ++i) {
    const double xi = pooled_at(x, i);
    const double zi = pooled_at(z, i);
    if (a == b) {
      const double term = xi * zi;
      if (term == 0.0) continue;
      const double coef = ke.kappa(i, a, i, a);
      if (coef == 0.0) continue;
      const double fm = ke.f_marginal(i, a);
      if (fm <= 0.0)
        non_measurable("unit " + std::to_string(i) + " at arm " +
                       std::to_string(a));
      if (arm_of(A, i) == a) acc += static_cast<long double>(coef) * term / fm;
    } else {
      // The joint event A_i=a, A_i=b is impossible; the product x_i z_i is
      // replaced by an observable surrogate.
      switch (cd) {
        case CrossDiag::HalfSum: {
          if (xi != 0.0) {
            const double fm = ke.f_marginal(i, a);
            if (fm <= 0.0)
              non_measurable("unit " + std::to_string(i) + " at arm " +
                             std::to_string(a));
            if (arm_of(A, i) == a) acc -= 0.5L * xi * xi / fm;
          }
          if (zi != 0.0) {
            const double fm = ke.f_marginal(i, b);
            if (fm <= 0.0)
              non_measurable("unit " + std::to_string(i) + " at arm " +
                             std::to_string(b));
            if (arm_of(A, i) == b) acc -= 0.5L * zi * zi / fm;
          }
          break;
        }
        case CrossDiag::Arm1: {
          const double term = xi * zi;
          if (term == 0.0) break;
          const double fm = ke.f_marginal(i, a);
          if (fm <= 0.0)
            non_measurable("unit " + std::to_string(i) + " at arm " +
                           std::to_string(a));
          if (arm_of(A, i) == a) acc -= static_cast<long double>(term) / fm;
          break;
        }
        case CrossDiag::Arm0: {
          const double term = xi * zi;
          if (term == 0.0) break;
          const double fm = ke.f_marginal(i, b);
          if (fm <= 0.0)
            non_measurable("unit " + std::to_string(i) + " at arm " +
                           std::to_string(b));
          if (arm_of(A, i) == b) acc -= static_cast<long double>(term) / fm;
          break;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const double xi = pooled_at(x, i);
    if (xi == 0.0) continue;
    for (int i2 = 0; i2 < n; ++i2) {
      if (i2 == i) continue;
      const double term = xi * pooled_at(z, i2);
      if (term == 0.0) continue;
      const double coef = ke.kappa(i, a, i2, b);
      if (coef == 0.0) continue;
      const double fp = ke.f_pair(i, a, i2, b);
      if (fp <= 0.0)
        non_measurable("units " + std::to_string(i) + "," + std::to_string(i2) +
                       " at arms " + std::to_string(a) + "," +
                       std::to_string(b));
      if (arm_of(A, i) == a && arm_of(A, i2) == b)
        acc += static_cast<long double>(coef) * term / fp;
    }
  }
  return static_cast<double>(acc);
}

double quad_diff_exact(const KappaDiffEngine& kd, const std::vector<double>& x,
                       int a) {
  const int n = kd.n();
  long double acc = 0.0L;
  for (int i = 0; i < n; ++i) {
    const double xi = pooled_at(x, i);
    if (xi == 0.0) continue;
    acc += static_cast<long double>(kd.ctilde(i, a)) * xi * xi;
    for (int i2 = 0; i2 < n; ++i2) {
      if (i2 == i) continue;
      const double term = xi * pooled_at(x, i2);
      if (term == 0.0) continue;
      acc += static_cast<long double>(kd.dtilde(i, i2, a)) * term;
    }
  }
  return static_cast<double>(acc);
}

double quad_diff_hat(const KappaDiffEngine& kd, Mask A,
                     const std::vector<double>& x, int a) {
  const int n = kd.n();
  long double acc = 0.0L;
  for (int i = 0; i < n; ++i) {
    const double xi = pooled_at(x, i);
    if (xi == 0.0) continue;
    const double cc = kd.ctilde(i, a);
    if (cc != 0.0) {
      const double fm = kd.f_marginal(i, a);
      if (fm <= 0.0)
        non_measurable("unit " + std::to_string(i) + " at arm " +
                       std::to_string(a));
      if (arm_of(A, i) == a) acc += static_cast<long double>(cc) * xi * xi / fm;
    }
    for (int i2 = 0; i2 < n; ++i2) {
      if (i2 == i) continue;
      const double term = xi * pooled_at(x, i2);
      if (term == 0.0) continue;
      const double dd = kd.dtilde(i, i2, a);
      if (dd == 0.0) continue;
      const double fp = kd.f_pair_same(i, i2, a);
      if (fp <= 0.0)
        non_measurable("units " + std::to_string(i) + "," + std::to_string(i2) +
                       " at arm " + std::to_string(a));
      if (arm_of(A, i) == a && arm_of(A, i2) == a)
        acc += static_cast<long double>(dd) * term / fp;
    }
  }
  return static_cast<double>(acc);
}

// ---------------------------------------------------------------------------
// Event-group engine
// ---------------------------------------------------------------------------

EventGroups event_groups(const Cluster& cl, const AdmissibleSpec& adm) {
  EventGroups g;
  for (int j = 0; j < cl.n_targets(); ++j) {
    std::vector<Constraint> ev = admissible_constraints(adm, cl, j);
    int slot = -1;
    for (int q = 0; q < static_cast<int>(g.events.size()); ++q)
      if (g.events[q] == ev) {
        slot = q;
        break;
      }
    if (slot < 0) {
      slot = static_cast<int>(g.events.size());
      g.events.push_back(std::move(ev));
      g.targets.emplace_back();
    }
    g.targets[slot].push_back(j);
  }
  return g;
}

std::vector<double> pool_by_group(const EventGroups& g,
                                  const std::vector<double>& per_target) {
  std::vector<double> out(g.events.size(), 0.0);
  for (std::size_t q = 0; q < g.targets.size(); ++q)
    for (int j : g.targets[q]) out[q] += per_target[j];
  return out;
}

EventEngine::EventEngine(const Design& f, const Design& pi,
                         const EventGroups& g)
    : f_(f), pi_(pi), events_(g.events) {
  restricted_.reserve(events_.size());
  for (const auto& ev : events_) restricted_.push_back(pi_.restricted(ev));
}

double EventEngine::ctilde(int g) const {
  const std::uint32_t key = pack4(g, 0, g, 0);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const long double s = ratio_weight_sum(restricted_[g], &restricted_[g], &f_);
  const double v = static_cast<double>(s) - 1.0;
  cache_.emplace(key, v);
  return v;
}

double EventEngine::dtilde(int g, int g2) const {
  if (g2 < g) std::swap(g, g2);
  const std::uint32_t key = pack4(g, 1, g2, 1);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  const long double s = ratio_weight_sum(restricted_[g], &restricted_[g2], &f_);
  const double v = static_cast<double>(s) - 1.0;
  cache_.emplace(key, v);
  return v;
}

double EventEngine::f_event(int g) const { return f_.event_prob(events_[g]); }

double EventEngine::f_joint(int g, int g2) const {
  std::vector<Constraint> both = events_[g];
  both.insert(both.end(), events_[g2].begin(), events_[g2].end());
  return f_.event_prob(both);
}

bool EventEngine::event_holds(int g, Mask A) const {
  for (const auto& c : events_[g])
    if (std::popcount(A & c.units) != c.count) return false;
  return true;
}

bool EventEngine::joint_holds(int g, int g2, Mask A) const {
  return event_holds(g, A) && event_holds(g2, A);
}

double event_quad_exact(const EventEngine& ee, const std::vector<double>& x,
                        const std::vector<double>& z) {
  const int G = ee.n_groups();
  long double acc = 0.0L;
  for (int g = 0; g < G; ++g) {
    if (x[g] == 0.0) continue;
    for (int g2 = 0; g2 < G; ++g2) {
      const double term = x[g] * z[g2];
      if (term == 0.0) continue;
      const double coef = (g2 == g) ? ee.ctilde(g) : ee.dtilde(g, g2);
      acc += static_cast<long double>(coef) * term;
    }
  }
  return static_cast<double>(acc);
}

double event_quad_exact(const EventEngine& ee, const std::vector<double>& x) {
  return event_quad_exact(ee, x, x);
}

double event_quad_hat(const EventEngine& ee, Mask A,
                      const std::vector<double>& x, const std::vector<double>& z,
                      bool* used_fallback) {
  const int G = ee.n_groups();
  long double acc = 0.0L;
  auto ht_square = [&](const std::vector<double>& v, int g) -> long double {
    const double fe = ee.f_event(g);
    if (fe <= 0.0) non_measurable("admissible event of a target group");
    if (!ee.event_holds(g, A)) return 0.0L;
    return static_cast<long double>(v[g]) * v[g] / fe;
  };
  for (int g = 0; g < G; ++g) {
    if (x[g] == 0.0) continue;
    const double cc = ee.ctilde(g);
    if (cc != 0.0 && x[g] * z[g] != 0.0) {
      const double fe = ee.f_event(g);
      if (fe <= 0.0) non_measurable("admissible event of a target group");
      if (ee.event_holds(g, A))
        acc += static_cast<long double>(cc) * x[g] * z[g] / fe;
    }
    for (int g2 = 0; g2 < G; ++g2) {
      if (g2 == g) continue;
      const double term = x[g] * z[g2];
      if (term == 0.0) continue;
      const double dd = ee.dtilde(g, g2);
      if (dd == 0.0) continue;
      const double fj = ee.f_joint(g, g2);
      if (fj <= 0.0) {
        // The two admissible events never occur together under the design,
        // so the cross term is not directly estimable. Its exact value is
        // -x_g z_g2; bound it by the average of the squares, each of which
        // is measurable on its own event.
        acc += 0.5L * (ht_square(x, g) + ht_square(z, g2));
        if (used_fallback != nullptr) *used_fallback = true;
        continue;
      }
      if (ee.joint_holds(g, g2, A))
        acc += static_cast<long double>(dd) * term / fj;
    }
  }
  return static_cast<double>(acc);
}

double event_quad_hat(const EventEngine& ee, Mask A,
                      const std::vector<double>& x, bool* used_fallback) {
  return event_quad_hat(ee, A, x, x, used_fallback);
}

// ---------------------------------------------------------------------------
// Exact stratified-path variances
// ---------------------------------------------------------------------------

namespace {

double scale_sum(
    const std::vector<VarCluster>& cs,
    const std::function<double(const VarCluster&)>& bracket) {
  if (cs.empty()) fail(ExitCode::kIntegrityError, "no clusters");
  long double acc = 0.0L;
  for (const auto& c : cs) {
    const long double S = c.cl->n_targets();
    if (S == 0.0L) fail(ExitCode::kIntegrityError, "cluster has no targets");
    acc += static_cast<long double>(bracket(c)) / (S * S);
  }
  const long double K = static_cast<long double>(cs.size());
  return static_cast<double>(acc / (K * K));
}

}  // namespace

double var_mu_stratified(const std::vector<VarCluster>& cs, int a) {
  return scale_sum(cs, [&](const VarCluster& c) {
    require_single_key(*c.cl);
    KappaEngine ke(*c.f, *c.pi);
    const std::vector<double>& x = (a == 1) ? c.y1 : c.y0;
    return quad_exact(ke, x, a, x, a);
  });
}

double var_de_stratified(const std::vector<VarCluster>& cs) {
  return scale_sum(cs, [&](const VarCluster& c) {
    require_single_key(*c.cl);
    KappaEngine ke(*c.f, *c.pi);
    return quad_exact(ke, c.y1, 1, c.y1, 1) + quad_exact(ke, c.y0, 0, c.y0, 0) -
           2.0 * quad_exact(ke, c.y1, 1, c.y0, 0);
  });
}

double var_de_stratified_bound(const std::vector<VarCluster>& cs) {
  const double base = var_de_stratified(cs);
  const double gap = scale_sum(cs, [&](const VarCluster& c) {
    double s = 0.0;
    for (int i = 0; i < c.cl->n_units(); ++i) {
      const double d = pooled_at(c.y1, i) - pooled_at(c.y0, i);
      s += d * d;
    }
    return s;
  });
  return base + gap;
}

double var_ie_stratified(const std::vector<VarCluster>& cs, int a) {
  return scale_sum(cs, [&](const VarCluster& c) {
    require_single_key(*c.cl);
    if (c.pi_alt == nullptr)
      fail(ExitCode::kSchemaError,
           "indirect-effect variance needs the second intervention");
    KappaDiffEngine kd(*c.f, *c.pi, *c.pi_alt);
    const std::vector<double>& x = (a == 1) ? c.y1 : c.y0;
    return quad_diff_exact(kd, x, a);
  });
}

double var_mu_general(const std::vector<VarCluster>& cs, int a) {
  return scale_sum(cs, [&](const VarCluster& c) {
    const Cluster& cl = *c.cl;
    require_single_key(cl);
    if (!c.y) fail(ExitCode::kIntegrityError, "potential outcome function not set");
    const int S = cl.n_targets();
    std::vector<double> pm(S);
    for (int j = 0; j < S; ++j) {
      pm[j] = c.pi->marginal(cl.single_key(j), a);
      if (pm[j] <= 0.0)
        fail(ExitCode::kAssumptionError,
             "intervention never places key unit of target '" +
                 cl.target_ids[j] + "' at arm " + std::to_string(a));
    }
    // Positivity: the intervention's support must lie inside the design's.
    c.pi->for_each_support([&](Mask v, double) {
      if (c.f->pmf(v) <= 0.0)
        fail(ExitCode::kAssumptionError,
             "positivity violated: intervention assigns mass outside the "
             "design's support in cluster '" +
                 cl.id + "'");
    });
    std::vector<long double> sq(S, 0.0L), ey(S, 0.0L);
    std::vector<std::vector<long double>> cross(
        S, std::vector<long double>(S, 0.0L));
    c.f->for_each_support([&](Mask v, double fv) {
      const long double pv = c.pi->pmf(v);
      if (pv <= 0.0L) return;
      std::vector<double> yv(S);
      std::vector<char> at(S);
      for (int j = 0; j < S; ++j) {
        at[j] = static_cast<char>(arm_of(v, cl.single_key(j)) == a);
        if (at[j]) yv[j] = c.y(j, v);
      }
      for (int j = 0; j < S; ++j) {
        if (!at[j]) continue;
        const long double w = pv / pm[j];
        sq[j] += w * w / fv * yv[j] * yv[j];
        ey[j] += w * yv[j];
        for (int j2 = 0; j2 < S; ++j2) {
          if (j2 == j || !at[j2]) continue;
          cross[j][j2] += pv * pv / (pm[j] * pm[j2]) / fv * yv[j] * yv[j2];
        }
      }
    });
    long double bracket = 0.0L;
    for (int j = 0; j < S; ++j) bracket += sq[j] - ey[j] * ey[j];
    for (int j = 0; j < S; ++j)
      for (int j2 = 0; j2 < S; ++j2)
        if (j2 != j) bracket += cross[j][j2] - ey[j] * ey[j2];
    return static_cast<double>(bracket);
  });
}

double var_tau_event(const std::vector<EventCluster>& cs) {
  if (cs.empty()) fail(ExitCode::kIntegrityError, "no clusters");
  long double acc = 0.0L;
  for (const auto& c : cs) {
    const long double S = c.cl->n_targets();
    if (S == 0.0L) fail(ExitCode::kIntegrityError, "cluster has no targets");
    EventEngine ee(*c.f, *c.pi, c.groups);
    acc += static_cast<long double>(event_quad_exact(ee, c.x)) / (S * S);
  }
  const long double K = static_cast<long double>(cs.size());
  return static_cast<double>(acc / (K * K));
}

// ---------------------------------------------------------------------------
// Observed-data estimates
// ---------------------------------------------------------------------------

namespace {

double hat_scale_sum(const Dataset& ds,
                     const std::function<double(int)>& bracket) {
  const int K = ds.n_clusters();
  if (K == 0) fail(ExitCode::kIntegrityError, "no clusters");
  long double acc = 0.0L;
  for (int k = 0; k < K; ++k) {
    const long double S = ds.frame.clusters[k].n_targets();
    if (S == 0.0L) fail(ExitCode::kIntegrityError, "cluster has no targets");
    acc += static_cast<long double>(bracket(k)) / (S * S);
  }
  return static_cast<double>(acc / (static_cast<long double>(K) * K));
}

}  // namespace

const KappaEngine& VarEngineCache::kappa_for(const Dataset& ds, int k) {
  if (kappa.size() < static_cast<std::size_t>(ds.n_clusters()))
    kappa.resize(ds.n_clusters());
  if (!kappa[k])
    kappa[k] = std::make_unique<KappaEngine>(ds.f[k], ds.pi[k]);
  return *kappa[k];
}

const KappaDiffEngine& VarEngineCache::diff_for(const Dataset& ds, int k) {
  if (diff.size() < static_cast<std::size_t>(ds.n_clusters()))
    diff.resize(ds.n_clusters());
  if (!diff[k])
    diff[k] = std::make_unique<KappaDiffEngine>(ds.f[k], ds.pi[k],
                                                ds.pi_alt[k]);
  return *diff[k];
}

double var_mu_stratified_hat(const Dataset& ds, int a, VarEngineCache* cache) {
  return hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    require_fixed_proportion(ds.f[k], cl.id);
    std::optional<KappaEngine> local;
    const KappaEngine& ke =
        cache ? cache->kappa_for(ds, k) : local.emplace(ds.f[k], ds.pi[k]);
    const Pooled p = pool_observed(cl, ds.y[k]);
    return quad_hat(ke, ds.assign[k], p.ysum, a, p.ysum, a);
  });
}

double var_de_stratified_hat(const Dataset& ds, VarEngineCache* cache) {
  return hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    require_fixed_proportion(ds.f[k], cl.id);
    std::optional<KappaEngine> local;
    const KappaEngine& ke =
        cache ? cache->kappa_for(ds, k) : local.emplace(ds.f[k], ds.pi[k]);
    const Pooled p = pool_observed(cl, ds.y[k]);
    const Mask A = ds.assign[k];
    return quad_hat(ke, A, p.ysum, 1, p.ysum, 1) +
           quad_hat(ke, A, p.ysum, 0, p.ysum, 0) -
           2.0 * quad_hat(ke, A, p.ysum, 1, p.ysum, 0, CrossDiag::HalfSum);
  });
}

double var_ie_stratified_hat(const Dataset& ds, int a, VarEngineCache* cache) {
  if (!ds.has_alt())
    fail(ExitCode::kSchemaError,
         "indirect-effect variance needs the second intervention");
  return hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    require_fixed_proportion(ds.f[k], cl.id);
    std::optional<KappaDiffEngine> local;
    const KappaDiffEngine& kd =
        cache ? cache->diff_for(ds, k)
              : local.emplace(ds.f[k], ds.pi[k], ds.pi_alt[k]);
    const Pooled p = pool_observed(cl, ds.y[k]);
    return quad_diff_hat(kd, ds.assign[k], p.ysum, a);
  });
}

EventVarEstimate var_tau_event_hat(const Dataset& ds,
                                   const AdmissibleSpec& adm) {
  EventVarEstimate out;
  out.value = hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    const EventGroups g = event_groups(cl, adm);
    EventEngine ee(ds.f[k], ds.pi[k], g);
    const std::vector<double> x = pool_by_group(g, ds.y[k]);
    return event_quad_hat(ee, ds.assign[k], x, &out.used_fallback);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Complete-randomization closed forms
// ---------------------------------------------------------------------------

namespace {

struct CrShape {
  int n = 0;
  int n1 = 0;
};

CrShape require_cr(const Design& f, const Design& pi,
                   const std::string& cluster_id) {
  CrShape s;
  int m2 = 0;
  if (!is_complete_randomization(f, &s.n1) ||
      !is_complete_randomization(pi, &m2) || s.n1 != m2 ||
      f.n_units() != pi.n_units())
    fail(ExitCode::kAssumptionError,
         "this variance method requires complete randomization with the "
         "intervention equal to the design (cluster '" +
             cluster_id + "')");
  s.n = f.n_units();
  if (s.n1 <= 0 || s.n1 >= s.n)
    fail(ExitCode::kAssumptionError,
         "complete randomization must treat between 1 and n-1 units "
         "(cluster '" +
             cluster_id + "')");
  return s;
}

// Population-style dispersion of pooled values: divisor n-1, mean over all n
// units.
double vtilde_sq(const std::vector<double>& x, int n) {
  long double mean = 0.0L;
  for (int i = 0; i < n; ++i) mean += pooled_at(x, i);
  mean /= n;
  long double s = 0.0L;
  for (int i = 0; i < n; ++i) {
    const long double d = pooled_at(x, i) - mean;
    s += d * d;
  }
  return static_cast<double>(s / (n - 1));
}

}  // namespace

double var_mu_cr(const std::vector<VarCluster>& cs, int a) {
  return scale_sum(cs, [&](const VarCluster& c) {
    require_single_key(*c.cl);
    const CrShape s = require_cr(*c.f, *c.pi, c.cl->id);
    const int na = (a == 1) ? s.n1 : s.n - s.n1;
    const std::vector<double>& x = (a == 1) ? c.y1 : c.y0;
    const double v = vtilde_sq(x, s.n);
    const double nn = static_cast<double>(s.n);
    return nn * nn * (1.0 - static_cast<double>(na) / nn) * v / na;
  });
}

double var_de_cr(const std::vector<VarCluster>& cs) {
  return scale_sum(cs, [&](const VarCluster& c) {
    require_single_key(*c.cl);
    const CrShape s = require_cr(*c.f, *c.pi, c.cl->id);
    const int n = s.n, n1 = s.n1, n0 = s.n - s.n1;
    std::vector<double> diff(n);
    for (int i = 0; i < n; ++i)
      diff[i] = pooled_at(c.y1, i) - pooled_at(c.y0, i);
    const double v1 = vtilde_sq(c.y1, n);
    const double v0 = vtilde_sq(c.y0, n);
    const double v01 = vtilde_sq(diff, n);
    const double nn = static_cast<double>(n);
    return nn * nn * (v1 / n1 + v0 / n0 - v01 / n);
  });
}

namespace {

// Sample variance of pooled observed values within arm `a` (divisor n_a-1,
// arm mean); errors when the arm has fewer than two units.
double arm_sample_var(const Cluster& cl, const Pooled& p, Mask A, int a) {
  long double mean = 0.0L;
  int na = 0;
  for (int i = 0; i < cl.n_units(); ++i)
    if (arm_of(A, i) == a) {
      mean += p.ysum[i];
      ++na;
    }
  if (na < 2)
    fail(ExitCode::kAssumptionError,
         "arm " + std::to_string(a) + " has fewer than two units in cluster '" +
             cl.id + "'; its within-arm variance cannot be estimated");
  mean /= na;
  long double s = 0.0L;
  for (int i = 0; i < cl.n_units(); ++i)
    if (arm_of(A, i) == a) {
      const long double d = p.ysum[i] - mean;
      s += d * d;
    }
  return static_cast<double>(s / (na - 1));
}

}  // namespace

double var_mu_cr_hat(const Dataset& ds, int a) {
  return hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    const CrShape s = require_cr(ds.f[k], ds.pi[k], cl.id);
    const int na = (a == 1) ? s.n1 : s.n - s.n1;
    const Pooled p = pool_observed(cl, ds.y[k]);
    const double v = arm_sample_var(cl, p, ds.assign[k], a);
    const double nn = static_cast<double>(s.n);
    return nn * nn * (1.0 - static_cast<double>(na) / nn) * v / na;
  });
}

double var_de_cr_hat(const Dataset& ds) {
  return hat_scale_sum(ds, [&](int k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    const CrShape s = require_cr(ds.f[k], ds.pi[k], cl.id);
    const int n1 = s.n1, n0 = s.n - s.n1;
    const Pooled p = pool_observed(cl, ds.y[k]);
    const double v1 = arm_sample_var(cl, p, ds.assign[k], 1);
    const double v0 = arm_sample_var(cl, p, ds.assign[k], 0);
    const double nn = static_cast<double>(s.n);
    return nn * nn * (v1 / n1 + v0 / n0);
  });
}

// ---------------------------------------------------------------------------
// Smoothness-based bound
// ---------------------------------------------------------------------------

namespace {

// Sum over ordered pairs of distinct assignments of nu units with t treated
// of the squared L1 distance between them (which is (2h)^2 when the pair
// disagrees at h treated positions).
long double dist_sq_sum(int nu, int t) {
  if (t < 0 || t > nu) return 0.0L;
  long double total = 0.0L;
  const int hmax = std::min(t, nu - t);
  for (int h = 1; h <= hmax; ++h)
    total += 4.0L * h * h * binom_ld(nu, t) * binom_ld(t, h) * binom_ld(nu - t, h);
  return total;
}

struct LipShape {
  int n = 0, n1 = 0, na = 0;
  double p = 0.0;      // arm-a proportion
  long double b1 = 0;  // assignments of the other units, one key pinned
  long double b2 = 0;  // assignments of the other units, two keys pinned
  double cn = 0.0;     // Lipschitz constant at this cluster size
};

LipShape lip_shape(const Design& f, const Design& pi, const Cluster& cl, int a,
                   const LipschitzSpec& spec, bool need_pairs) {
  require_single_key(cl);
  LipShape s;
  const CrShape cr = require_cr(f, pi, cl.id);
  s.n = cr.n;
  s.n1 = cr.n1;
  s.na = (a == 1) ? cr.n1 : cr.n - cr.n1;
  if (s.na < 1)
    fail(ExitCode::kAssumptionError,
         "arm " + std::to_string(a) + " is never assigned in cluster '" +
             cl.id + "'");
  if (need_pairs && s.na < 2)
    fail(ExitCode::kAssumptionError,
         "fewer than two units receive arm " + std::to_string(a) +
             " in cluster '" + cl.id +
             "'; cross-target terms are not identified");
  s.p = static_cast<double>(s.na) / s.n;
  const int t1 = s.n1 - a;        // treated among the other n-1 units
  const int t2 = s.n1 - 2 * a;    // treated among the other n-2 units
  s.b1 = binom_ld(s.n - 1, t1);
  s.b2 = need_pairs ? binom_ld(s.n - 2, t2) : 0.0L;
  if (spec.c <= 0.0 || !std::isfinite(spec.c))
    fail(ExitCode::kSchemaError, "smoothness scale must be positive and finite");
  if (!(spec.outcome_bound > 0.0) || !std::isfinite(spec.outcome_bound))
    fail(ExitCode::kSchemaError, "outcome bound must be positive and finite");
  s.cn = spec.c / std::sqrt(static_cast<double>(s.n));
  return s;
}

void check_amplitude(double yv, double bound, const std::string& cluster_id) {
  if (std::abs(yv) > bound)
    fail(ExitCode::kAssumptionError,
         "outcome magnitude exceeds the declared bound in cluster '" +
             cluster_id + "'");
}

}  // namespace

LipschitzParts lipschitz_bound(const std::vector<VarCluster>& cs, int a,
                               const LipschitzSpec& spec) {
  if (cs.empty()) fail(ExitCode::kIntegrityError, "no clusters");
  LipschitzParts parts;
  long double slack1 = 0, slack2 = 0, tsq = 0, tcross = 0;
  bool shared_key = false;
  for (const auto& c : cs) {
    const Cluster& cl = *c.cl;
    const int S = cl.n_targets();
    if (S == 0) fail(ExitCode::kIntegrityError, "cluster has no targets");
    if (!c.y) fail(ExitCode::kIntegrityError, "potential outcome function not set");
    const LipShape sh = lip_shape(*c.f, *c.pi, cl, a, spec, S >= 2);
    const long double SS = static_cast<long double>(S) * S;
    const long double c2 = static_cast<long double>(sh.cn) * sh.cn;

    slack1 += c2 * S / (2.0L * sh.b1 * sh.b1) *
              dist_sq_sum(sh.n - 1, sh.n1 - a) / SS;
    if (S >= 2)
      slack2 += c2 * S * (S - 1) / (2.0L * sh.b2 * sh.b2) *
                dist_sq_sum(sh.n - 2, sh.n1 - 2 * a) / SS;

    // Exact outcome sums over the design's support.
    std::vector<long double> sumsq(S, 0.0L);
    std::vector<std::vector<long double>> sumcross(
        S, std::vector<long double>(S, 0.0L));
    c.f->for_each_support([&](Mask v, double) {
      std::vector<double> yv(S, 0.0);
      std::vector<char> at(S);
      for (int j = 0; j < S; ++j) {
        at[j] = static_cast<char>(arm_of(v, cl.single_key(j)) == a);
        if (at[j]) {
          yv[j] = c.y(j, v);
          check_amplitude(yv[j], spec.outcome_bound, cl.id);
        }
      }
      for (int j = 0; j < S; ++j) {
        if (!at[j]) continue;
        sumsq[j] += static_cast<long double>(yv[j]) * yv[j];
        for (int j2 = 0; j2 < S; ++j2)
          if (j2 != j && at[j2])
            sumcross[j][j2] += static_cast<long double>(yv[j]) * yv[j2];
      }
    });
    // The support sum visits each consistent (key, rest) split exactly once;
    // sums over the remaining units' assignments coincide with it.
    const long double coef_sq = (1.0L - sh.p) / (sh.p * sh.b1);
    const long double coef_cross =
        (S >= 2) ? (1.0L / (sh.b1 * sh.p) - 1.0L / sh.b2) : 0.0L;
    for (int j = 0; j < S; ++j) {
      tsq += coef_sq * sumsq[j] / SS;
      for (int j2 = 0; j2 < S; ++j2) {
        if (j2 == j) continue;
        if (cl.single_key(j) == cl.single_key(j2)) shared_key = true;
        tcross += coef_cross * sumcross[j][j2] / SS;
      }
    }
  }
  const long double KK =
      static_cast<long double>(cs.size()) * static_cast<long double>(cs.size());
  parts.slack_single = static_cast<double>(slack1 / KK);
  parts.slack_cross = static_cast<double>(slack2 / KK);
  parts.term_sq = static_cast<double>(tsq / KK);
  parts.term_cross = static_cast<double>(tcross / KK);
  if (shared_key)
    parts.warnings.push_back(
        "targets sharing a key unit contribute cross terms with the "
        "distinct-key coefficient");
  return parts;
}

LipschitzParts lipschitz_hat(const Dataset& ds, int a,
                             const LipschitzSpec& spec) {
  const int K = ds.n_clusters();
  if (K == 0) fail(ExitCode::kIntegrityError, "no clusters");
  LipschitzParts parts;
  long double slack1 = 0, slack2 = 0, tsq = 0, tcross = 0;
  bool shared_key = false;
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    const int S = cl.n_targets();
    if (S == 0) fail(ExitCode::kIntegrityError, "cluster has no targets");
    const LipShape sh = lip_shape(ds.f[k], ds.pi[k], cl, a, spec, S >= 2);
    const long double SS = static_cast<long double>(S) * S;
    const long double c2 = static_cast<long double>(sh.cn) * sh.cn;

    // The estimate's first slack coefficient is larger than the bound's
    // (1/B1 versus 1/(2 B1^2)), which keeps the estimate conservative.
    slack1 += c2 * S / sh.b1 * dist_sq_sum(sh.n - 1, sh.n1 - a) / SS;
    if (S >= 2)
      slack2 += c2 * S * (S - 1) / (2.0L * sh.b2 * sh.b2) *
                dist_sq_sum(sh.n - 2, sh.n1 - 2 * a) / SS;

    const Mask A = ds.assign[k];
    const double fA = ds.f[k].pmf(A);
    if (fA <= 0.0)
      fail(ExitCode::kIntegrityError,
           "observed assignment has zero probability in cluster '" + cl.id +
               "'");
    const long double coef_sq = (1.0L - sh.p) / (sh.p * sh.b1);
    const long double coef_cross =
        (S >= 2) ? (1.0L / (sh.b1 * sh.p) - 1.0L / sh.b2) : 0.0L;
    for (int j = 0; j < S; ++j) {
      if (arm_of(A, cl.single_key(j)) != a) continue;
      const double yj = ds.y[k][j];
      check_amplitude(yj, spec.outcome_bound, cl.id);
      tsq += coef_sq * yj * yj / fA / SS;
      for (int j2 = 0; j2 < S; ++j2) {
        if (j2 == j) continue;
        if (arm_of(A, cl.single_key(j2)) != a) continue;
        if (cl.single_key(j) == cl.single_key(j2)) shared_key = true;
        tcross += coef_cross * yj * ds.y[k][j2] / fA / SS;
      }
    }
  }
  const long double KK =
      static_cast<long double>(K) * static_cast<long double>(K);
  parts.slack_single = static_cast<double>(slack1 / KK);
  parts.slack_cross = static_cast<double>(slack2 / KK);
  parts.term_sq = static_cast<double>(tsq / KK);
  parts.term_cross = static_cast<double>(tcross / KK);
  if (shared_key)
    parts.warnings.push_back(
        "targets sharing a key unit contribute cross terms with the "
        "distinct-key coefficient");
  return parts;
}

}  // namespace netexp
