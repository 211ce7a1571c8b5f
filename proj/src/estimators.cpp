#include "netexp/estimators.hpp"

#include <map>
#include <optional>
#include <tuple>

namespace netexp {

TargetDesigns::TargetDesigns(const Cluster& cl, const Design& pi,
                             const AdmissibleSpec& adm) {
  if (cl.n_targets() == 0)
    fail(kIntegrityError, "cluster '" + cl.id + "' has no target units");
  if (pi.n_units() != cl.n_units())
    fail(kIntegrityError, "cluster '" + cl.id +
                              "': intervention law has wrong dimension");
  idx_.resize(cl.n_targets());
  std::map<std::vector<std::pair<Mask, int>>, int> seen;
  for (int j = 0; j < cl.n_targets(); ++j) {
    auto cons = admissible_constraints(adm, cl, j);
    std::vector<std::pair<Mask, int>> key;
    key.reserve(cons.size());
    for (const auto& c : cons) key.emplace_back(c.units, c.count);
    auto it = seen.find(key);
    if (it != seen.end()) {
      idx_[j] = it->second;
      continue;
    }
    try {
      designs_.push_back(cons.empty() ? pi : pi.restricted(cons));
    } catch (const NxError& e) {
      fail(e.code(), "cluster '" + cl.id + "', target '" + cl.target_ids[j] +
                         "': " + e.what());
    }
    idx_[j] = static_cast<int>(designs_.size()) - 1;
    seen.emplace(std::move(key), idx_[j]);
  }
}

namespace {

// support(inner) subset-of support(outer)?
bool support_subset(const Design& inner, const Design& outer) {
  if (inner.kind() != DesignKind::Explicit &&
      outer.kind() != DesignKind::Explicit) {
    auto fi = inner.factor_form();
    auto fo = outer.factor_form();
    long double alone = constrained_count(inner.n_units(), fi.cons);
    auto both = fi.cons;
    both.insert(both.end(), fo.cons.begin(), fo.cons.end());
    long double joint = constrained_count(inner.n_units(), both);
    return alone == joint;
  }
  bool ok = true;
  inner.for_each_support([&](Mask v, double) {
    if (outer.pmf(v) <= 0.0) ok = false;
  });
  return ok;
}

}  // namespace

void check_overlap(const Design& f, const TargetDesigns& td,
                   const Cluster& cl) {
  for (int d = 0; d < td.n_distinct(); ++d)
    if (!support_subset(td.distinct(d), f))
      fail(kAssumptionError,
           "cluster '" + cl.id +
               "': intervention support is not contained in the assignment "
               "design's support (positivity violated)");
}

LegEval eval_cluster_leg(const Cluster& cl, const Design& f,
                         const TargetDesigns& td, Mask a,
                         const std::vector<double>& y) {
  double fa = f.pmf(a);
  if (fa <= 0.0)
    fail(kIntegrityError, "cluster '" + cl.id +
                              "': assignment outside the design's support");
  LegEval out;
  for (int j = 0; j < cl.n_targets(); ++j) {
    double w = td.of(j).pmf(a) / fa;
    if (w == 0.0) continue;
    out.num += w * y[j];
    out.lambda += w;
  }
  double s = static_cast<double>(cl.n_targets());
  out.num /= s;
  out.lambda /= s;
  return out;
}

std::vector<Leg> estimand_legs(const Dataset& ds, const EstimandSpec& spec) {
  auto key_treated = [](int arm) {
    AdmissibleSpec a;
    a.kind = AdmissibleSpec::KeyTreated;
    a.a = arm;
    return a;
  };
  auto need_alt = [&] {
    if (!ds.has_alt())
      fail(kSchemaError,
           "estimand requires a second intervention (none supplied)");
  };
  switch (spec.kind) {
    case EstimandKind::Mu:
      return {{0, key_treated(spec.arm), 1.0, std::to_string(spec.arm)}};
    case EstimandKind::DE:
      return {{0, key_treated(1), 1.0, "1"}, {0, key_treated(0), -1.0, "0"}};
    case EstimandKind::IE:
      need_alt();
      return {{0, key_treated(spec.arm), 1.0, "pi"},
              {1, key_treated(spec.arm), -1.0, "pi_tilde"}};
    case EstimandKind::TE:
      need_alt();
      return {{0, key_treated(1), 1.0, "pi_1"},
              {1, key_treated(0), -1.0, "pi_tilde_0"}};
    case EstimandKind::Tau:
    case EstimandKind::TauMulti:
      return {{0, spec.admissible, 1.0, ""}};
  }
  fail(kSchemaError, "unknown estimand kind");
}

bool EvalCache::Key::operator<(const Key& o) const {
  return std::tie(pi_index, k, kind, a, p_star, alpha, group_field) <
         std::tie(o.pi_index, o.k, o.kind, o.a, o.p_star, o.alpha,
                  o.group_field);
}

const TargetDesigns& EvalCache::designs_for(const Dataset& ds, const Leg& leg,
                                            int k) {
  Key key{leg.pi_index,
          k,
          static_cast<int>(leg.adm.kind),
          leg.adm.a,
          leg.adm.p_star,
          leg.adm.alpha,
          leg.adm.group_field};
  auto it = m_.find(key);
  if (it != m_.end()) return it->second;
  const Cluster& cl = ds.frame.clusters[k];
  const auto& pis = leg.pi_index == 0 ? ds.pi : ds.pi_alt;
  TargetDesigns td(cl, pis[k], leg.adm);
  check_overlap(ds.f[k], td, cl);
  return m_.emplace(std::move(key), std::move(td)).first->second;
}

LegTotals eval_leg(const Dataset& ds, const Leg& leg, EvalCache* cache) {
  const auto& pis = leg.pi_index == 0 ? ds.pi : ds.pi_alt;
  LegTotals tot;
  int K = ds.n_clusters();
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    std::optional<TargetDesigns> local;
    const TargetDesigns& td =
        cache ? cache->designs_for(ds, leg, k)
              : local.emplace(cl, pis[k], leg.adm);
    if (!cache) check_overlap(ds.f[k], td, cl);
    LegEval e = eval_cluster_leg(cl, ds.f[k], td, ds.assign[k], ds.y[k]);
    tot.num += e.num;
    tot.lambda += e.lambda;
  }
  tot.num /= K;
  tot.lambda /= K;
  return tot;
}

PointEstimate point_estimate(const Dataset& ds, const EstimandSpec& spec,
                             PointEstimator est, EvalCache* cache) {
  if (ds.n_clusters() == 0) fail(kIntegrityError, "dataset has no clusters");
  auto legs = estimand_legs(ds, spec);
  PointEstimate out;
  for (const auto& leg : legs) {
    LegTotals t = eval_leg(ds, leg, cache);
    std::string suffix = leg.tag.empty() ? "" : "_" + leg.tag;
    out.diagnostics.emplace_back("lambda_hat" + suffix, t.lambda);
    if (est == PointEstimator::HT) {
      out.point += leg.sign * t.num;
    } else {
      if (t.lambda == 0.0)
        fail(kUndefinedEstimate,
             "Hajek denominator is zero (no contributing target unit)" +
                 (suffix.empty() ? std::string()
                                 : " for component " + leg.tag));
      out.point += leg.sign * (t.num / t.lambda);
    }
  }
  return out;
}

}  // namespace netexp
