#include "netexp/infer.hpp"

#include <algorithm>
#include <cmath>

#include "netexp/additive.hpp"
#include "netexp/hajek_var.hpp"

namespace netexp {

std::string variance_method_name(VarianceMethod m) {
  switch (m) {
    case VarianceMethod::Stratified: return "stratified";
    case VarianceMethod::Additive: return "additive";
    case VarianceMethod::Lipschitz: return "lipschitz_bound";
    case VarianceMethod::CrSpecial: return "cr_special";
  }
  fail(kSchemaError, "unknown variance method");
}

namespace {

[[noreturn]] void unsupported(const std::string& what) {
  fail(kAssumptionError, what);
}

void note_fallback(EstimateReport* rep) {
  rep->diagnostics.emplace_back("variance_fallback", 1.0);
  rep->warnings.push_back("nonmeasurable_cross_term_bounded");
}

double ht_variance(const Dataset& ds, const EstimandSpec& spec,
                   const InferOptions& opt, EstimateReport* rep) {
  switch (opt.method) {
    case VarianceMethod::Stratified:
      switch (spec.kind) {
        case EstimandKind::Mu:
          return var_mu_stratified_hat(ds, spec.arm, opt.var_cache);
        case EstimandKind::DE:
          return var_de_stratified_hat(ds, opt.var_cache);
        case EstimandKind::IE:
          return var_ie_stratified_hat(ds, spec.arm, opt.var_cache);
        case EstimandKind::Tau:
        case EstimandKind::TauMulti: {
          EventVarEstimate ev = var_tau_event_hat(ds, spec.admissible);
          if (ev.used_fallback) note_fallback(rep);
          return ev.value;
        }
        case EstimandKind::TE:
          unsupported("no variance estimator covers the total effect; "
                      "estimate its two contrasts separately");
      }
      break;
    case VarianceMethod::Additive:
      switch (spec.kind) {
        case EstimandKind::Mu:
          return var_mu_additive_hat(ds, spec.arm);
        case EstimandKind::DE:
          return var_de_additive_hat(ds);
        case EstimandKind::IE:
          return var_ie_additive_hat(ds, spec.arm);
        case EstimandKind::Tau:
        case EstimandKind::TauMulti:
          return var_tau_additive_hat(ds, spec.admissible);
        case EstimandKind::TE:
          unsupported("no variance estimator covers the total effect; "
                      "estimate its two contrasts separately");
      }
      break;
    case VarianceMethod::CrSpecial:
      switch (spec.kind) {
        case EstimandKind::Mu:
          return var_mu_cr_hat(ds, spec.arm);
        case EstimandKind::DE:
          return var_de_cr_hat(ds);
        default:
          unsupported("the complete-randomization closed form covers arm "
                      "means and the direct effect only");
      }
      break;
    case VarianceMethod::Lipschitz:
      // handled by the caller (interval semantics)
      break;
  }
  fail(kSchemaError, "unhandled variance dispatch");
}

double hajek_variance(const Dataset& ds, const EstimandSpec& spec,
                      const InferOptions& opt, EstimateReport* rep) {
  switch (opt.method) {
    case VarianceMethod::Stratified:
      switch (spec.kind) {
        case EstimandKind::Mu:
          return var_mu_hajek_stratified_hat(ds, spec.arm, opt.var_cache,
                                              opt.eval_cache);
        case EstimandKind::DE:
          return var_de_hajek_stratified_hat(ds, opt.var_cache,
                                              opt.eval_cache);
        case EstimandKind::Tau:
        case EstimandKind::TauMulti: {
          EventVarEstimate ev = var_tau_hajek_event_hat(ds, spec.admissible);
          if (ev.used_fallback) note_fallback(rep);
          return ev.value;
        }
        default:
          unsupported("ratio-estimator variance covers arm means, the direct "
                      "effect, and admissible-set means only");
      }
    case VarianceMethod::Additive:
      switch (spec.kind) {
        case EstimandKind::Mu:
          return var_mu_hajek_additive_hat(ds, spec.arm);
        case EstimandKind::DE:
          return var_de_hajek_additive_hat(ds);
        case EstimandKind::Tau:
        case EstimandKind::TauMulti:
          return var_tau_hajek_additive_hat(ds, spec.admissible);
        default:
          unsupported("ratio-estimator variance covers arm means, the direct "
                      "effect, and admissible-set means only");
      }
    default:
      unsupported("the requested variance method covers the unnormalized "
                  "estimator only");
  }
  fail(kSchemaError, "unhandled variance dispatch");
}

}  // namespace

EstimateReport run_estimate(const Dataset& ds, const EstimandSpec& spec,
                            const InferOptions& opt) {
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
    fail(kSchemaError, "confidence level alpha must lie in (0,1)");

  EstimateReport rep;
  rep.estimand = spec;
  rep.estimator = opt.estimator;
  rep.method = variance_method_name(opt.method);

  PointEstimate pt = point_estimate(ds, spec, opt.estimator, opt.eval_cache);
  rep.point = pt.point;
  rep.diagnostics = std::move(pt.diagnostics);

  if (opt.method == VarianceMethod::Lipschitz) {
    if (spec.kind != EstimandKind::Mu ||
        opt.estimator != PointEstimator::HT)
      unsupported("the smoothness bound covers the unnormalized arm mean "
                  "only");
    LipschitzParts parts = lipschitz_hat(ds, spec.arm, opt.lipschitz);
    for (auto& w : parts.warnings) rep.warnings.push_back(std::move(w));
    rep.warnings.push_back("variance_is_upper_bound");
    const double hi_raw = parts.total();
    const double lo_raw = parts.term_sq + parts.term_cross - parts.slack_cross;
    rep.variance_is_interval = true;
    rep.variance_raw = hi_raw;
    if (hi_raw < 0.0) rep.warnings.push_back("variance_clamped_nonnegative");
    rep.variance = std::max(0.0, hi_raw);
    rep.variance_lo = std::max(0.0, lo_raw);
  } else {
    const double raw = opt.estimator == PointEstimator::HT
                           ? ht_variance(ds, spec, opt, &rep)
                           : hajek_variance(ds, spec, opt, &rep);
    if (opt.estimator == PointEstimator::Hajek)
      rep.warnings.push_back("hajek_variance_assumes_linearization");
    rep.variance_raw = raw;
    if (raw < 0.0) rep.warnings.push_back("variance_clamped_nonnegative");
    rep.variance = std::max(0.0, raw);
  }

  rep.se = std::sqrt(rep.variance);
  const double z = normal_quantile(1.0 - opt.alpha / 2.0);
  rep.ci_lo = rep.point - z * rep.se;
  rep.ci_hi = rep.point + z * rep.se;
  return rep;
}

}  // namespace netexp
