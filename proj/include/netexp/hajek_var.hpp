#pragma once

#include <vector>

#include "netexp/additive.hpp"
#include "netexp/variance.hpp"

namespace netexp {

// ---------------------------------------------------------------------------
// Linearized variance of ratio estimators.
//
// A Hajek estimator is the ratio of two Horvitz-Thompson sums, numerator and
// weight total, where the weight total has expectation one.  Its variance is
// approximated by the delta method around (center, 1):
//   Var(num/den) ~ Var(num) + center^2 Var(den) - 2 center Cov(num, den).
// Exact block values take potential outcomes (or fitted coefficients); the
// plug-in estimators below use observed data and center at the Hajek point.
// ---------------------------------------------------------------------------
struct HajekBlocks {
  double var_num = 0.0;
  double var_den = 0.0;
  double cov = 0.0;

  double combine(double center) const {
    return var_num + center * center * var_den - 2.0 * center * cov;
  }
};

// Difference of two ratio estimators (direct effect): the per-arm blocks plus
// the four cross covariances between the arms' numerators and denominators.
struct HajekDeBlocks {
  HajekBlocks arm1;
  HajekBlocks arm0;
  double cov_mu1_mu0 = 0.0;
  double cov_mu1_lam0 = 0.0;
  double cov_lam1_mu0 = 0.0;
  double cov_lam1_lam0 = 0.0;

  double combine(double mu1, double mu0) const {
    return arm1.combine(mu1) + arm0.combine(mu0) - 2.0 * cov_mu1_mu0 +
           2.0 * mu1 * cov_lam1_mu0 + 2.0 * mu0 * cov_mu1_lam0 -
           2.0 * mu1 * mu0 * cov_lam1_lam0;
  }
};

// ---- exact blocks (design distribution) -----------------------------------

// Stratified interference: numerator blocks pool potential outcomes per key
// unit, denominator blocks pool the per-unit target counts D_i.
HajekBlocks hajek_mu_stratified(const std::vector<VarCluster>& cs, int a);
HajekDeBlocks hajek_de_stratified(const std::vector<VarCluster>& cs);

// Event-group form for generalized means (multiple key units allowed); the
// denominator pools a value of one per target.
HajekBlocks hajek_tau_event(const std::vector<EventCluster>& cs);

// Additive interference: numerator blocks contract coefficient vectors
// against the tilt moments, denominator blocks use the intercept-only
// coefficient (the weight total is the estimator of an all-ones outcome).
HajekBlocks hajek_mu_additive(const std::vector<AdditiveCluster>& cs, int a);
HajekDeBlocks hajek_de_additive(const std::vector<AdditiveCluster>& cs);
HajekBlocks hajek_tau_additive(const std::vector<AdditiveCluster>& cs,
                               const AdmissibleSpec& adm);

// ---- observed-data blocks and plug-in estimates ----------------------------

// Same-arm blocks are unbiased under measurable fixed-proportion designs;
// the cross-arm numerator/denominator blocks of the DE decomposition use the
// arm of the known degree factor, and the two same-sign diagonals use the
// half-sum surrogate (conservative, as in the direct-effect estimator).
HajekBlocks hajek_mu_stratified_hat(const Dataset& ds, int a,
                                    VarEngineCache* cache = nullptr);
HajekDeBlocks hajek_de_stratified_hat(const Dataset& ds,
                                      VarEngineCache* cache = nullptr);

struct HajekEventBlocksHat {
  HajekBlocks blocks;
  bool used_fallback = false;
};
HajekEventBlocksHat hajek_tau_event_hat(const Dataset& ds,
                                        const AdmissibleSpec& adm);

HajekBlocks hajek_mu_additive_hat(const Dataset& ds, int a);
HajekDeBlocks hajek_de_additive_hat(const Dataset& ds);
HajekBlocks hajek_tau_additive_hat(const Dataset& ds,
                                   const AdmissibleSpec& adm);

// Full plug-in variance estimates, centered at the Hajek point estimates
// (raises kUndefinedEstimate when a needed weight total is zero).
double var_mu_hajek_stratified_hat(const Dataset& ds, int a,
                                   VarEngineCache* var_cache = nullptr,
                                   EvalCache* eval_cache = nullptr);
double var_de_hajek_stratified_hat(const Dataset& ds,
                                   VarEngineCache* var_cache = nullptr,
                                   EvalCache* eval_cache = nullptr);
EventVarEstimate var_tau_hajek_event_hat(const Dataset& ds,
                                         const AdmissibleSpec& adm);
double var_mu_hajek_additive_hat(const Dataset& ds, int a);
double var_de_hajek_additive_hat(const Dataset& ds);
double var_tau_hajek_additive_hat(const Dataset& ds, const AdmissibleSpec& adm);

}  // namespace netexp
