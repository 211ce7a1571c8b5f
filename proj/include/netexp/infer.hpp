#pragma once

#include <string>
#include <utility>
#include <vector>

#include "netexp/estimators.hpp"
#include "netexp/variance.hpp"

namespace netexp {

// Variance estimation route; names mirror the CLI flag values.
enum class VarianceMethod { Stratified, Additive, Lipschitz, CrSpecial };

// Report label: "stratified", "additive", "lipschitz_bound", "cr_special".
std::string variance_method_name(VarianceMethod m);

struct InferOptions {
  PointEstimator estimator = PointEstimator::HT;
  VarianceMethod method = VarianceMethod::Stratified;
  double alpha = 0.05;  // two-sided CI miss probability
  LipschitzSpec lipschitz;
  // Optional non-owning caches reused across calls on a dataset whose frame
  // and designs are unchanged (see EvalCache / VarEngineCache).
  EvalCache* eval_cache = nullptr;
  VarEngineCache* var_cache = nullptr;
};

// Assembled estimate: point, variance (scalar, or an interval when the
// method only brackets the variance), standard error, and normal CI.
// `variance` (and `variance_lo`) hold the clamped-nonnegative values used
// for the SE; `variance_raw` keeps the unclamped estimate.
struct EstimateReport {
  EstimandSpec estimand;
  PointEstimator estimator = PointEstimator::HT;
  double point = 0.0;
  bool variance_is_interval = false;
  double variance = 0.0;
  double variance_lo = 0.0;  // interval methods only
  double variance_raw = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::string method;
  std::vector<std::pair<std::string, double>> diagnostics;
  std::vector<std::string> warnings;
};

EstimateReport run_estimate(const Dataset& ds, const EstimandSpec& spec,
                            const InferOptions& opt);

}  // namespace netexp
