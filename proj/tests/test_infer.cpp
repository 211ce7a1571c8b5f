// Report assembly: variance-method dispatch, clamping, confidence intervals,
// and the error taxonomy for unsupported estimand/method combinations.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "netexp/additive.hpp"
#include "netexp/hajek_var.hpp"
#include "netexp/infer.hpp"

using namespace netexp;
using namespace nxtest;

namespace {

ExitCode thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const NxError& e) {
    return e.code();
  }
  return ExitCode::kOk;
}

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * (1.0 + std::max(std::abs(a), std::abs(b)));
}

bool has_warning(const EstimateReport& rep, const std::string& w) {
  return std::find(rep.warnings.begin(), rep.warnings.end(), w) !=
         rep.warnings.end();
}

EstimandSpec mu_spec(int arm) {
  EstimandSpec s;
  s.kind = EstimandKind::Mu;
  s.arm = arm;
  return s;
}

EstimandSpec de_spec() {
  EstimandSpec s;
  s.kind = EstimandKind::DE;
  return s;
}

InferOptions options(PointEstimator est, VarianceMethod m) {
  InferOptions o;
  o.estimator = est;
  o.method = m;
  return o;
}

// A measurable single-key world plus one realized dataset on which the
// ratio estimator is defined in both arms.
Dataset measurable_dataset(Rng& rng, TestWorld* out_world) {
  RandomWorldOpts o;
  o.measurable = true;
  o.stratified_outcomes = true;
  o.allow_bernoulli = false;
  o.max_units = 6;
  o.max_targets = 4;
  o.want_alt = true;
  EstimandSpec ie;
  ie.kind = EstimandKind::IE;
  ie.arm = 1;
  for (;;) {
    *out_world = random_world(rng, o, de_spec());
    std::vector<std::vector<std::pair<Mask, double>>> sup;
    for (const auto& tc : out_world->tcs)
      sup.push_back(tc.f.enumerate_support());
    std::vector<std::size_t> idx(out_world->tcs.size(), 0);
    while (true) {
      std::vector<Mask> assigns;
      for (std::size_t k = 0; k < idx.size(); ++k)
        assigns.push_back(sup[k][idx[k]].first);
      Dataset ds = out_world->dataset(assigns);
      try {
        point_estimate(ds, mu_spec(1), PointEstimator::Hajek);
        point_estimate(ds, mu_spec(0), PointEstimator::Hajek);
        point_estimate(ds, ie, PointEstimator::Hajek);
        return ds;
      } catch (const NxError&) {
      }
      std::size_t k = idx.size();
      while (k > 0 && ++idx[k - 1] == sup[k - 1].size()) idx[--k] = 0;
      if (k == 0) break;
    }
  }
}

}  // namespace

TEST_CASE("normal quantiles match reference values") {
  CHECK(close(normal_quantile(0.975), 1.959963984540054, 1e-12));
  CHECK(close(normal_quantile(0.995), 2.5758293035489004, 1e-12));
  CHECK(close(normal_quantile(0.95), 1.6448536269514722, 1e-12));
  CHECK(std::abs(normal_quantile(0.5)) < 1e-15);
  CHECK(close(normal_quantile(0.025), -normal_quantile(0.975), 1e-13));
  CHECK(close(normal_quantile(1e-6), -4.753424308822899, 1e-10));
  CHECK(thrown_code([] { normal_quantile(0.0); }) == kNumericError);
  CHECK(thrown_code([] { normal_quantile(1.0); }) == kNumericError);
}

TEST_CASE("stratified dispatch reproduces the underlying estimates") {
  Rng rng(321321u);
  for (int rep = 0; rep < 5; ++rep) {
    TestWorld w;
    Dataset ds = measurable_dataset(rng, &w);

    auto rep_mu = run_estimate(ds, mu_spec(1),
                               options(PointEstimator::HT,
                                       VarianceMethod::Stratified));
    CHECK(rep_mu.method == "stratified");
    CHECK(rep_mu.point ==
          point_estimate(ds, mu_spec(1), PointEstimator::HT).point);
    CHECK(rep_mu.variance_raw == var_mu_stratified_hat(ds, 1));
    CHECK(rep_mu.variance == std::max(0.0, rep_mu.variance_raw));
    CHECK(rep_mu.se == std::sqrt(rep_mu.variance));
    const double z = normal_quantile(0.975);
    CHECK(close(rep_mu.ci_hi - rep_mu.point, z * rep_mu.se, 1e-12));
    CHECK(close(rep_mu.point - rep_mu.ci_lo, z * rep_mu.se, 1e-12));
    CHECK_FALSE(rep_mu.variance_is_interval);
    CHECK_FALSE(has_warning(rep_mu, "hajek_variance_assumes_linearization"));

    auto rep_de = run_estimate(ds, de_spec(),
                               options(PointEstimator::HT,
                                       VarianceMethod::Stratified));
    CHECK(rep_de.variance_raw == var_de_stratified_hat(ds));

    EstimandSpec tau;
    tau.kind = EstimandKind::Tau;
    tau.admissible.kind = AdmissibleSpec::KeyTreated;
    tau.admissible.a = 1;
    auto rep_tau = run_estimate(ds, tau,
                                options(PointEstimator::HT,
                                        VarianceMethod::Stratified));
    CHECK(rep_tau.variance_raw == var_tau_event_hat(ds, tau.admissible).value);
  }
}

TEST_CASE("ratio-estimator dispatch adds the linearization note") {
  Rng rng(88118811u);
  TestWorld w;
  Dataset ds = measurable_dataset(rng, &w);

  auto rep = run_estimate(ds, mu_spec(1),
                          options(PointEstimator::Hajek,
                                  VarianceMethod::Stratified));
  CHECK(rep.point ==
        point_estimate(ds, mu_spec(1), PointEstimator::Hajek).point);
  CHECK(rep.variance_raw == var_mu_hajek_stratified_hat(ds, 1));
  CHECK(has_warning(rep, "hajek_variance_assumes_linearization"));

  auto rep_de = run_estimate(ds, de_spec(),
                             options(PointEstimator::Hajek,
                                     VarianceMethod::Stratified));
  CHECK(rep_de.variance_raw == var_de_hajek_stratified_hat(ds));

  // indirect and total effects have no ratio-estimator variance route
  EstimandSpec ie;
  ie.kind = EstimandKind::IE;
  CHECK(thrown_code([&] {
          run_estimate(ds, ie, options(PointEstimator::Hajek,
                                       VarianceMethod::Stratified));
        }) == kAssumptionError);
}

TEST_CASE("additive dispatch reproduces the plug-in estimates") {
  Rng rng(5675675u);
  TestWorld w;
  Dataset ds = measurable_dataset(rng, &w);

  auto ht = run_estimate(ds, mu_spec(0),
                         options(PointEstimator::HT, VarianceMethod::Additive));
  CHECK(ht.method == "additive");
  CHECK(ht.variance_raw == var_mu_additive_hat(ds, 0));

  auto de = run_estimate(ds, de_spec(),
                         options(PointEstimator::HT, VarianceMethod::Additive));
  CHECK(de.variance_raw == var_de_additive_hat(ds));

  auto hj = run_estimate(ds, mu_spec(1),
                         options(PointEstimator::Hajek,
                                 VarianceMethod::Additive));
  CHECK(hj.variance_raw == var_mu_hajek_additive_hat(ds, 1));
  CHECK(has_warning(hj, "hajek_variance_assumes_linearization"));
}

TEST_CASE("closed-form and smoothness methods guard their scope") {
  Rng rng(24242424u);
  // complete randomization with the intervention equal to the design
  TestCluster tc;
  const int n = 5;
  tc.cl = make_cluster("c0", n, {{0}, {2}, {4}});
  tc.f = Design::complete(n, 2);
  tc.pi = tc.f;
  tc.pi_alt = tc.f;
  tc.has_alt = true;
  std::vector<std::vector<double>> tab(3, std::vector<double>(Mask(1) << n));
  for (auto& row : tab)
    for (auto& v : row) v = -2.0 + 4.0 * rng.uniform();
  tc.y = [tab](int j, Mask a) { return tab[j][a]; };
  TestWorld w{{tc}};
  Dataset ds = w.dataset({tc.f.enumerate_support()[3].first});

  auto cr = run_estimate(ds, mu_spec(1),
                         options(PointEstimator::HT, VarianceMethod::CrSpecial));
  CHECK(cr.method == "cr_special");
  CHECK(cr.variance_raw == var_mu_cr_hat(ds, 1));
  CHECK(run_estimate(ds, de_spec(),
                     options(PointEstimator::HT, VarianceMethod::CrSpecial))
            .variance_raw == var_de_cr_hat(ds));

  EstimandSpec tau;
  tau.kind = EstimandKind::Tau;
  CHECK(thrown_code([&] {
          run_estimate(ds, tau, options(PointEstimator::HT,
                                        VarianceMethod::CrSpecial));
        }) == kAssumptionError);
  CHECK(thrown_code([&] {
          run_estimate(ds, mu_spec(1), options(PointEstimator::Hajek,
                                               VarianceMethod::CrSpecial));
        }) == kAssumptionError);

  InferOptions lip = options(PointEstimator::HT, VarianceMethod::Lipschitz);
  lip.lipschitz.c = 2.0;
  lip.lipschitz.outcome_bound = 5.0;
  auto bound = run_estimate(ds, mu_spec(1), lip);
  CHECK(bound.method == "lipschitz_bound");
  CHECK(bound.variance_is_interval);
  LipschitzParts parts = lipschitz_hat(ds, 1, lip.lipschitz);
  CHECK(bound.variance_raw == parts.total());
  CHECK(bound.variance == std::max(0.0, parts.total()));
  CHECK(bound.variance_lo ==
        std::max(0.0, parts.term_sq + parts.term_cross - parts.slack_cross));
  CHECK(bound.se == std::sqrt(bound.variance));
  CHECK(has_warning(bound, "variance_is_upper_bound"));

  CHECK(thrown_code([&] { run_estimate(ds, de_spec(), lip); }) ==
        kAssumptionError);
  lip.estimator = PointEstimator::Hajek;
  CHECK(thrown_code([&] { run_estimate(ds, mu_spec(1), lip); }) ==
        kAssumptionError);

  EstimandSpec te;
  te.kind = EstimandKind::TE;
  for (auto m : {VarianceMethod::Stratified, VarianceMethod::Additive})
    CHECK(thrown_code([&] {
            run_estimate(ds, te, options(PointEstimator::HT, m));
          }) == kAssumptionError);
}

TEST_CASE("negative variance estimates are clamped with a warning") {
  Rng rng(987654u);
  bool found = false;
  for (int rep = 0; rep < 40 && !found; ++rep) {
    TestWorld w;
    Dataset probe = measurable_dataset(rng, &w);
    (void)probe;
    std::vector<std::vector<std::pair<Mask, double>>> sup;
    for (const auto& tc : w.tcs) sup.push_back(tc.f.enumerate_support());
    std::vector<std::size_t> idx(w.tcs.size(), 0);
    while (true) {
      std::vector<Mask> assigns;
      for (std::size_t k = 0; k < idx.size(); ++k)
        assigns.push_back(sup[k][idx[k]].first);
      Dataset ds = w.dataset(assigns);
      const double raw = var_mu_stratified_hat(ds, 1);
      if (raw < 0.0) {
        auto rep_mu = run_estimate(ds, mu_spec(1),
                                   options(PointEstimator::HT,
                                           VarianceMethod::Stratified));
        CHECK(rep_mu.variance_raw == raw);
        CHECK(rep_mu.variance == 0.0);
        CHECK(rep_mu.se == 0.0);
        CHECK(rep_mu.ci_lo == rep_mu.point);
        CHECK(rep_mu.ci_hi == rep_mu.point);
        CHECK(has_warning(rep_mu, "variance_clamped_nonnegative"));
        found = true;
        break;
      }
      std::size_t k = idx.size();
      while (k > 0 && ++idx[k - 1] == sup[k - 1].size()) idx[--k] = 0;
      if (k == 0) break;
    }
  }
  CHECK(found);
}

TEST_CASE("alpha controls the interval width and is validated") {
  Rng rng(1357911u);
  TestWorld w;
  Dataset ds = measurable_dataset(rng, &w);
  InferOptions narrow = options(PointEstimator::HT, VarianceMethod::Stratified);
  narrow.alpha = 0.1;
  auto r10 = run_estimate(ds, mu_spec(1), narrow);
  narrow.alpha = 0.05;
  auto r05 = run_estimate(ds, mu_spec(1), narrow);
  if (r05.se > 0.0) CHECK(r05.ci_hi - r05.ci_lo > r10.ci_hi - r10.ci_lo);
  CHECK(close(r10.ci_hi - r10.point, normal_quantile(0.95) * r10.se, 1e-12));

  narrow.alpha = 0.0;
  CHECK(thrown_code([&] { run_estimate(ds, mu_spec(1), narrow); }) ==
        kSchemaError);
  narrow.alpha = 1.0;
  CHECK(thrown_code([&] { run_estimate(ds, mu_spec(1), narrow); }) ==
        kSchemaError);
}

TEST_CASE("an undefined ratio estimate precedes variance-method errors") {
  TestCluster tc;
  tc.cl = make_cluster("c0", 2, {{0}});
  tc.f = Design::complete(2, 1);
  tc.pi = tc.f;
  tc.y = [](int, Mask) { return 4.0; };
  TestWorld w{{tc}};
  Dataset ds = w.dataset({Mask(2)});  // the key unit is untreated

  CHECK(thrown_code([&] {
          run_estimate(ds, mu_spec(1), options(PointEstimator::Hajek,
                                               VarianceMethod::Stratified));
        }) == kUndefinedEstimate);
}
