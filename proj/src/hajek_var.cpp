#include "netexp/hajek_var.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace netexp {

namespace {

// Per-unit target counts D_i; the weight total pools these the way the
// numerator pools outcomes.
std::vector<double> degree_vector(const Cluster& cl) {
  std::vector<double> d(cl.n_units(), 0.0);
  for (int j = 0; j < cl.n_targets(); ++j) d[cl.single_key(j)] += 1.0;
  return d;
}

double cluster_weight(const Cluster& cl) {
  const double S = cl.n_targets();
  if (S == 0.0) fail(ExitCode::kIntegrityError, "cluster has no targets");
  return 1.0 / (S * S);
}

void check_nonempty(std::size_t K) {
  if (K == 0) fail(ExitCode::kIntegrityError, "dataset has no clusters");
}

void scale_blocks(HajekBlocks& b, double s) {
  b.var_num *= s;
  b.var_den *= s;
  b.cov *= s;
}

void scale_de_blocks(HajekDeBlocks& b, double s) {
  scale_blocks(b.arm1, s);
  scale_blocks(b.arm0, s);
  b.cov_mu1_mu0 *= s;
  b.cov_mu1_lam0 *= s;
  b.cov_lam1_mu0 *= s;
  b.cov_lam1_lam0 *= s;
}

void check_beta(const std::vector<AdditiveCluster>& cs) {
  check_nonempty(cs.size());
  for (const auto& c : cs) {
    if (static_cast<int>(c.beta.size()) != c.cl->n_targets())
      fail(ExitCode::kIntegrityError,
           "one coefficient vector per target is required (cluster '" +
               c.cl->id + "')");
    for (const auto& b : c.beta)
      if (b.size() != c.cl->n_units() + 1)
        fail(ExitCode::kIntegrityError,
             "coefficient vectors must have length units plus one (cluster '" +
                 c.cl->id + "')");
  }
}

// Intercept-only coefficients: the weight total is the HT estimator of an
// outcome identically equal to one.
std::vector<Eigen::VectorXd> intercept_coefs(const Cluster& cl) {
  std::vector<Eigen::VectorXd> e(cl.n_targets());
  for (auto& v : e) {
    v = Eigen::VectorXd::Zero(cl.n_units() + 1);
    v(0) = 1.0;
  }
  return e;
}

EstimandSpec mu_spec(int a) {
  EstimandSpec s;
  s.kind = EstimandKind::Mu;
  s.arm = a;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Exact blocks
// ---------------------------------------------------------------------------

HajekBlocks hajek_mu_stratified(const std::vector<VarCluster>& cs, int a) {
  check_nonempty(cs.size());
  HajekBlocks b;
  for (const auto& c : cs) {
    require_single_key(*c.cl);
    const double w = cluster_weight(*c.cl);
    KappaEngine ke(*c.f, *c.pi);
    const std::vector<double>& ya = (a == 1) ? c.y1 : c.y0;
    const std::vector<double> deg = degree_vector(*c.cl);
    b.var_num += w * quad_exact(ke, ya, a, ya, a);
    b.var_den += w * quad_exact(ke, deg, a, deg, a);
    b.cov += w * quad_exact(ke, ya, a, deg, a);
  }
  const double K = static_cast<double>(cs.size());
  scale_blocks(b, 1.0 / (K * K));
  return b;
}

HajekDeBlocks hajek_de_stratified(const std::vector<VarCluster>& cs) {
  check_nonempty(cs.size());
  HajekDeBlocks b;
  for (const auto& c : cs) {
    require_single_key(*c.cl);
    const double w = cluster_weight(*c.cl);
    KappaEngine ke(*c.f, *c.pi);
    const std::vector<double> deg = degree_vector(*c.cl);
    b.arm1.var_num += w * quad_exact(ke, c.y1, 1, c.y1, 1);
    b.arm1.var_den += w * quad_exact(ke, deg, 1, deg, 1);
    b.arm1.cov += w * quad_exact(ke, c.y1, 1, deg, 1);
    b.arm0.var_num += w * quad_exact(ke, c.y0, 0, c.y0, 0);
    b.arm0.var_den += w * quad_exact(ke, deg, 0, deg, 0);
    b.arm0.cov += w * quad_exact(ke, c.y0, 0, deg, 0);
    b.cov_mu1_mu0 += w * quad_exact(ke, c.y1, 1, c.y0, 0);
    b.cov_mu1_lam0 += w * quad_exact(ke, c.y1, 1, deg, 0);
    b.cov_lam1_mu0 += w * quad_exact(ke, deg, 1, c.y0, 0);
    b.cov_lam1_lam0 += w * quad_exact(ke, deg, 1, deg, 0);
  }
  const double K = static_cast<double>(cs.size());
  scale_de_blocks(b, 1.0 / (K * K));
  return b;
}

HajekBlocks hajek_tau_event(const std::vector<EventCluster>& cs) {
  check_nonempty(cs.size());
  HajekBlocks b;
  for (const auto& c : cs) {
    const double w = cluster_weight(*c.cl);
    EventEngine ee(*c.f, *c.pi, c.groups);
    std::vector<double> ones(c.groups.events.size());
    for (std::size_t g = 0; g < ones.size(); ++g)
      ones[g] = static_cast<double>(c.groups.targets[g].size());
    b.var_num += w * event_quad_exact(ee, c.x, c.x);
    b.var_den += w * event_quad_exact(ee, ones, ones);
    b.cov += w * event_quad_exact(ee, c.x, ones);
  }
  const double K = static_cast<double>(cs.size());
  scale_blocks(b, 1.0 / (K * K));
  return b;
}

HajekBlocks hajek_mu_additive(const std::vector<AdditiveCluster>& cs, int a) {
  check_beta(cs);
  HajekBlocks b;
  for (const auto& c : cs) {
    const double w = cluster_weight(*c.cl);
    AdditiveEngine eng(*c.f, *c.pi);
    const std::vector<Eigen::VectorXd> e0 = intercept_coefs(*c.cl);
    b.var_num += w * additive_cov_block(eng, *c.cl, c.beta, a, 0, c.beta, a, 0);
    b.var_den += w * additive_cov_block(eng, *c.cl, e0, a, 0, e0, a, 0);
    b.cov += w * additive_cov_block(eng, *c.cl, c.beta, a, 0, e0, a, 0);
  }
  const double K = static_cast<double>(cs.size());
  scale_blocks(b, 1.0 / (K * K));
  return b;
}

HajekDeBlocks hajek_de_additive(const std::vector<AdditiveCluster>& cs) {
  check_beta(cs);
  HajekDeBlocks b;
  for (const auto& c : cs) {
    const double w = cluster_weight(*c.cl);
    AdditiveEngine eng(*c.f, *c.pi);
    const std::vector<Eigen::VectorXd> e0 = intercept_coefs(*c.cl);
    const auto& bt = c.beta;
    b.arm1.var_num += w * additive_cov_block(eng, *c.cl, bt, 1, 0, bt, 1, 0);
    b.arm1.var_den += w * additive_cov_block(eng, *c.cl, e0, 1, 0, e0, 1, 0);
    b.arm1.cov += w * additive_cov_block(eng, *c.cl, bt, 1, 0, e0, 1, 0);
    b.arm0.var_num += w * additive_cov_block(eng, *c.cl, bt, 0, 0, bt, 0, 0);
    b.arm0.var_den += w * additive_cov_block(eng, *c.cl, e0, 0, 0, e0, 0, 0);
    b.arm0.cov += w * additive_cov_block(eng, *c.cl, bt, 0, 0, e0, 0, 0);
    b.cov_mu1_mu0 += w * additive_cov_block(eng, *c.cl, bt, 1, 0, bt, 0, 0);
    b.cov_mu1_lam0 += w * additive_cov_block(eng, *c.cl, bt, 1, 0, e0, 0, 0);
    b.cov_lam1_mu0 += w * additive_cov_block(eng, *c.cl, e0, 1, 0, bt, 0, 0);
    b.cov_lam1_lam0 += w * additive_cov_block(eng, *c.cl, e0, 1, 0, e0, 0, 0);
  }
  const double K = static_cast<double>(cs.size());
  scale_de_blocks(b, 1.0 / (K * K));
  return b;
}

HajekBlocks hajek_tau_additive(const std::vector<AdditiveCluster>& cs,
                               const AdmissibleSpec& adm) {
  check_beta(cs);
  HajekBlocks b;
  for (const auto& c : cs) {
    const double w = cluster_weight(*c.cl);
    const std::vector<Eigen::VectorXd> e0 = intercept_coefs(*c.cl);
    b.var_num += w * additive_zeta_cov(*c.cl, *c.f, *c.pi, adm, c.beta, c.beta);
    b.var_den += w * additive_zeta_cov(*c.cl, *c.f, *c.pi, adm, e0, e0);
    b.cov += w * additive_zeta_cov(*c.cl, *c.f, *c.pi, adm, c.beta, e0);
  }
  const double K = static_cast<double>(cs.size());
  scale_blocks(b, 1.0 / (K * K));
  return b;
}

// ---------------------------------------------------------------------------
// Observed-data blocks
// ---------------------------------------------------------------------------

HajekBlocks hajek_mu_stratified_hat(const Dataset& ds, int a,
                                    VarEngineCache* cache) {
  const int K = ds.n_clusters();
  check_nonempty(static_cast<std::size_t>(K));
  HajekBlocks b;
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    require_fixed_proportion(ds.f[k], cl.id);
    const double w = cluster_weight(cl);
    std::optional<KappaEngine> local;
    const KappaEngine& ke =
        cache ? cache->kappa_for(ds, k) : local.emplace(ds.f[k], ds.pi[k]);
    const Pooled p = pool_observed(cl, ds.y[k]);
    const Mask A = ds.assign[k];
    b.var_num += w * quad_hat(ke, A, p.ysum, a, p.ysum, a);
    b.var_den += w * quad_hat(ke, A, p.deg, a, p.deg, a);
    b.cov += w * quad_hat(ke, A, p.ysum, a, p.deg, a);
  }
  scale_blocks(b, 1.0 / (static_cast<double>(K) * K));
  return b;
}

HajekDeBlocks hajek_de_stratified_hat(const Dataset& ds,
                                      VarEngineCache* cache) {
  const int K = ds.n_clusters();
  check_nonempty(static_cast<std::size_t>(K));
  HajekDeBlocks b;
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    require_single_key(cl);
    require_fixed_proportion(ds.f[k], cl.id);
    const double w = cluster_weight(cl);
    std::optional<KappaEngine> local;
    const KappaEngine& ke =
        cache ? cache->kappa_for(ds, k) : local.emplace(ds.f[k], ds.pi[k]);
    const Pooled p = pool_observed(cl, ds.y[k]);
    const Mask A = ds.assign[k];
    b.arm1.var_num += w * quad_hat(ke, A, p.ysum, 1, p.ysum, 1);
    b.arm1.var_den += w * quad_hat(ke, A, p.deg, 1, p.deg, 1);
    b.arm1.cov += w * quad_hat(ke, A, p.ysum, 1, p.deg, 1);
    b.arm0.var_num += w * quad_hat(ke, A, p.ysum, 0, p.ysum, 0);
    b.arm0.var_den += w * quad_hat(ke, A, p.deg, 0, p.deg, 0);
    b.arm0.cov += w * quad_hat(ke, A, p.ysum, 0, p.deg, 0);
    // Cross-arm diagonals: the numerator/denominator products use the arm of
    // the outcome factor (the degree is known for every unit); the two
    // same-kind products fall back to the conservative half-sum surrogate.
    b.cov_mu1_mu0 +=
        w * quad_hat(ke, A, p.ysum, 1, p.ysum, 0, CrossDiag::HalfSum);
    b.cov_mu1_lam0 +=
        w * quad_hat(ke, A, p.ysum, 1, p.deg, 0, CrossDiag::Arm1);
    b.cov_lam1_mu0 +=
        w * quad_hat(ke, A, p.deg, 1, p.ysum, 0, CrossDiag::Arm0);
    b.cov_lam1_lam0 +=
        w * quad_hat(ke, A, p.deg, 1, p.deg, 0, CrossDiag::HalfSum);
  }
  scale_de_blocks(b, 1.0 / (static_cast<double>(K) * K));
  return b;
}

HajekEventBlocksHat hajek_tau_event_hat(const Dataset& ds,
                                        const AdmissibleSpec& adm) {
  const int K = ds.n_clusters();
  check_nonempty(static_cast<std::size_t>(K));
  HajekEventBlocksHat out;
  for (int k = 0; k < K; ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    const EventGroups g = event_groups(cl, adm);
    EventEngine ee(ds.f[k], ds.pi[k], g);
    const std::vector<double> x = pool_by_group(g, ds.y[k]);
    std::vector<double> ones(g.events.size());
    for (std::size_t q = 0; q < ones.size(); ++q)
      ones[q] = static_cast<double>(g.targets[q].size());
    const double w = cluster_weight(cl);
    const Mask A = ds.assign[k];
    out.blocks.var_num +=
        w * event_quad_hat(ee, A, x, x, &out.used_fallback);
    out.blocks.var_den +=
        w * event_quad_hat(ee, A, ones, ones, &out.used_fallback);
    out.blocks.cov += w * event_quad_hat(ee, A, x, ones, &out.used_fallback);
  }
  scale_blocks(out.blocks, 1.0 / (static_cast<double>(K) * K));
  return out;
}

HajekBlocks hajek_mu_additive_hat(const Dataset& ds, int a) {
  return hajek_mu_additive(additive_plug_in(ds, additive_coef_hats(ds)), a);
}

HajekDeBlocks hajek_de_additive_hat(const Dataset& ds) {
  return hajek_de_additive(additive_plug_in(ds, additive_coef_hats(ds)));
}

HajekBlocks hajek_tau_additive_hat(const Dataset& ds,
                                   const AdmissibleSpec& adm) {
  return hajek_tau_additive(additive_plug_in(ds, additive_coef_hats(ds)), adm);
}

// ---------------------------------------------------------------------------
// Full plug-in estimates
// ---------------------------------------------------------------------------

double var_mu_hajek_stratified_hat(const Dataset& ds, int a,
                                   VarEngineCache* var_cache,
                                   EvalCache* eval_cache) {
  const double center =
      point_estimate(ds, mu_spec(a), PointEstimator::Hajek, eval_cache).point;
  return hajek_mu_stratified_hat(ds, a, var_cache).combine(center);
}

double var_de_hajek_stratified_hat(const Dataset& ds,
                                   VarEngineCache* var_cache,
                                   EvalCache* eval_cache) {
  const double mu1 =
      point_estimate(ds, mu_spec(1), PointEstimator::Hajek, eval_cache).point;
  const double mu0 =
      point_estimate(ds, mu_spec(0), PointEstimator::Hajek, eval_cache).point;
  return hajek_de_stratified_hat(ds, var_cache).combine(mu1, mu0);
}

EventVarEstimate var_tau_hajek_event_hat(const Dataset& ds,
                                         const AdmissibleSpec& adm) {
  EstimandSpec spec;
  spec.kind = EstimandKind::Tau;
  spec.admissible = adm;
  const double center = point_estimate(ds, spec, PointEstimator::Hajek).point;
  const HajekEventBlocksHat hb = hajek_tau_event_hat(ds, adm);
  EventVarEstimate out;
  out.value = hb.blocks.combine(center);
  out.used_fallback = hb.used_fallback;
  return out;
}

double var_mu_hajek_additive_hat(const Dataset& ds, int a) {
  const double center =
      point_estimate(ds, mu_spec(a), PointEstimator::Hajek).point;
  return hajek_mu_additive_hat(ds, a).combine(center);
}

double var_de_hajek_additive_hat(const Dataset& ds) {
  const double mu1 =
      point_estimate(ds, mu_spec(1), PointEstimator::Hajek).point;
  const double mu0 =
      point_estimate(ds, mu_spec(0), PointEstimator::Hajek).point;
  return hajek_de_additive_hat(ds).combine(mu1, mu0);
}

double var_tau_hajek_additive_hat(const Dataset& ds,
                                  const AdmissibleSpec& adm) {
  EstimandSpec spec;
  spec.kind = EstimandKind::Tau;
  spec.admissible = adm;
  const double center = point_estimate(ds, spec, PointEstimator::Hajek).point;
  return hajek_tau_additive_hat(ds, adm).combine(center);
}

}  // namespace netexp
