#include "netexp/additive.hpp"

#include <Eigen/SVD>
#include <cstdint>
#include <utility>
#include <vector>

#include "netexp/estimators.hpp"

namespace netexp {

namespace {

void require_single_key(const Cluster& cl) {
  for (int j = 0; j < cl.n_targets(); ++j)
    if (cl.keys[j].size() != 1)
      fail(ExitCode::kAssumptionError,
           "target '" + cl.target_ids[j] + "' in cluster '" + cl.id +
               "' has several key units; the additive variance needs one key "
               "unit per target");
}

std::uint64_t pack_tilt(int k1, int a1, int d1, int k2, int a2, int d2) {
  return (std::uint64_t(k1) << 40) | (std::uint64_t(a1) << 32) |
         (std::uint64_t(d1) << 24) | (std::uint64_t(k2) << 16) |
         (std::uint64_t(a2) << 8) | std::uint64_t(d2);
}

void check_clusters(const std::vector<AdditiveCluster>& cs) {
  if (cs.empty()) fail(kIntegrityError, "dataset has no clusters");
  for (const auto& c : cs) {
    if (static_cast<int>(c.beta.size()) != c.cl->n_targets())
      fail(kIntegrityError,
           "cluster '" + c.cl->id +
               "': one coefficient vector per target is required");
    for (const auto& b : c.beta)
      if (b.size() != c.cl->n_units() + 1)
        fail(kIntegrityError, "cluster '" + c.cl->id +
                                  "': coefficient vector length must be the "
                                  "number of intervention units plus one");
  }
}

}  // namespace

Eigen::MatrixXd design_moment_matrix(const Design& f) {
  const int n = f.n_units();
  Eigen::MatrixXd m(n + 1, n + 1);
  m(0, 0) = 1.0;
  for (int i = 0; i < n; ++i) {
    const double p1 = f.marginal(i, 1);
    m(0, i + 1) = m(i + 1, 0) = p1;
    m(i + 1, i + 1) = p1;  // A_i^2 = A_i for binary assignments
    for (int j = i + 1; j < n; ++j) {
      const double p11 = f.pair_joint(i, 1, j, 1);
      m(i + 1, j + 1) = m(j + 1, i + 1) = p11;
    }
  }
  return m;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rtol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cut = sv.size() > 0 ? rtol * sv(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::VectorXd additive_coef_hat(const Eigen::MatrixXd& pinv, Mask a, int n,
                                  double y_obs) {
  Eigen::VectorXd atil(n + 1);
  atil(0) = 1.0;
  for (int i = 0; i < n; ++i)
    atil(i + 1) = static_cast<double>((a >> i) & 1);
  return pinv * atil * y_obs;
}

AdditiveEngine::AdditiveEngine(const Design& f, const Design& pi,
                               const Design* pi_alt)
    : f_(f), pi_(pi) {
  if (pi_alt) alt_ = *pi_alt;
}

const Design& AdditiveEngine::intervention(int d) const {
  if (d == 0) return pi_;
  if (!alt_)
    fail(kSchemaError,
         "estimand requires a second intervention (none supplied)");
  return *alt_;
}

const Eigen::MatrixXd& AdditiveEngine::tilt(int key1, int a1, int d1, int key2,
                                            int a2, int d2) {
  const std::uint64_t id = pack_tilt(key1, a1, d1, key2, a2, d2);
  auto it = cache_.find(id);
  if (it != cache_.end()) return it->second;

  const int n = f_.n_units();
  const Design& da = intervention(d1);
  const Design& db = intervention(d2);
  const double m1 = da.marginal(key1, a1);
  const double m2 = db.marginal(key2, a2);
  if (m1 <= 0.0 || m2 <= 0.0)
    fail(kAssumptionError,
         "intervention never places a contributing unit at the requested arm");

  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n + 1, n + 1);
  if (key1 == key2 && a1 != a2)  // conflicting pins: empty event
    return cache_.emplace(id, std::move(t)).first->second;

  std::vector<Fix> fixes{{key1, a1}};
  if (key2 != key1) fixes.push_back({key2, a2});
  auto pinned = [&fixes](int u, int* val) {
    for (const auto& fx : fixes)
      if (fx.unit == u) {
        *val = fx.value;
        return true;
      }
    return false;
  };

  const long double s0 = ratio_weight_sum(da, &db, &f_, fixes);
  std::vector<long double> s1(n, 0.0L);
  for (int i = 0; i < n; ++i) {
    int v = 0;
    if (pinned(i, &v)) {
      s1[i] = v ? s0 : 0.0L;
    } else {
      auto fx = fixes;
      fx.push_back({i, 1});
      s1[i] = ratio_weight_sum(da, &db, &f_, fx);
    }
  }
  t(0, 0) = static_cast<double>(s0);
  for (int i = 0; i < n; ++i) {
    t(0, i + 1) = t(i + 1, 0) = t(i + 1, i + 1) = static_cast<double>(s1[i]);
    for (int j = i + 1; j < n; ++j) {
      int vi = 0, vj = 0;
      const bool pin_i = pinned(i, &vi), pin_j = pinned(j, &vj);
      long double s2;
      if (pin_i && pin_j) {
        s2 = (vi && vj) ? s0 : 0.0L;
      } else if (pin_i) {
        s2 = vi ? s1[j] : 0.0L;
      } else if (pin_j) {
        s2 = vj ? s1[i] : 0.0L;
      } else {
        auto fx = fixes;
        fx.push_back({i, 1});
        fx.push_back({j, 1});
        s2 = ratio_weight_sum(da, &db, &f_, fx);
      }
      t(i + 1, j + 1) = t(j + 1, i + 1) = static_cast<double>(s2);
    }
  }
  t /= m1 * m2;
  return cache_.emplace(id, std::move(t)).first->second;
}

Eigen::VectorXd AdditiveEngine::anchor(int key, int a, int d) const {
  const Design& dd = intervention(d);
  const double m = dd.marginal(key, a);
  if (m <= 0.0)
    fail(kAssumptionError,
         "intervention never places a contributing unit at the requested arm");
  const int n = f_.n_units();
  Eigen::VectorXd al(n + 1);
  al(0) = 1.0;
  for (int i = 0; i < n; ++i)
    al(i + 1) = i == key ? static_cast<double>(a)
                         : dd.pair_joint(i, 1, key, a) / m;
  return al;
}

double additive_cov_block(AdditiveEngine& eng, const Cluster& cl,
                          const std::vector<Eigen::VectorXd>& b1, int a1, int d1,
                          const std::vector<Eigen::VectorXd>& b2, int a2,
                          int d2) {
  require_single_key(cl);
  const int S = cl.n_targets();
  std::vector<int> key(S);
  std::vector<double> anc1(S), anc2(S);
  for (int j = 0; j < S; ++j) {
    key[j] = cl.single_key(j);
    anc1[j] = eng.anchor(key[j], a1, d1).dot(b1[j]);
    anc2[j] = eng.anchor(key[j], a2, d2).dot(b2[j]);
  }
  double acc = 0.0;
  for (int j = 0; j < S; ++j)
    for (int j2 = 0; j2 < S; ++j2) {
      const Eigen::MatrixXd& t = eng.tilt(key[j], a1, d1, key[j2], a2, d2);
      acc += b1[j].dot(t * b2[j2]) - anc1[j] * anc2[j2];
    }
  return acc;
}

double additive_zeta_cov(const Cluster& cl, const Design& f, const Design& pi,
                         const AdmissibleSpec& adm,
                         const std::vector<Eigen::VectorXd>& b1,
                         const std::vector<Eigen::VectorXd>& b2) {
  const int S = cl.n_targets();
  const int n = cl.n_units();
  TargetDesigns td(cl, pi, adm);
  check_overlap(f, td, cl);
  long double e1 = 0.0L, e2 = 0.0L, e12 = 0.0L;
  Eigen::VectorXd atil(n + 1);
  atil(0) = 1.0;
  f.for_each_support([&](Mask v, double pf) {
    for (int i = 0; i < n; ++i)
      atil(i + 1) = static_cast<double>((v >> i) & 1);
    double za = 0.0, zb = 0.0;
    for (int j = 0; j < S; ++j) {
      const double w = td.of(j).pmf(v) / pf;
      if (w == 0.0) continue;
      za += w * atil.dot(b1[j]);
      zb += w * atil.dot(b2[j]);
    }
    e1 += static_cast<long double>(pf) * za;
    e2 += static_cast<long double>(pf) * zb;
    e12 += static_cast<long double>(pf) * za * zb;
  });
  return static_cast<double>(e12 - e1 * e2);
}

double var_mu_additive(const std::vector<AdditiveCluster>& cs, int a) {
  check_clusters(cs);
  const double K = static_cast<double>(cs.size());
  double acc = 0.0;
  for (const auto& c : cs) {
    AdditiveEngine eng(*c.f, *c.pi, c.pi_alt);
    const double S = c.cl->n_targets();
    acc += additive_cov_block(eng, *c.cl, c.beta, a, 0, c.beta, a, 0) / (S * S);
  }
  return acc / (K * K);
}

double var_de_additive(const std::vector<AdditiveCluster>& cs) {
  check_clusters(cs);
  const double K = static_cast<double>(cs.size());
  double acc = 0.0;
  for (const auto& c : cs) {
    AdditiveEngine eng(*c.f, *c.pi, c.pi_alt);
    const double S = c.cl->n_targets();
    const double v1 = additive_cov_block(eng, *c.cl, c.beta, 1, 0, c.beta, 1, 0);
    const double v0 = additive_cov_block(eng, *c.cl, c.beta, 0, 0, c.beta, 0, 0);
    const double c10 = additive_cov_block(eng, *c.cl, c.beta, 1, 0, c.beta, 0, 0);
    acc += (v1 + v0 - 2.0 * c10) / (S * S);
  }
  return acc / (K * K);
}

double var_ie_additive(const std::vector<AdditiveCluster>& cs, int a) {
  check_clusters(cs);
  const double K = static_cast<double>(cs.size());
  double acc = 0.0;
  for (const auto& c : cs) {
    if (!c.pi_alt)
      fail(kSchemaError,
           "estimand requires a second intervention (none supplied)");
    AdditiveEngine eng(*c.f, *c.pi, c.pi_alt);
    const double S = c.cl->n_targets();
    double bracket = 0.0;
    for (int d1 = 0; d1 <= 1; ++d1)
      for (int d2 = 0; d2 <= 1; ++d2) {
        const double sign = d1 == d2 ? 1.0 : -1.0;
        bracket +=
            sign * additive_cov_block(eng, *c.cl, c.beta, a, d1, c.beta, a, d2);
      }
    acc += bracket / (S * S);
  }
  return acc / (K * K);
}

double var_tau_additive(const std::vector<AdditiveCluster>& cs,
                        const AdmissibleSpec& adm) {
  check_clusters(cs);
  const double K = static_cast<double>(cs.size());
  double acc = 0.0;
  for (const auto& c : cs) {
    const double S = c.cl->n_targets();
    acc += additive_zeta_cov(*c.cl, *c.f, *c.pi, adm, c.beta, c.beta) / (S * S);
  }
  return acc / (K * K);
}

std::vector<std::vector<Eigen::VectorXd>> additive_coef_hats(const Dataset& ds) {
  std::vector<std::vector<Eigen::VectorXd>> out(ds.n_clusters());
  for (int k = 0; k < ds.n_clusters(); ++k) {
    const Cluster& cl = ds.frame.clusters[k];
    const int n = cl.n_units();
    const Eigen::MatrixXd pinv = pseudo_inverse(design_moment_matrix(ds.f[k]));
    Eigen::VectorXd atil(n + 1);
    atil(0) = 1.0;
    for (int i = 0; i < n; ++i)
      atil(i + 1) = static_cast<double>((ds.assign[k] >> i) & 1);
    const Eigen::VectorXd w = pinv * atil;
    out[k].reserve(cl.n_targets());
    for (int j = 0; j < cl.n_targets(); ++j) out[k].push_back(w * ds.y[k][j]);
  }
  return out;
}

std::vector<AdditiveCluster> additive_plug_in(
    const Dataset& ds, std::vector<std::vector<Eigen::VectorXd>> coef) {
  std::vector<AdditiveCluster> cs(ds.n_clusters());
  for (int k = 0; k < ds.n_clusters(); ++k) {
    cs[k].cl = &ds.frame.clusters[k];
    cs[k].f = &ds.f[k];
    cs[k].pi = &ds.pi[k];
    cs[k].pi_alt = ds.has_alt() ? &ds.pi_alt[k] : nullptr;
    cs[k].beta = std::move(coef[k]);
  }
  return cs;
}

double var_mu_additive_hat(const Dataset& ds, int a) {
  return var_mu_additive(additive_plug_in(ds, additive_coef_hats(ds)), a);
}

double var_de_additive_hat(const Dataset& ds) {
  return var_de_additive(additive_plug_in(ds, additive_coef_hats(ds)));
}

double var_ie_additive_hat(const Dataset& ds, int a) {
  return var_ie_additive(additive_plug_in(ds, additive_coef_hats(ds)), a);
}

double var_tau_additive_hat(const Dataset& ds, const AdmissibleSpec& adm) {
  return var_tau_additive(additive_plug_in(ds, additive_coef_hats(ds)), adm);
}

}  // namespace netexp
