#include "netexp/frame.hpp"

#include <bit>
#include <cmath>

namespace netexp {

int Cluster::single_key(int j) const {
  if (keys[j].size() != 1)
    fail(kIntegrityError, "target '" + target_ids[j] + "' in cluster '" + id +
                              "' has " + std::to_string(keys[j].size()) +
                              " key units where exactly one is required");
  return keys[j][0];
}

bool Frame::all_single_key() const {
  for (const auto& cl : clusters)
    for (const auto& k : cl.keys)
      if (k.size() != 1) return false;
  return true;
}

int nearest_int(double x) {
  return static_cast<int>(std::lround(x));
}

std::vector<Constraint> admissible_constraints(const AdmissibleSpec& adm,
                                               const Cluster& cl, int j) {
  switch (adm.kind) {
    case AdmissibleSpec::Unrestricted:
      return {};
    case AdmissibleSpec::KeyTreated: {
      Mask m = cl.key_mask(j);
      int want = adm.a == 1 ? static_cast<int>(cl.keys[j].size()) : 0;
      return {{m, want}};
    }
    case AdmissibleSpec::KeyProportion: {
      Mask m = cl.key_mask(j);
      int r = static_cast<int>(cl.keys[j].size());
      return {{m, nearest_int(r * adm.p_star)}};
    }
    case AdmissibleSpec::GroupProportion: {
      std::map<std::string, Mask> groups;
      for (int i = 0; i < cl.n_units(); ++i) {
        auto it = cl.covariates[i].find(adm.group_field);
        if (it == cl.covariates[i].end())
          fail(kIntegrityError, "cluster '" + cl.id + "': unit '" + cl.unit_ids[i] +
                                    "' lacks group field '" + adm.group_field + "'");
        groups[fmt17(it->second)] |= Mask(1) << i;
      }
      std::vector<Constraint> cons;
      for (auto& [key, m] : groups) {
        int size = std::popcount(m);
        cons.push_back({m, nearest_int(adm.alpha * size)});
      }
      return cons;
    }
  }
  return {};
}

void Dataset::validate_observed() const {
  for (int k = 0; k < n_clusters(); ++k) {
    const auto& cl = frame.clusters[k];
    if (f[k].pmf(assign[k]) <= 0.0)
      fail(kIntegrityError, "cluster '" + cl.id +
                                "': observed assignment lies outside the support "
                                "of the declared design");
    for (int j = 0; j < cl.n_targets(); ++j)
      if (!std::isfinite(y[k][j]))
        fail(kIntegrityError,
             "cluster '" + cl.id + "': non-finite outcome for target '" +
                 cl.target_ids[j] + "'");
  }
}

Pooled pool_observed(const Cluster& cl, const std::vector<double>& y) {
  Pooled p;
  p.ysum.assign(cl.n_units(), 0.0);
  p.deg.assign(cl.n_units(), 0.0);
  for (int j = 0; j < cl.n_targets(); ++j) {
    int i = cl.single_key(j);
    p.ysum[i] += y[j];
    p.deg[i] += 1.0;
  }
  return p;
}

}  // namespace netexp
