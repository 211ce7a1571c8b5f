#pragma once

#include <map>
#include <string>
#include <vector>

#include "netexp/design.hpp"

namespace netexp {

// One cluster of the study population. Intervention units ("eligible") carry
// the assignment bits, in local index order; target units are the outcome
// population, each attached to one or more key intervention units.
struct Cluster {
  std::string id;
  std::vector<std::string> unit_ids;                       // intervention units
  std::map<std::string, int> unit_index;                   // unit_id -> bit
  std::vector<std::map<std::string, double>> covariates;   // per intervention unit
  std::vector<std::string> target_ids;
  std::map<std::string, int> target_index;
  std::vector<std::vector<int>> keys;  // per target: sorted local unit indices

  int n_units() const { return static_cast<int>(unit_ids.size()); }
  int n_targets() const { return static_cast<int>(target_ids.size()); }
  Mask key_mask(int j) const {
    Mask m = 0;
    for (int i : keys[j]) m |= Mask(1) << i;
    return m;
  }
  // Single key unit of target j; throws when the target has several.
  int single_key(int j) const;
};

struct Frame {
  std::vector<Cluster> clusters;
  std::map<std::string, int> cluster_index;

  bool all_single_key() const;
};

// Admissible set defining a stochastic intervention on top of a base design.
struct AdmissibleSpec {
  enum Kind { Unrestricted, KeyTreated, KeyProportion, GroupProportion } kind =
      Unrestricted;
  int a = 1;                // KeyTreated
  double p_star = 0.5;      // KeyProportion
  std::string group_field;  // GroupProportion
  double alpha = 0.5;       // GroupProportion
};

// Nearest integer with ties rounded half away from zero.
int nearest_int(double x);

// Constraints the admissible set induces for target j (empty for
// Unrestricted). GroupProportion constraints do not depend on j.
std::vector<Constraint> admissible_constraints(const AdmissibleSpec& adm,
                                               const Cluster& cl, int j);

// Assembled study data, aligned with frame.clusters.
struct Dataset {
  Frame frame;
  std::vector<Design> f;        // assignment mechanism
  std::vector<Design> pi;       // intervention base
  std::vector<Design> pi_alt;   // second intervention (IE/TE); may be empty
  std::vector<Mask> assign;     // observed assignment
  std::vector<std::vector<double>> y;  // observed outcomes per target

  bool has_alt() const { return !pi_alt.empty(); }
  int n_clusters() const { return static_cast<int>(frame.clusters.size()); }
  // Validates observed assignments against f's support and finite outcomes.
  void validate_observed() const;
};

// Pooled outcome / degree vectors over intervention units (single-key).
struct Pooled {
  std::vector<double> ysum;  // per unit: sum of outcomes of attached targets
  std::vector<double> deg;   // per unit: number of attached targets
};
Pooled pool_observed(const Cluster& cl, const std::vector<double>& y);

}  // namespace netexp
