#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <map>
#include <vector>

#include "netexp/design.hpp"

using netexp::Constraint;
using netexp::Design;
using netexp::Fix;
using netexp::Mask;

namespace {

// Brute-force reference distribution over {0,1}^n, built straight from the
// textbook definitions (no shared code with the library's counting engine).
struct BrutePmf {
  int n;
  std::vector<double> p;  // indexed by mask

  double mass(Mask a) const { return p[a]; }

  static double choose(int n, int k) {
    if (k < 0 || k > n) return 0;
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
  }

  static BrutePmf complete(int n, int t) {
    BrutePmf b{n, std::vector<double>(std::size_t(1) << n, 0.0)};
    double c = choose(n, t);
    for (Mask a = 0; a < b.p.size(); ++a)
      if (std::popcount(a) == t) b.p[a] = 1.0 / c;
    return b;
  }

  static BrutePmf stratified(int n, const std::vector<int>& stratum,
                             const std::vector<int>& treat) {
    BrutePmf b{n, std::vector<double>(std::size_t(1) << n, 0.0)};
    int ns = static_cast<int>(treat.size());
    std::vector<int> size(ns, 0);
    for (int s : stratum) size[s]++;
    double denom = 1;
    for (int s = 0; s < ns; ++s) denom *= choose(size[s], treat[s]);
    for (Mask a = 0; a < b.p.size(); ++a) {
      std::vector<int> got(ns, 0);
      for (int i = 0; i < n; ++i)
        if (a >> i & 1) got[stratum[i]]++;
      if (got == treat) b.p[a] = 1.0 / denom;
    }
    return b;
  }

  static BrutePmf bernoulli(int n, double pr) {
    BrutePmf b{n, std::vector<double>(std::size_t(1) << n, 0.0)};
    for (Mask a = 0; a < b.p.size(); ++a) {
      int t = std::popcount(a);
      b.p[a] = std::pow(pr, t) * std::pow(1 - pr, n - t);
    }
    return b;
  }

  BrutePmf conditioned(const std::vector<Constraint>& cons) const {
    BrutePmf b{n, std::vector<double>(p.size(), 0.0)};
    double tot = 0;
    for (Mask a = 0; a < p.size(); ++a) {
      bool ok = true;
      for (const auto& c : cons)
        if (std::popcount(a & c.units) != c.count) ok = false;
      if (ok) {
        b.p[a] = p[a];
        tot += p[a];
      }
    }
    for (auto& x : b.p) x /= tot;
    return b;
  }

  double marginal(int i, int v) const {
    double s = 0;
    for (Mask a = 0; a < p.size(); ++a)
      if ((int)((a >> i) & 1) == v) s += p[a];
    return s;
  }
  double pair(int i, int vi, int j, int vj) const {
    double s = 0;
    for (Mask a = 0; a < p.size(); ++a)
      if ((int)((a >> i) & 1) == vi && (int)((a >> j) & 1) == vj) s += p[a];
    return s;
  }
};

void check_against_brute(const Design& d, const BrutePmf& b) {
  const int n = d.n_units();
  double tot = 0;
  for (Mask a = 0; a < (Mask(1) << n); ++a) {
    CAPTURE(a);
    CHECK(d.pmf(a) == doctest::Approx(b.mass(a)).epsilon(1e-12));
    tot += d.pmf(a);
  }
  CHECK(tot == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < n; ++i)
    for (int v = 0; v <= 1; ++v)
      CHECK(d.marginal(i, v) == doctest::Approx(b.marginal(i, v)).epsilon(1e-12));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int vi = 0; vi <= 1; ++vi)
        for (int vj = 0; vj <= 1; ++vj)
          CHECK(d.pair_joint(i, vi, j, vj) ==
                doctest::Approx(b.pair(i, vi, j, vj)).epsilon(1e-12));
  // Enumerated support must reproduce the full distribution.
  std::map<Mask, double> seen;
  d.for_each_support([&](Mask a, double pr) { seen[a] = pr; });
  double stot = 0;
  for (auto& [a, pr] : seen) {
    CHECK(pr == doctest::Approx(b.mass(a)).epsilon(1e-12));
    stot += pr;
  }
  CHECK(stot == doctest::Approx(1.0).epsilon(1e-12));
  for (Mask a = 0; a < (Mask(1) << n); ++a)
    if (b.mass(a) > 0) CHECK(seen.count(a) == 1);
}

}  // namespace

TEST_CASE("complete randomization basics") {
  auto d = Design::complete(4, 2);
  CHECK(d.support_size() == doctest::Approx(6));
  check_against_brute(d, BrutePmf::complete(4, 2));
  // Hand values: P(A_i=1)=1/2, P(A_i=1,A_j=1)=1/6, P(A_i=1,A_j=0)=1/3.
  CHECK(d.marginal(0, 1) == doctest::Approx(0.5));
  CHECK(d.pair_joint(0, 1, 1, 1) == doctest::Approx(1.0 / 6));
  CHECK(d.pair_joint(0, 1, 1, 0) == doctest::Approx(1.0 / 3));
  CHECK(d.pair_joint(2, 1, 2, 1) == doctest::Approx(0.5));
  CHECK(d.pair_joint(2, 1, 2, 0) == doctest::Approx(0.0));
  CHECK(d.is_uniform());
}

TEST_CASE("stratified randomization matches brute force") {
  std::vector<int> stratum = {0, 0, 0, 1, 1, 1};
  std::vector<int> treat = {1, 2};
  auto d = Design::stratified(6, stratum, treat);
  CHECK(d.support_size() == doctest::Approx(9));
  check_against_brute(d, BrutePmf::stratified(6, stratum, treat));
  CHECK(d.marginal(0, 1) == doctest::Approx(1.0 / 3));
  CHECK(d.marginal(4, 1) == doctest::Approx(2.0 / 3));
  // Within-stratum exclusivity for stratum 0 (1 treated among 3).
  CHECK(d.pair_joint(0, 1, 1, 1) == doctest::Approx(0.0));
}

TEST_CASE("bernoulli design matches brute force") {
  auto d = Design::bernoulli(3, 0.3);
  check_against_brute(d, BrutePmf::bernoulli(3, 0.3));
  CHECK(d.marginal(1, 1) == doctest::Approx(0.3));
  CHECK(d.pair_joint(0, 1, 2, 1) == doctest::Approx(0.09));
  CHECK(!d.is_uniform());
  CHECK(Design::bernoulli(3, 0.5).is_uniform());
}

TEST_CASE("restriction by single-coordinate event") {
  auto d = Design::complete(4, 2).restricted({{Mask(1) << 0, 1}});
  CHECK(d.support_size() == doctest::Approx(3));
  CHECK(d.marginal(0, 1) == doctest::Approx(1.0));
  for (Mask a = 0; a < 16; ++a) {
    double expect = (std::popcount(a) == 2 && (a & 1)) ? 1.0 / 3 : 0.0;
    CHECK(d.pmf(a) == doctest::Approx(expect));
  }
  check_against_brute(d, BrutePmf::complete(4, 2).conditioned({{Mask(1), 1}}));
}

TEST_CASE("restriction by subset-count event") {
  Constraint ev{0b00111, 1};  // exactly one treated among units 0,1,2
  auto d = Design::complete(5, 2).restricted({ev});
  check_against_brute(d, BrutePmf::complete(5, 2).conditioned({ev}));

  auto b = Design::bernoulli(5, 0.37).restricted({{0b11111, 2}});
  // Bernoulli conditioned on its total is uniform over popcount-2 masks.
  check_against_brute(b, BrutePmf::complete(5, 2));
  CHECK(b.is_uniform() == false);  // flag reflects the base coin, not the law
  for (Mask a = 0; a < 32; ++a)
    if (std::popcount(a) == 2) CHECK(b.pmf(a) == doctest::Approx(0.1));
}

TEST_CASE("explicit tables") {
  std::vector<std::pair<Mask, double>> rows = {{0b01, 0.25}, {0b10, 0.5}, {0b11, 0.25}};
  auto d = Design::explicit_table(2, rows);
  CHECK(d.pmf(0b01) == doctest::Approx(0.25));
  CHECK(d.pmf(0b00) == doctest::Approx(0.0));
  CHECK(d.marginal(0, 1) == doctest::Approx(0.5));
  CHECK(d.event_prob({{0b11, 1}}) == doctest::Approx(0.75));
  auto r = d.restricted({{0b10, 1}});  // unit 1 treated
  CHECK(r.pmf(0b10) == doctest::Approx(2.0 / 3));
  CHECK(r.pmf(0b11) == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS((void)Design::explicit_table(2, {{0b01, 0.5}, {0b01, 0.5}}),
                  netexp::NxError);
}

TEST_CASE("event probabilities and conditional pmf identities") {
  auto d = Design::stratified(6, {0, 0, 0, 1, 1, 1}, {1, 2});
  auto brute = BrutePmf::stratified(6, {0, 0, 0, 1, 1, 1}, {1, 2});
  std::vector<Constraint> given = {{0b000011, 1}};
  double pe = d.event_prob(given);
  double bute = 0;
  for (Mask a = 0; a < 64; ++a)
    if (std::popcount(a & 0b000011) == 1) bute += brute.mass(a);
  CHECK(pe == doctest::Approx(bute).epsilon(1e-12));
  for (Mask a = 0; a < 64; ++a) {
    double lhs = d.conditional_pmf(a, given) * pe;
    double rhs = (std::popcount(a & 0b000011) == 1) ? d.pmf(a) : 0.0;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("cross-design ratio sums against brute force") {
  // pi: stratified intervention, f: complete randomization (same cluster).
  auto pi = Design::stratified(6, {0, 0, 0, 1, 1, 1}, {2, 1});
  auto f = Design::complete(6, 3);
  auto bpi = BrutePmf::stratified(6, {0, 0, 0, 1, 1, 1}, {2, 1});
  auto bf = BrutePmf::complete(6, 3);

  auto brute_ratio = [&](const std::vector<Fix>& fx) {
    long double s = 0;
    for (Mask a = 0; a < 64; ++a) {
      bool ok = true;
      for (auto& x : fx)
        if ((int)((a >> x.unit) & 1) != x.value) ok = false;
      if (!ok || bpi.mass(a) == 0) continue;
      s += (long double)bpi.mass(a) * bpi.mass(a) / bf.mass(a);
    }
    return (double)s;
  };
  CHECK((double)netexp::ratio_weight_sum(pi, &pi, &f) ==
        doctest::Approx(brute_ratio({})).epsilon(1e-12));
  CHECK((double)netexp::ratio_weight_sum(pi, &pi, &f, {{0, 1}}) ==
        doctest::Approx(brute_ratio({{0, 1}})).epsilon(1e-12));
  CHECK((double)netexp::ratio_weight_sum(pi, &pi, &f, {{0, 1}, {4, 0}}) ==
        doctest::Approx(brute_ratio({{0, 1}, {4, 0}})).epsilon(1e-12));

  // Cross-measure variant (two different interventions).
  auto pi2 = Design::complete(6, 3).restricted({{Mask(1) << 0, 1}});
  auto bpi2 = BrutePmf::complete(6, 3).conditioned({{Mask(1) << 0, 1}});
  long double s = 0;
  for (Mask a = 0; a < 64; ++a)
    if (bpi.mass(a) > 0 && bpi2.mass(a) > 0)
      s += (long double)bpi.mass(a) * bpi2.mass(a) / bf.mass(a);
  CHECK((double)netexp::ratio_weight_sum(pi, &pi2, &f) ==
        doctest::Approx((double)s).epsilon(1e-12));

  // Overlap violation: CR(4,3) support is disjoint from CR(4,2).
  auto a43 = Design::complete(4, 3);
  auto f42 = Design::complete(4, 2);
  CHECK_THROWS_AS((void)netexp::ratio_weight_sum(a43, &a43, &f42), netexp::NxError);
}

TEST_CASE("bernoulli-base cross sums") {
  auto pi = Design::bernoulli(5, 0.3).restricted({{0b11111, 2}});
  auto f = Design::bernoulli(5, 0.6);
  auto bpi = BrutePmf::bernoulli(5, 0.3).conditioned({{0b11111, 2}});
  auto bf = BrutePmf::bernoulli(5, 0.6);
  long double s = 0;
  for (Mask a = 0; a < 32; ++a)
    if (bpi.mass(a) > 0) s += (long double)bpi.mass(a) * bpi.mass(a) / bf.mass(a);
  CHECK((double)netexp::ratio_weight_sum(pi, &pi, &f) ==
        doctest::Approx((double)s).epsilon(1e-12));
  // Event argument instead of a fix.
  long double s2 = 0;
  for (Mask a = 0; a < 32; ++a)
    if (std::popcount(a & 0b00011) == 1 && bpi.mass(a) > 0)
      s2 += (long double)bpi.mass(a) * bpi.mass(a) / bf.mass(a);
  CHECK((double)netexp::ratio_weight_sum(pi, &pi, &f, {}, {{0b00011, 1}}) ==
        doctest::Approx((double)s2).epsilon(1e-12));
}

TEST_CASE("counting helper") {
  CHECK((double)netexp::constrained_count(5, {{0b11111, 2}}) == doctest::Approx(10));
  CHECK((double)netexp::constrained_count(5, {{0b11111, 2}}, {{0, 1}}) == doctest::Approx(4));
  CHECK((double)netexp::constrained_count(5, {}) == doctest::Approx(32));
}

TEST_CASE("sampling reproduces the law and is deterministic") {
  netexp::Rng rng(42);
  auto check_freqs = [&](const Design& d, int draws, double tol) {
    std::map<Mask, int> freq;
    for (int r = 0; r < draws; ++r) freq[d.sample(rng)]++;
    d.for_each_support([&](Mask a, double pr) {
      double emp = freq.count(a) ? double(freq[a]) / draws : 0.0;
      CHECK(std::abs(emp - pr) < tol);
    });
    int tot = 0;
    for (auto& [a, c] : freq) {
      double pr = d.pmf(a);
      CHECK(pr > 0);  // never samples outside the support
      tot += c;
    }
    CHECK(tot == draws);
  };
  check_freqs(Design::complete(5, 2), 20000, 0.02);
  check_freqs(Design::stratified(5, {0, 0, 0, 1, 1}, {1, 1}), 20000, 0.02);
  check_freqs(Design::bernoulli(4, 0.35), 20000, 0.02);
  check_freqs(Design::complete(5, 2).restricted({{0b00111, 1}}), 20000, 0.02);
  check_freqs(Design::bernoulli(5, 0.3).restricted({{0b11111, 2}}), 20000, 0.02);

  netexp::Rng r1(7), r2(7);
  auto d = Design::complete(6, 3).restricted({{0b000111, 2}});
  for (int i = 0; i < 50; ++i) CHECK(d.sample(r1) == d.sample(r2));
}

TEST_CASE("capacity limits") {
  auto big = Design::bernoulli(25, 0.5);
  CHECK_THROWS_AS(big.for_each_support([](Mask, double) {}, 1u << 20), netexp::NxError);
  auto ok = Design::bernoulli(10, 0.5);
  int count = 0;
  ok.for_each_support([&](Mask, double) { ++count; });
  CHECK(count == 1024);
}

TEST_CASE("empty restrictions are rejected") {
  CHECK_THROWS_AS((void)Design::complete(4, 2).restricted({{0b1111, 4}}), netexp::NxError);
  CHECK_THROWS_AS((void)Design::complete(4, 2).restricted({{0b0011, 1}, {0b0011, 2}}),
                  netexp::NxError);
}
