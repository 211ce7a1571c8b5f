#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace netexp {

// Assignment vector for one cluster, bit i = treatment of intervention unit i.
// The exact engine supports clusters with up to 64 intervention units.
using Mask = std::uint64_t;

// Process exit codes, also used to classify library errors.
enum ExitCode : int {
  kOk = 0,
  kSchemaError = 2,     // malformed config / CSV schema violation
  kIntegrityError = 3,  // cross-file inconsistency (ids, duplicates, coverage)
  kAssumptionError = 4, // overlap/positivity or other design assumption violated
  kNumericError = 5,    // capacity limits, singular systems, non-finite values
  kUndefinedEstimate = 6,
};

class NxError : public std::runtime_error {
 public:
  NxError(ExitCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

[[noreturn]] inline void fail(ExitCode code, const std::string& msg) {
  throw NxError(code, msg);
}

// ---- combinatorics -------------------------------------------------------

// Binomial coefficient as long double (exact for values below 2^64, which
// covers every n <= 64; larger tables keep ~18 significant digits).
long double binom_ld(int n, int k);

// ---- floating point formatting ------------------------------------------

// Shortest representation with 17 significant digits (round-trip safe).
std::string fmt17(double x);

// ---- deterministic RNG ---------------------------------------------------

// Counter-style splitmix64 generator. Streams are derived by mixing tag
// values into the seed, so (seed, purpose, rep, cluster, unit) always yields
// the same substream regardless of call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9E3779B97F4A7C15ull)) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Derive an independent substream keyed by `tag`.
  Rng fork(std::uint64_t tag) const {
    Rng r(0);
    r.state_ = mix(state_ ^ mix(tag + 0x632BE59BD9B4E019ull));
    return r;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection-free enough for our purposes; use rejection to
    // keep the distribution exact.
    std::uint64_t x, r;
    do {
      x = next();
      r = x % n;
    } while (x - r > std::uint64_t(0) - n);
    return r;
  }

  // Standard normal via Box-Muller (implementation-pinned, unlike
  // std::normal_distribution).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

// Inverse standard normal CDF (Wichura-style rational approximation refined
// to full double precision with one Halley step).
double normal_quantile(double p);

}  // namespace netexp
