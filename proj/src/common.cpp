#include "netexp/common.hpp"

#include <cmath>
#include <cstdio>
#include <mutex>

namespace netexp {

namespace {
constexpr int kBinomMax = 400;
long double* binom_table() {
  static long double* table = [] {
    auto* t = new long double[(kBinomMax + 1) * (kBinomMax + 1)];
    for (int n = 0; n <= kBinomMax; ++n) {
      t[n * (kBinomMax + 1) + 0] = 1.0L;
      for (int k = 1; k <= n; ++k) {
        long double up = (k - 1 <= n - 1) ? t[(n - 1) * (kBinomMax + 1) + (k - 1)] : 0.0L;
        long double left = (k <= n - 1) ? t[(n - 1) * (kBinomMax + 1) + k] : 0.0L;
        t[n * (kBinomMax + 1) + k] = up + left;
      }
      for (int k = n + 1; k <= kBinomMax; ++k) t[n * (kBinomMax + 1) + k] = 0.0L;
    }
    return t;
  }();
  return table;
}
}  // namespace

long double binom_ld(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0.0L;
  if (n <= kBinomMax) return binom_table()[n * (kBinomMax + 1) + k];
  // Fall back to a multiplicative evaluation for very large n.
  if (k > n - k) k = n - k;
  long double r = 1.0L;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(kNumericError, "normal_quantile: p outside (0,1)");
  // Peter Acklam's rational approximation.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // One Halley refinement using the complementary error function.
  double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  x = x - u / (1 + x * u / 2);
  return x;
}

}  // namespace netexp
