#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace dualbound {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  static const double inv_sqrt_2pi = 0.3989422804014326779;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley refinement; absolute error well below 1e-12 on (0,1)).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
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
  const double plow = 0.02425;
  double q, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley step against the exact CDF.
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

inline double sample_mean(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("sample_mean: empty vector");
  return v.mean();
}

/// Sample standard deviation with the n-1 divisor.
inline double sample_sd(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) return 0.0;
  double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(n - 1));
}

/// Empirical quantile, type-1 (left-continuous inverse CDF) on a sorted copy.
inline double empirical_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("empirical_quantile: p must be in (0,1]");
  std::sort(v.begin(), v.end());
  auto n = static_cast<std::ptrdiff_t>(v.size());
  std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(std::ceil(p * static_cast<double>(n))) - 1;
  if (idx < 0) idx = 0;
  if (idx >= n) idx = n - 1;
  return v[static_cast<std::size_t>(idx)];
}

/// Deterministic standard-normal stream (Box-Muller over mt19937_64
/// uniforms): identical output for identical seeds on every platform, unlike
/// std::normal_distribution.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  double uniform01() {
    // In (0, 1]: avoids log(0).
    return (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
  }
  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Mean of a standard normal truncated to its lower eta-tail: E[Z | Z <= q_eta].
inline double lower_tail_normal_mean(double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("lower_tail_normal_mean: eta in (0,1]");
  if (eta >= 1.0) return 0.0;
  double z = normal_quantile(eta);
  return -normal_pdf(z) / eta;
}

}  // namespace dualbound
