#ifndef TSMC_NUMERICS_HPP_
#define TSMC_NUMERICS_HPP_

#include <cmath>
#include <limits>
#include <span>

namespace tsmc {

// Default clamp for log-probabilities and log-potentials. exp(-45) ~ 2.9e-20,
// small enough to be negligible in normalized sums but keeps every importance
// ratio finite.
inline constexpr double kDefaultLogFloor = -45.0;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Max-shifted log(sum_i exp(x_i)). Returns -inf on an empty or all -inf span.
inline double logsumexp(std::span<const double> x) {
  double m = kNegInf;
  for (double v : x)
    if (v > m) m = v;
  if (!(m > kNegInf)) return kNegInf;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline double logaddexp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (!(a > kNegInf)) return kNegInf;
  return a + std::log1p(std::exp(b - a));
}

// log(1 / (1 + exp(-x))), stable on both tails.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// (sum exp w)^2 / sum exp(2w), max-shifted. In [1, n] for n finite entries.
inline double effective_sample_size(std::span<const double> log_weights) {
  double m = kNegInf;
  for (double w : log_weights)
    if (w > m) m = w;
  if (!(m > kNegInf)) return 0.0;
  double s1 = 0.0, s2 = 0.0;
  for (double w : log_weights) {
    double e = std::exp(w - m);
    s1 += e;
    s2 += e * e;
  }
  return s1 * s1 / s2;
}

}  // namespace tsmc

#endif  // TSMC_NUMERICS_HPP_
