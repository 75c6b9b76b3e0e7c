#pragma once

#include <span>

namespace ftb {

/// Standard normal CDF.
double normal_cdf(double x);

/// Inverse standard normal CDF, p in (0, 1). Accurate to ~1e-15 relative
/// after one Halley refinement of a rational initial guess.
double normal_quantile(double p);

/// z such that P(|Z| <= z) == confidence, confidence in (0, 1).
double two_sided_z(double confidence);

struct SampleMoments {
  double mean = 0.0;
  double stddev = 0.0;  // unbiased (n - 1) estimator; 0 for n < 2
  long long count = 0;
};

/// Two-pass mean and unbiased standard deviation.
SampleMoments sample_moments(std::span<const double> values);

}  // namespace ftb
