#pragma once

// Independent reference implementations used only by tests. None of these
// call into the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

/// Naive triple loop in binary64, k ascending.
inline std::vector<double> gemm_f64(const std::vector<double>& x, const std::vector<double>& w, int rows, int inner,
                                    int cols, const std::vector<double>& bias = {}) {
  std::vector<double> y(static_cast<std::size_t>(rows * cols), 0.0);
  for (int b = 0; b < rows; ++b)
    for (int o = 0; o < cols; ++o) {
      double acc = 0.0;
      for (int k = 0; k < inner; ++k) acc += x[b * inner + k] * w[k * cols + o];
      if (!bias.empty()) acc += bias[o];
      y[b * cols + o] = acc;
    }
  return y;
}

/// Every non-negative finite binary16 value, ascending, by direct field decode.
inline const std::vector<double>& binary16_lattice() {
  static const std::vector<double> lattice = [] {
    std::vector<double> v;
    for (int bits = 0; bits < 0x7C00; ++bits) {
      const int e = bits >> 10;
      const int m = bits & 0x3FF;
      v.push_back(e == 0 ? m * std::pow(2.0, -24) : (1024 + m) * std::pow(2.0, e - 25));
    }
    return v;
  }();
  return lattice;
}

/// Round-to-nearest-even into binary16 by searching the enumerated lattice.
/// 65536 acts as the (even) successor of the largest finite value; landing on
/// it means overflow to infinity.
inline double round_binary16(double x) {
  if (std::isnan(x)) return x;
  const double a = std::fabs(x);
  const auto& lat = binary16_lattice();
  double result;
  if (a >= 65536.0) {
    result = std::numeric_limits<double>::infinity();
  } else {
    auto hi = std::lower_bound(lat.begin(), lat.end(), a);
    if (hi == lat.end()) {
      // between 65504 and 65536
      const double lo = lat.back();
      const double up = 65536.0;
      if (a - lo < up - a) result = lo;
      else result = std::numeric_limits<double>::infinity();  // tie goes to even 65536
    } else if (*hi == a) {
      result = a;
    } else {
      const auto lo = hi - 1;
      const double dlo = a - *lo;
      const double dhi = *hi - a;
      if (dlo < dhi) result = *lo;
      else if (dhi < dlo) result = *hi;
      else result = ((lo - lat.begin()) % 2 == 0) ? *lo : *hi;
    }
  }
  return std::signbit(x) ? -result : result;
}

}  // namespace oracle
