#include "ftbench/errors.hpp"
#include "ftbench/numerics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <random>

using namespace ftb;

namespace {

Matrix2D random_matrix(DType dtype, Index rows, Index cols, std::mt19937_64& rng) {
  RowMatrixXd v(rows, cols);
  if (is_integer(dtype)) {
    std::uniform_int_distribution<int> d(-128, 127);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = d(rng);
  } else {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = conform(d(rng), dtype);
  }
  return Matrix2D(dtype, std::move(v));
}

std::uint64_t bits_of(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

TEST_CASE("gemm matches worked examples") {
  const auto x = Matrix2D::from_rows(DType::binary64, {{1, 2}, {3, 4}});
  const auto w = Matrix2D::from_rows(DType::binary64, {{5, 6}, {7, 8}});
  const auto y = gemm(x, w, Precision::binary64);
  CHECK(y.bit_equal(Matrix2D::from_rows(DType::binary64, {{19, 22}, {43, 50}})));

  const auto row = Matrix2D::from_rows(DType::binary32, {{0.375, -2.5}});
  CHECK(gemm(row, Matrix2D::identity(DType::binary32, 2), Precision::binary32).bit_equal(row));

  const auto ones = Matrix2D::from_rows(DType::binary64, {{1, 1}});
  const auto w2 = Matrix2D::from_rows(DType::binary64, {{1, 2}, {3, 4}});
  const std::vector<double> bias{1, 1};
  CHECK(gemm(ones, w2, bias, Precision::binary64).bit_equal(Matrix2D::from_rows(DType::binary64, {{5, 7}})));
}

TEST_CASE("gemm rejects bad shapes and narrow accumulation") {
  const auto x = Matrix2D::from_rows(DType::binary32, {{1, 2, 3}});
  const auto w = Matrix2D::from_rows(DType::binary32, {{1, 2}, {3, 4}});
  CHECK_THROWS_AS(gemm(x, w, Precision::binary32), ShapeError);
  const auto x2 = Matrix2D::from_rows(DType::binary32, {{1, 2}});
  CHECK_THROWS_AS(gemm(x2, w, Precision::binary16), std::invalid_argument);
  const std::vector<double> short_bias{1};
  CHECK_THROWS_AS(gemm(x2, w, short_bias, Precision::binary32), ShapeError);
  const auto x64 = Matrix2D::from_rows(DType::binary64, {{1, 2}});
  const auto w64 = Matrix2D::from_rows(DType::binary64, {{1, 2}, {3, 4}});
  CHECK_THROWS_AS(gemm(x64, w64, Precision::binary32), std::invalid_argument);
  const auto xi = Matrix2D::from_rows(DType::int8, {{1, 2}});
  const auto wi = Matrix2D::from_rows(DType::int8, {{1, 2}, {3, 4}});
  CHECK_THROWS_AS(gemm(xi, wi, Precision::binary64), std::invalid_argument);
}

TEST_CASE("binary64 gemm equals the naive triple loop bit-exactly") {
  std::mt19937_64 rng(20240917);
  for (DType dtype : {DType::binary64, DType::binary32, DType::binary16, DType::int8}) {
    for (int trial = 0; trial < 20; ++trial) {
      const int rows = 1 + trial % 5;
      const int inner = 1 + (trial * 7) % 13;
      const int cols = 1 + (trial * 3) % 11;
      const auto x = random_matrix(dtype, rows, inner, rng);
      const auto w = random_matrix(dtype, inner, cols, rng);
      std::vector<double> xs(x.data().begin(), x.data().end());
      std::vector<double> ws(w.data().begin(), w.data().end());
      const auto expected = oracle::gemm_f64(xs, ws, rows, inner, cols);
      if (dtype == DType::int8) {
        // Products are small integers: the exact result is also the binary64 result.
        const auto y = gemm(x, w, Precision::int64_exact);
        CHECK(y.dtype() == DType::int32);
        for (Index i = 0; i < y.size(); ++i) CHECK(y.at(i) == expected[static_cast<std::size_t>(i)]);
      } else {
        // Widen operands to binary64 to compare under binary64 accumulation.
        const Matrix2D xd(DType::binary64, x.values());
        const Matrix2D wd(DType::binary64, w.values());
        const auto y = gemm(xd, wd, Precision::binary64);
        for (Index i = 0; i < y.size(); ++i) CHECK(bits_of(y.at(i)) == bits_of(expected[static_cast<std::size_t>(i)]));
      }
    }
  }
}

TEST_CASE("binary16 gemm accumulates in binary32 and rounds the result") {
  // 2049 is not a binary16 value; the binary32 accumulator holds it and the
  // final rounding takes it to 2048 (ties to even).
  const auto x = Matrix2D::from_rows(DType::binary16, {{2048, 1}});
  const auto w = Matrix2D::from_rows(DType::binary16, {{1}, {1}});
  const auto y = gemm(x, w, Precision::binary32);
  CHECK(y.dtype() == DType::binary16);
  CHECK(y(0, 0) == 2048.0);
  // Accumulating in binary16 itself rounds every partial sum.
  const auto x3 = Matrix2D::from_rows(DType::binary16, {{2048, 1, 1}});
  const auto w3 = Matrix2D::from_rows(DType::binary16, {{1}, {1}, {1}});
  CHECK(gemm(x3, w3, Precision::binary16)(0, 0) == 2048.0);
  CHECK(gemm(x3, w3, Precision::binary32)(0, 0) == 2050.0);
}

TEST_CASE("int8 gemm wraps in int32 like a 32-bit accumulator") {
  RowMatrixXd xv = RowMatrixXd::Constant(1, 1, -128.0);
  RowMatrixXd wv = RowMatrixXd::Constant(1, 1, -128.0);
  const std::vector<double> bias{2147483647.0};
  const auto y = gemm(Matrix2D(DType::int8, xv), Matrix2D(DType::int8, wv), bias, Precision::int64_exact);
  // 16384 + (2^31 - 1) wraps to -2^31 + 16383.
  CHECK(y(0, 0) == -2147483648.0 + 16383.0);
}

TEST_CASE("reductions") {
  const auto m = Matrix2D::from_rows(DType::binary64, {{1, 2}, {3, 4}});
  CHECK(reduce_rows(m) == Eigen::Vector2d(3, 7));
  CHECK(reduce_cols(m) == Eigen::Vector2d(4, 6));
  CHECK(reduce_rows(Matrix2D(DType::binary32, 2, 3)) == Eigen::Vector2d::Zero());
  CHECK(reduce_cols(Matrix2D::identity(DType::binary16, 3)) == Eigen::Vector3d::Ones());
  CHECK_THROWS_AS(reduce_rows(Matrix2D(DType::binary64, 0, 3)), ShapeError);
  CHECK_THROWS_AS(reduce_cols(Matrix2D(DType::binary64, 0, 0)), ShapeError);

  SUBCASE("seeded binary32 8x8 against extended-precision re-summation") {
    std::mt19937_64 rng(8);
    const auto r = random_matrix(DType::binary32, 8, 8, rng);
    const auto rows = reduce_rows(r);
    const auto cols = reduce_cols(r);
    for (Index i = 0; i < 8; ++i) {
      long double sr = 0.0L;
      long double sc = 0.0L;
      for (Index j = 0; j < 8; ++j) {
        sr += r(i, j);
        sc += r(j, i);
      }
      CHECK(rows[i] == static_cast<double>(sr));
      CHECK(cols[i] == static_cast<double>(sc));
    }
  }
}

TEST_CASE("reduction totals agree") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const Index r = 1 + trial % 7;
    const Index c = 1 + trial % 5;
    const auto mi = random_matrix(DType::int8, r, c, rng);
    CHECK(reduce_rows_exact(mi).sum() == reduce_cols_exact(mi).sum());
    const Matrix2D transposed(DType::int8, mi.values().transpose());
    CHECK(reduce_rows_exact(mi) == reduce_cols_exact(transposed));

    const auto mf = random_matrix(DType::binary32, r, c, rng);
    const double a = reduce_rows(mf).sum();
    const double b = reduce_cols(mf).sum();
    double abs_sum = 0.0;
    for (double v : mf.data()) abs_sum += std::fabs(v);
    const double n = static_cast<double>(r * c);
    CHECK(std::fabs(a - b) <= 2.0 * n * 0x1p-53 * abs_sum);
  }
}

TEST_CASE("flip_bit examples") {
  CHECK(flip_bit(1.0, 31, DType::binary32) == -1.0);
  CHECK(flip_bit(4.0, 0, DType::int8) == 5.0);
  CHECK(flip_bit(1.0, 30, DType::binary32) == std::numeric_limits<double>::infinity());
  CHECK(flip_bit(1.0, 15, DType::binary16) == -1.0);
  CHECK(flip_bit(1.0, 10, DType::binary16) == 0.5);
  CHECK(flip_bit(0.0, 7, DType::int8) == -128.0);
  CHECK(flip_bit(1.0, 63, DType::binary64) == -1.0);
  CHECK_THROWS_AS(flip_bit(1.0, 32, DType::binary32), std::out_of_range);
  CHECK_THROWS_AS(flip_bit(1.0, 8, DType::int8), std::out_of_range);
  CHECK_THROWS_AS(flip_bit(1.0, -1, DType::binary16), std::out_of_range);
}

TEST_CASE("flip_bit is an encoding-exact involution for every bit and dtype") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> mag(-1e4, 1e4);
  const double special[] = {0.0, -0.0, std::numeric_limits<double>::infinity(), std::nan(""), 65504.0, 0x1p-24};
  for (DType dtype : {DType::binary64, DType::binary32, DType::binary16, DType::int8, DType::int32}) {
    std::vector<double> values;
    for (int i = 0; i < 40; ++i) values.push_back(conform(mag(rng), dtype));
    if (!is_integer(dtype))
      for (double s : special) values.push_back(conform(s, dtype));
    for (double v : values) {
      for (int bit = 0; bit < storage_bits(dtype); ++bit) {
        const double once = flip_bit(v, bit, dtype);
        CHECK(representable(once, dtype));
        CHECK((encode(once, dtype) ^ encode(v, dtype)) == (std::uint64_t{1} << bit));
        CHECK(encode(flip_bit(once, bit, dtype), dtype) == encode(v, dtype));
      }
    }
  }
}

TEST_CASE("NaN payloads survive flips") {
  // binary16 NaN with payload 0x155 (signalling) and binary32 NaN payloads.
  const double h = decode_binary16(0x7D55);
  CHECK(std::isnan(h));
  CHECK(encode(h, DType::binary16) == 0x7D55);
  CHECK(encode(flip_bit(flip_bit(h, 3, DType::binary16), 3, DType::binary16), DType::binary16) == 0x7D55);
  const double f = decode(0x7FA00001u, DType::binary32);
  CHECK(encode(f, DType::binary32) == 0x7FA00001u);
  CHECK(encode(flip_bit(f, 0, DType::binary32), DType::binary32) == 0x7FA00000u);
}

TEST_CASE("round_to examples") {
  CHECK(round_to(1.0, Precision::binary16) == 1.0);
  CHECK(round_to(65520.0, Precision::binary16) == std::numeric_limits<double>::infinity());
  CHECK(round_to(-65520.0, Precision::binary16) == -std::numeric_limits<double>::infinity());
  CHECK(round_to(65519.99, Precision::binary16) == 65504.0);
  CHECK(round_to(0x1p-25, Precision::binary16) == 0.0);
  CHECK(round_to(0x1.8p-25, Precision::binary16) == 0x1p-24);
  CHECK(std::isnan(round_to(std::nan(""), Precision::binary16)));
  CHECK(round_to(1.0 + 0x1p-30, Precision::binary32) == 1.0);
  CHECK_THROWS_AS(round_to(1.0, Precision::int64_exact), std::invalid_argument);
}

TEST_CASE("binary16 rounding agrees with the enumerated-lattice oracle") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> exponent(-30, 17);
  const auto& lat = oracle::binary16_lattice();
  std::vector<double> probes;
  for (int i = 0; i < 20000; ++i) {
    const double v = std::ldexp(1.0 + unit(rng), exponent(rng));
    probes.push_back(i % 2 ? v : -v);
  }
  // Exact midpoints exercise ties-to-even, including the overflow tie.
  for (std::size_t i = 0; i + 1 < lat.size(); i += 37) probes.push_back(0.5 * (lat[i] + lat[i + 1]));
  probes.push_back(0.5 * (lat.back() + 65536.0));
  probes.push_back(std::nextafter(0.5 * (lat.back() + 65536.0), 0.0));
  for (double p : probes) {
    const double got = round_to(p, Precision::binary16);
    const double want = oracle::round_binary16(p);
    CHECK_MESSAGE(bits_of(got) == bits_of(want), "probe " << p);
  }
}

TEST_CASE("round_to is idempotent") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> exponent(-40, 140);
  for (int i = 0; i < 5000; ++i) {
    const double v = std::ldexp(unit(rng), exponent(rng));
    for (Precision p : {Precision::binary16, Precision::binary32, Precision::binary64}) {
      const double once = round_to(v, p);
      CHECK(bits_of(round_to(once, p)) == bits_of(once));
    }
  }
}

TEST_CASE("Matrix2D enforces representability") {
  CHECK_THROWS_AS(Matrix2D::from_rows(DType::int8, {{128}}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix2D::from_rows(DType::binary16, {{0.1}}), std::invalid_argument);
  auto m = Matrix2D::from_rows(DType::binary32, {{1, 2}});
  CHECK_THROWS_AS(m.set(0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(m.set(5, 1.0), ShapeError);
  m.set(1, -0.5);
  CHECK(m(0, 1) == -0.5);
  CHECK_THROWS_AS(Matrix2D::from_rows(DType::binary64, {{1, 2}, {3}}), ShapeError);
}

TEST_CASE("precision-aware sums and dots") {
  const std::vector<double> v{2048, 1, 1};
  CHECK(sum_in(v, Precision::binary16) == 2048.0);
  CHECK(sum_in(v, Precision::binary32) == 2050.0);
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> b{4, 5, 6};
  CHECK(dot_in(a, b, Precision::binary64) == 32.0);
  CHECK(dot_in(a, b, Precision::int64_exact) == 32.0);
  CHECK_THROWS_AS(dot_in(a, std::vector<double>{1.0}, Precision::binary64), ShapeError);
}
