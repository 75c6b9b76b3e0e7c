#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ftb {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXd = RowMatrix<double>;
using VectorXi64 = Vector<std::int64_t>;

/// Element type of a Matrix2D. Tag values are the on-disk dtype tags of the
/// weight container.
enum class DType : std::uint8_t {
  binary64 = 0,
  binary32 = 1,
  binary16 = 2,  // emulated: binary64 values constrained to the binary16 lattice
  int8 = 3,
  int32 = 4,
};

/// Arithmetic precision for accumulation and checksum evaluation.
enum class Precision : std::uint8_t { binary16, binary32, binary64, int64_exact };

std::string_view to_string(DType dtype);
std::string_view to_string(Precision precision);
DType parse_dtype(std::string_view name);
Precision parse_precision(std::string_view name);

bool is_integer(DType dtype);
bool is_floating(Precision precision);
int storage_bits(DType dtype);

/// Bit width of a floating precision (16/32/64); 64 for int64_exact.
int precision_bits(Precision precision);

/// Precision that represents every value of `dtype` exactly.
Precision native_precision(DType dtype);

/// Accumulation precision used by model GEMMs: binary16 operands accumulate in
/// binary32, integers in exact 64-bit arithmetic narrowed to int32.
Precision default_accumulation(DType dtype);

/// True when `accum` may legally accumulate products of `dtype` operands.
bool accumulation_allowed(Precision accum, DType dtype);

/// Largest finite value of a floating precision.
double max_finite(Precision precision);

/// Unit roundoff (half an ULP at 1.0) of a floating precision.
double unit_roundoff(Precision precision);

// IEEE-754 helpers -----------------------------------------------------------

/// binary64 -> binary16 encoding with round-to-nearest-even. Overflow gives
/// +-Inf, NaN keeps the top ten payload bits.
std::uint16_t encode_binary16(double value);
double decode_binary16(std::uint16_t bits);

/// Storage encoding of `value` in `dtype` (low storage_bits() bits used).
/// `value` must be representable.
std::uint64_t encode(double value, DType dtype);
double decode(std::uint64_t bits, DType dtype);

bool representable(double value, DType dtype);

/// Round to nearest-even in `precision`, widened back to binary64.
double round_to(double value, Precision precision);

/// Rounds a binary64 result into `dtype`: RNE for floats, nearest with
/// saturation for integers.
double conform(double value, DType dtype);

/// Flip bit `bit_index` of the storage encoding of `value`.
/// Throws std::out_of_range when the index exceeds the storage width.
double flip_bit(double value, int bit_index, DType dtype);

struct BitRange {
  int first = 0;  // inclusive
  int last = 0;   // inclusive
  int count() const { return last - first + 1; }
};

BitRange mantissa_bits(DType dtype);
BitRange exponent_bits(DType dtype);
int sign_bit(DType dtype);

// Matrix2D -------------------------------------------------------------------

/// Dense row-major matrix with an element-type tag. Elements are stored as
/// binary64 and always representable in the tagged dtype.
class Matrix2D {
 public:
  Matrix2D() = default;
  Matrix2D(DType dtype, Index rows, Index cols);
  Matrix2D(DType dtype, RowMatrixXd values);

  static Matrix2D from_rows(DType dtype, std::initializer_list<std::initializer_list<double>> rows);
  static Matrix2D identity(DType dtype, Index n);
  /// Takes `values` without the representability scan; kernels that already
  /// rounded into `dtype` use this.
  static Matrix2D adopt(DType dtype, RowMatrixXd values);

  DType dtype() const { return dtype_; }
  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  double operator()(Index r, Index c) const { return values_(r, c); }
  double at(Index flat) const { return values_.data()[flat]; }

  /// Checked element writes: the value must be representable in dtype().
  void set(Index r, Index c, double value);
  void set(Index flat, double value);

  const RowMatrixXd& values() const { return values_; }
  std::span<const double> data() const { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<const double> row_span(Index r) const {
    return {values_.data() + r * values_.cols(), static_cast<std::size_t>(values_.cols())};
  }

  Matrix2D row(Index r) const;

  /// Encoding-exact equality (distinguishes -0.0 from 0.0 and NaN payloads).
  bool bit_equal(const Matrix2D& other) const;

 private:
  DType dtype_ = DType::binary64;
  RowMatrixXd values_;
};

// Kernels --------------------------------------------------------------------

/// Y = X * Wt + bias accumulated in `accum`, k ascending with one accumulator
/// per output. Float results are rounded into X's dtype; int8 operands give
/// int32 results (wrapping). An empty `bias` means no bias.
Matrix2D gemm(const Matrix2D& x, const Matrix2D& wt, std::span<const double> bias, Precision accum);
Matrix2D gemm(const Matrix2D& x, const Matrix2D& wt, Precision accum);

/// s[b] = sum_j M[b,j] in binary64, ascending j. Integer dtypes are summed in
/// int64 (exact while |s| < 2^53 after conversion).
Eigen::VectorXd reduce_rows(const Matrix2D& m);
/// s[j] = sum_b M[b,j] in binary64, ascending b.
Eigen::VectorXd reduce_cols(const Matrix2D& m);

/// Exact int64 reductions for integer dtypes.
VectorXi64 reduce_rows_exact(const Matrix2D& m);
VectorXi64 reduce_cols_exact(const Matrix2D& m);

/// Sum of `values` in `precision`, ascending index, rounding after each add.
double sum_in(std::span<const double> values, Precision precision);

/// sum_k a[k]*b[k] in `precision`, ascending k, product and sum rounded.
double dot_in(std::span<const double> a, std::span<const double> b, Precision precision);

/// a + b and a * b rounded to `precision`.
double add_in(double a, double b, Precision precision);
double mul_in(double a, double b, Precision precision);

}  // namespace ftb
