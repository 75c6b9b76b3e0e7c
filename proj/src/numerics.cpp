#include "ftbench/numerics.hpp"

#include "ftbench/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ftb {

namespace {

constexpr std::uint64_t kF64ExpMask = 0x7FF0000000000000ULL;
constexpr std::uint64_t kF64MantMask = 0x000FFFFFFFFFFFFFULL;

std::uint32_t encode_binary32(double value) {
  if (std::isnan(value)) {
    const auto bits = std::bit_cast<std::uint64_t>(value);
    std::uint32_t payload = static_cast<std::uint32_t>((bits & kF64MantMask) >> 29);
    if (payload == 0) payload = 0x00400000u;
    return static_cast<std::uint32_t>((bits >> 32) & 0x80000000u) | 0x7F800000u | payload;
  }
  return std::bit_cast<std::uint32_t>(static_cast<float>(value));
}

double decode_binary32(std::uint32_t bits) {
  if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0) {
    const std::uint64_t sign = static_cast<std::uint64_t>(bits & 0x80000000u) << 32;
    const std::uint64_t payload = static_cast<std::uint64_t>(bits & 0x007FFFFFu) << 29;
    return std::bit_cast<double>(sign | kF64ExpMask | payload);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

template <Precision P>
inline double rnd(double v) {
  if constexpr (P == Precision::binary64 || P == Precision::int64_exact) {
    return v;
  } else if constexpr (P == Precision::binary32) {
    return static_cast<double>(static_cast<float>(v));
  } else {
    return decode_binary16(encode_binary16(v));
  }
}

template <Precision P>
double sum_impl(std::span<const double> values) {
  double acc = 0.0;
  for (double v : values) acc = rnd<P>(acc + rnd<P>(v));
  return acc;
}

template <Precision P>
double dot_impl(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc = rnd<P>(acc + rnd<P>(rnd<P>(a[k]) * rnd<P>(b[k])));
  return acc;
}

// Float GEMM with a native accumulator type. Iterating k in the middle loop
// keeps one accumulator per output element summed in ascending k.
template <typename Acc>
RowMatrix<Acc> gemm_native(const Matrix2D& x, const Matrix2D& wt) {
  const RowMatrix<Acc> xs = x.values().cast<Acc>();
  const RowMatrix<Acc> ws = wt.values().cast<Acc>();
  const Index out = ws.cols();
  RowMatrix<Acc> acc = RowMatrix<Acc>::Zero(xs.rows(), out);
  for (Index b = 0; b < xs.rows(); ++b) {
    Acc* dst = acc.data() + b * out;
    for (Index k = 0; k < xs.cols(); ++k) {
      const Acc xv = xs(b, k);
      const Acc* w = ws.data() + k * out;
      for (Index o = 0; o < out; ++o) dst[o] = dst[o] + xv * w[o];
    }
  }
  return acc;
}

RowMatrixXd gemm_binary16(const Matrix2D& x, const Matrix2D& wt) {
  RowMatrixXd acc = RowMatrixXd::Zero(x.rows(), wt.cols());
  for (Index b = 0; b < x.rows(); ++b)
    for (Index k = 0; k < x.cols(); ++k)
      for (Index o = 0; o < wt.cols(); ++o)
        acc(b, o) = rnd<Precision::binary16>(acc(b, o) + rnd<Precision::binary16>(x(b, k) * wt(k, o)));
  return acc;
}

}  // namespace

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::binary64: return "binary64";
    case DType::binary32: return "binary32";
    case DType::binary16: return "binary16";
    case DType::int8: return "int8";
    case DType::int32: return "int32";
  }
  return "unknown";
}

std::string_view to_string(Precision precision) {
  switch (precision) {
    case Precision::binary16: return "binary16";
    case Precision::binary32: return "binary32";
    case Precision::binary64: return "binary64";
    case Precision::int64_exact: return "int64_exact";
  }
  return "unknown";
}

DType parse_dtype(std::string_view name) {
  for (DType d : {DType::binary64, DType::binary32, DType::binary16, DType::int8, DType::int32})
    if (to_string(d) == name) return d;
  throw std::invalid_argument("unknown dtype '" + std::string(name) + "'");
}

Precision parse_precision(std::string_view name) {
  for (Precision p : {Precision::binary16, Precision::binary32, Precision::binary64, Precision::int64_exact})
    if (to_string(p) == name) return p;
  throw std::invalid_argument("unknown precision '" + std::string(name) + "'");
}

bool is_integer(DType dtype) { return dtype == DType::int8 || dtype == DType::int32; }

bool is_floating(Precision precision) { return precision != Precision::int64_exact; }

int storage_bits(DType dtype) {
  switch (dtype) {
    case DType::binary64: return 64;
    case DType::binary32: return 32;
    case DType::binary16: return 16;
    case DType::int8: return 8;
    case DType::int32: return 32;
  }
  return 0;
}

int precision_bits(Precision precision) {
  switch (precision) {
    case Precision::binary16: return 16;
    case Precision::binary32: return 32;
    default: return 64;
  }
}

Precision native_precision(DType dtype) {
  switch (dtype) {
    case DType::binary64: return Precision::binary64;
    case DType::binary32: return Precision::binary32;
    case DType::binary16: return Precision::binary16;
    default: return Precision::int64_exact;
  }
}

Precision default_accumulation(DType dtype) {
  if (dtype == DType::binary16) return Precision::binary32;
  return native_precision(dtype);
}

bool accumulation_allowed(Precision accum, DType dtype) {
  if (is_integer(dtype)) return accum == Precision::int64_exact;
  if (accum == Precision::int64_exact) return false;
  return precision_bits(accum) >= storage_bits(dtype);
}

double max_finite(Precision precision) {
  switch (precision) {
    case Precision::binary16: return 65504.0;
    case Precision::binary32: return static_cast<double>(std::numeric_limits<float>::max());
    case Precision::binary64: return std::numeric_limits<double>::max();
    case Precision::int64_exact: return static_cast<double>(std::numeric_limits<std::int64_t>::max());
  }
  return 0.0;
}

double unit_roundoff(Precision precision) {
  switch (precision) {
    case Precision::binary16: return 0x1p-11;
    case Precision::binary32: return 0x1p-24;
    case Precision::binary64: return 0x1p-53;
    case Precision::int64_exact: return 0.0;
  }
  return 0.0;
}

std::uint16_t encode_binary16(double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  const auto sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000u);
  if (std::isnan(value)) {
    auto payload = static_cast<std::uint16_t>((bits >> 42) & 0x3FFu);
    if (payload == 0) payload = 0x200u;
    return sign | 0x7C00u | payload;
  }
  const double a = std::fabs(value);
  if (std::isinf(a)) return sign | 0x7C00u;
  if (a == 0.0) return sign;
  int e = std::ilogb(a);
  if (e < -14) {
    // Subnormal lattice k * 2^-24; k == 1024 lands on the smallest normal.
    const double k = std::nearbyint(a * 0x1p24);
    return sign | static_cast<std::uint16_t>(k);
  }
  if (e > 15) return sign | 0x7C00u;
  double k = std::nearbyint(std::ldexp(a, 10 - e));
  if (k == 2048.0) {
    k = 1024.0;
    if (++e > 15) return sign | 0x7C00u;
  }
  return sign | static_cast<std::uint16_t>((e + 15) << 10) | static_cast<std::uint16_t>(k - 1024.0);
}

double decode_binary16(std::uint16_t bits) {
  const bool negative = (bits & 0x8000u) != 0;
  const int exponent = (bits >> 10) & 0x1F;
  const int mantissa = bits & 0x3FF;
  if (exponent == 0x1F) {
    if (mantissa == 0) return negative ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    const std::uint64_t sign = negative ? 0x8000000000000000ULL : 0;
    return std::bit_cast<double>(sign | kF64ExpMask | (static_cast<std::uint64_t>(mantissa) << 42));
  }
  const double magnitude = exponent == 0 ? std::ldexp(static_cast<double>(mantissa), -24)
                                         : std::ldexp(static_cast<double>(mantissa + 1024), exponent - 25);
  return negative ? -magnitude : magnitude;
}

std::uint64_t encode(double value, DType dtype) {
  switch (dtype) {
    case DType::binary64: return std::bit_cast<std::uint64_t>(value);
    case DType::binary32: return encode_binary32(value);
    case DType::binary16: return encode_binary16(value);
    case DType::int8: return static_cast<std::uint8_t>(static_cast<std::int8_t>(value));
    case DType::int32: return static_cast<std::uint32_t>(static_cast<std::int32_t>(value));
  }
  return 0;
}

double decode(std::uint64_t bits, DType dtype) {
  switch (dtype) {
    case DType::binary64: return std::bit_cast<double>(bits);
    case DType::binary32: return decode_binary32(static_cast<std::uint32_t>(bits));
    case DType::binary16: return decode_binary16(static_cast<std::uint16_t>(bits));
    case DType::int8: return static_cast<double>(static_cast<std::int8_t>(static_cast<std::uint8_t>(bits)));
    case DType::int32: return static_cast<double>(static_cast<std::int32_t>(static_cast<std::uint32_t>(bits)));
  }
  return 0.0;
}

bool representable(double value, DType dtype) {
  switch (dtype) {
    case DType::binary64: return true;
    case DType::binary32:
      return std::isnan(value) || static_cast<double>(static_cast<float>(value)) == value;
    case DType::binary16:
      return std::isnan(value) || decode_binary16(encode_binary16(value)) == value;
    case DType::int8:
      return std::trunc(value) == value && value >= -128.0 && value <= 127.0;
    case DType::int32:
      return std::trunc(value) == value && value >= -2147483648.0 && value <= 2147483647.0;
  }
  return false;
}

double round_to(double value, Precision precision) {
  switch (precision) {
    case Precision::binary64: return value;
    case Precision::binary32: return static_cast<double>(static_cast<float>(value));
    case Precision::binary16: return decode_binary16(encode_binary16(value));
    case Precision::int64_exact: break;
  }
  throw std::invalid_argument("round_to requires a floating precision");
}

double conform(double value, DType dtype) {
  switch (dtype) {
    case DType::binary64:
    case DType::binary32:
    case DType::binary16: return round_to(value, native_precision(dtype));
    case DType::int8: return std::clamp(std::nearbyint(value), -128.0, 127.0);
    case DType::int32: return std::clamp(std::nearbyint(value), -2147483648.0, 2147483647.0);
  }
  return value;
}

double flip_bit(double value, int bit_index, DType dtype) {
  if (bit_index < 0 || bit_index >= storage_bits(dtype))
    throw std::out_of_range("bit index " + std::to_string(bit_index) + " out of range for " +
                            std::string(to_string(dtype)));
  return decode(encode(value, dtype) ^ (std::uint64_t{1} << bit_index), dtype);
}

BitRange mantissa_bits(DType dtype) {
  switch (dtype) {
    case DType::binary64: return {0, 51};
    case DType::binary32: return {0, 22};
    case DType::binary16: return {0, 9};
    default: throw std::invalid_argument("integer dtypes have no mantissa field");
  }
}

BitRange exponent_bits(DType dtype) {
  switch (dtype) {
    case DType::binary64: return {52, 62};
    case DType::binary32: return {23, 30};
    case DType::binary16: return {10, 14};
    default: throw std::invalid_argument("integer dtypes have no exponent field");
  }
}

int sign_bit(DType dtype) { return storage_bits(dtype) - 1; }

// Matrix2D -------------------------------------------------------------------

Matrix2D::Matrix2D(DType dtype, Index rows, Index cols)
    : dtype_(dtype), values_(RowMatrixXd::Zero(rows, cols)) {
  if (rows < 0 || cols < 0) throw ShapeError("negative matrix dimensions");
}

Matrix2D::Matrix2D(DType dtype, RowMatrixXd values) : dtype_(dtype), values_(std::move(values)) {
  for (Index i = 0; i < values_.size(); ++i)
    if (!representable(values_.data()[i], dtype_))
      throw std::invalid_argument("element " + std::to_string(i) + " is not representable in " +
                                  std::string(to_string(dtype_)));
}

Matrix2D Matrix2D::from_rows(DType dtype, std::initializer_list<std::initializer_list<double>> rows) {
  const Index r = static_cast<Index>(rows.size());
  const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  RowMatrixXd values(r, c);
  Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != c) throw ShapeError("ragged row list");
    Index j = 0;
    for (double v : row) values(i, j++) = v;
    ++i;
  }
  return Matrix2D(dtype, std::move(values));
}

Matrix2D Matrix2D::adopt(DType dtype, RowMatrixXd values) {
  Matrix2D out;
  out.dtype_ = dtype;
  out.values_ = std::move(values);
  return out;
}

Matrix2D Matrix2D::identity(DType dtype, Index n) { return Matrix2D(dtype, RowMatrixXd::Identity(n, n)); }

void Matrix2D::set(Index r, Index c, double value) {
  if (r < 0 || r >= rows() || c < 0 || c >= cols()) throw ShapeError("element index out of range");
  set(r * cols() + c, value);
}

void Matrix2D::set(Index flat, double value) {
  if (flat < 0 || flat >= size()) throw ShapeError("flat index " + std::to_string(flat) + " out of range");
  if (!representable(value, dtype_))
    throw std::invalid_argument("value not representable in " + std::string(to_string(dtype_)));
  values_.data()[flat] = value;
}

Matrix2D Matrix2D::row(Index r) const {
  if (r < 0 || r >= rows()) throw ShapeError("row index out of range");
  Matrix2D out;
  out.dtype_ = dtype_;
  out.values_ = values_.row(r);
  return out;
}

bool Matrix2D::bit_equal(const Matrix2D& other) const {
  if (dtype_ != other.dtype_ || rows() != other.rows() || cols() != other.cols()) return false;
  for (Index i = 0; i < size(); ++i)
    if (std::bit_cast<std::uint64_t>(at(i)) != std::bit_cast<std::uint64_t>(other.at(i))) return false;
  return true;
}

// Kernels --------------------------------------------------------------------

Matrix2D gemm(const Matrix2D& x, const Matrix2D& wt, Precision accum) { return gemm(x, wt, {}, accum); }

Matrix2D gemm(const Matrix2D& x, const Matrix2D& wt, std::span<const double> bias, Precision accum) {
  if (x.cols() != wt.rows())
    throw ShapeError("gemm: X is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " but Wt is " +
                     std::to_string(wt.rows()) + "x" + std::to_string(wt.cols()));
  if (x.dtype() != wt.dtype()) throw ShapeError("gemm: operand dtypes differ");
  if (!bias.empty() && static_cast<Index>(bias.size()) != wt.cols())
    throw ShapeError("gemm: bias length " + std::to_string(bias.size()) + " != " + std::to_string(wt.cols()));
  const DType dtype = x.dtype();
  if (!accumulation_allowed(accum, dtype))
    throw std::invalid_argument("gemm: accumulation precision " + std::string(to_string(accum)) +
                                " is narrower than or incompatible with " + std::string(to_string(dtype)));
  if (dtype == DType::int32) throw std::invalid_argument("gemm: int32 operands are not supported");

  const Index batch = x.rows();
  const Index out = wt.cols();

  if (dtype == DType::int8) {
    const RowMatrix<std::int64_t> xs = x.values().cast<std::int64_t>();
    const RowMatrix<std::int64_t> ws = wt.values().cast<std::int64_t>();
    RowMatrix<std::int64_t> acc = RowMatrix<std::int64_t>::Zero(batch, out);
    for (Index b = 0; b < batch; ++b)
      for (Index k = 0; k < xs.cols(); ++k) {
        const std::int64_t xv = xs(b, k);
        for (Index o = 0; o < out; ++o) acc(b, o) += xv * ws(k, o);
      }
    RowMatrixXd y(batch, out);
    for (Index b = 0; b < batch; ++b)
      for (Index o = 0; o < out; ++o) {
        std::int64_t v = acc(b, o);
        if (!bias.empty()) v += static_cast<std::int64_t>(bias[o]);
        y(b, o) = static_cast<double>(static_cast<std::int32_t>(static_cast<std::uint32_t>(v)));
      }
    return Matrix2D::adopt(DType::int32, std::move(y));
  }

  RowMatrixXd y(batch, out);
  const Precision out_precision = native_precision(dtype);
  auto finish = [&](auto&& acc_at) {
    for (Index b = 0; b < batch; ++b)
      for (Index o = 0; o < out; ++o) {
        double v = acc_at(b, o);
        if (!bias.empty()) v = add_in(v, bias[o], accum);
        y(b, o) = round_to(v, out_precision);
      }
  };
  switch (accum) {
    case Precision::binary64: {
      const RowMatrix<double> acc = gemm_native<double>(x, wt);
      finish([&](Index b, Index o) { return acc(b, o); });
      break;
    }
    case Precision::binary32: {
      const RowMatrix<float> acc = gemm_native<float>(x, wt);
      finish([&](Index b, Index o) { return static_cast<double>(acc(b, o)); });
      break;
    }
    case Precision::binary16: {
      const RowMatrixXd acc = gemm_binary16(x, wt);
      finish([&](Index b, Index o) { return acc(b, o); });
      break;
    }
    case Precision::int64_exact: break;
  }
  return Matrix2D::adopt(dtype, std::move(y));
}

Eigen::VectorXd reduce_rows(const Matrix2D& m) {
  if (m.empty()) throw ShapeError("reduce_rows: empty matrix");
  if (is_integer(m.dtype())) return reduce_rows_exact(m).cast<double>();
  Eigen::VectorXd s(m.rows());
  for (Index b = 0; b < m.rows(); ++b) {
    double acc = 0.0;
    for (Index j = 0; j < m.cols(); ++j) acc += m(b, j);
    s[b] = acc;
  }
  return s;
}

Eigen::VectorXd reduce_cols(const Matrix2D& m) {
  if (m.empty()) throw ShapeError("reduce_cols: empty matrix");
  if (is_integer(m.dtype())) return reduce_cols_exact(m).cast<double>();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m.cols());
  for (Index b = 0; b < m.rows(); ++b)
    for (Index j = 0; j < m.cols(); ++j) s[j] += m(b, j);
  return s;
}

VectorXi64 reduce_rows_exact(const Matrix2D& m) {
  if (m.empty()) throw ShapeError("reduce_rows: empty matrix");
  if (!is_integer(m.dtype())) throw std::invalid_argument("exact reduction requires an integer dtype");
  VectorXi64 s = VectorXi64::Zero(m.rows());
  for (Index b = 0; b < m.rows(); ++b)
    for (Index j = 0; j < m.cols(); ++j) s[b] += static_cast<std::int64_t>(m(b, j));
  return s;
}

VectorXi64 reduce_cols_exact(const Matrix2D& m) {
  if (m.empty()) throw ShapeError("reduce_cols: empty matrix");
  if (!is_integer(m.dtype())) throw std::invalid_argument("exact reduction requires an integer dtype");
  VectorXi64 s = VectorXi64::Zero(m.cols());
  for (Index b = 0; b < m.rows(); ++b)
    for (Index j = 0; j < m.cols(); ++j) s[j] += static_cast<std::int64_t>(m(b, j));
  return s;
}

double sum_in(std::span<const double> values, Precision precision) {
  switch (precision) {
    case Precision::binary16: return sum_impl<Precision::binary16>(values);
    case Precision::binary32: return sum_impl<Precision::binary32>(values);
    case Precision::binary64: return sum_impl<Precision::binary64>(values);
    case Precision::int64_exact: {
      std::int64_t acc = 0;
      for (double v : values) acc += static_cast<std::int64_t>(v);
      return static_cast<double>(acc);
    }
  }
  return 0.0;
}

double dot_in(std::span<const double> a, std::span<const double> b, Precision precision) {
  if (a.size() != b.size()) throw ShapeError("dot_in: length mismatch");
  switch (precision) {
    case Precision::binary16: return dot_impl<Precision::binary16>(a, b);
    case Precision::binary32: return dot_impl<Precision::binary32>(a, b);
    case Precision::binary64: return dot_impl<Precision::binary64>(a, b);
    case Precision::int64_exact: {
      std::int64_t acc = 0;
      for (std::size_t k = 0; k < a.size(); ++k)
        acc += static_cast<std::int64_t>(a[k]) * static_cast<std::int64_t>(b[k]);
      return static_cast<double>(acc);
    }
  }
  return 0.0;
}

double add_in(double a, double b, Precision precision) {
  if (precision == Precision::int64_exact) return a + b;
  return round_to(round_to(a, precision) + round_to(b, precision), precision);
}

double mul_in(double a, double b, Precision precision) {
  if (precision == Precision::int64_exact) return a * b;
  return round_to(round_to(a, precision) * round_to(b, precision), precision);
}

}  // namespace ftb
