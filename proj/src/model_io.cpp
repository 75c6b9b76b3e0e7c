#include "ftbench/errors.hpp"
#include "ftbench/model.hpp"

#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_map>

namespace ftb {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'B', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kArchTensor = "__arch__";

std::size_t element_bytes(DType dtype) { return static_cast<std::size_t>(storage_bits(dtype) / 8); }

class ByteWriter {
 public:
  void put(std::uint64_t value, std::size_t bytes) {
    for (std::size_t i = 0; i < bytes; ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xFFu));
  }
  void put_bytes(const char* data, std::size_t n) { buf_.insert(buf_.end(), data, data + n); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  std::size_t remaining() const { return buf_.size() - pos_; }

  bool get(std::uint64_t& out, std::size_t bytes) {
    if (remaining() < bytes) return false;
    out = 0;
    for (std::size_t i = 0; i < bytes; ++i)
      out |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return true;
  }

  bool get_string(std::string& out, std::size_t n) {
    if (remaining() < n) return false;
    out.assign(buf_.data() + pos_, n);
    pos_ += n;
    return true;
  }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

NamedTensor tensor_from(const std::string& name, const Matrix2D& m) {
  NamedTensor t;
  t.name = name;
  t.dtype = m.dtype();
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.assign(m.data().begin(), m.data().end());
  return t;
}

NamedTensor tensor_from(const std::string& name, DType dtype, const Eigen::VectorXd& v) {
  NamedTensor t;
  t.name = name;
  t.dtype = dtype;
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

DType bias_dtype(DType model_dtype) { return is_integer(model_dtype) ? DType::int32 : model_dtype; }

std::int32_t as_i32(std::uint32_t bits) { return static_cast<std::int32_t>(bits); }

}  // namespace

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put(kVersion, 4);
  w.put(tensors.size(), 4);
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + t.name);
    if (t.dims.size() > 255) throw FormatError("tensor rank too large: " + t.name);
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.values.size()) throw FormatError("tensor '" + t.name + "' dims do not match its payload");
    w.put(t.name.size(), 2);
    w.put_bytes(t.name.data(), t.name.size());
    w.put(static_cast<std::uint8_t>(t.dtype), 1);
    w.put(t.dims.size(), 1);
    for (auto d : t.dims) w.put(d, 4);
    const std::size_t bytes = element_bytes(t.dtype);
    for (double v : t.values) {
      if (!representable(v, t.dtype)) throw FormatError("tensor '" + t.name + "' holds a value outside its dtype");
      w.put(encode(v, t.dtype), bytes);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  ByteReader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  std::string magic;
  if (!r.get_string(magic, 4) || magic != std::string(kMagic, 4)) throw FormatError("bad magic");
  std::uint64_t version = 0;
  std::uint64_t count = 0;
  if (!r.get(version, 4)) throw FormatError("truncated header");
  if (version != kVersion) throw FormatError("version mismatch: file has " + std::to_string(version) + ", expected 1");
  if (!r.get(count, 4)) throw FormatError("truncated header");

  std::vector<NamedTensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint64_t name_len = 0;
    std::uint64_t tag = 0;
    std::uint64_t rank = 0;
    if (!r.get(name_len, 2) || !r.get_string(t.name, name_len))
      throw FormatError("truncated header of tensor #" + std::to_string(i));
    if (!r.get(tag, 1) || !r.get(rank, 1)) throw FormatError("truncated header of tensor '" + t.name + "'");
    if (tag > static_cast<std::uint64_t>(DType::int32)) throw FormatError("bad dtype tag in tensor '" + t.name + "'");
    t.dtype = static_cast<DType>(tag);
    std::uint64_t elements = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      std::uint64_t dim = 0;
      if (!r.get(dim, 4)) throw FormatError("truncated header of tensor '" + t.name + "'");
      t.dims.push_back(static_cast<std::uint32_t>(dim));
      if (dim != 0 && elements > (std::uint64_t{1} << 48) / dim)
        throw FormatError("dim overflow in tensor '" + t.name + "'");
      elements *= dim;
    }
    const std::size_t bytes = element_bytes(t.dtype);
    if (elements > r.remaining() / bytes) throw FormatError("truncated payload in tensor '" + t.name + "'");
    t.values.resize(static_cast<std::size_t>(elements));
    for (auto& v : t.values) {
      std::uint64_t bits = 0;
      r.get(bits, bytes);
      v = decode(bits, t.dtype);
    }
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save_weights(const std::filesystem::path& path, const ModelGraph& model) {
  std::vector<NamedTensor> tensors;
  NamedTensor arch;
  arch.name = kArchTensor;
  arch.dtype = DType::int32;
  arch.dims = {8};
  arch.values = {static_cast<double>(model.blocks),
                 static_cast<double>(model.dim),
                 static_cast<double>(model.tokens),
                 static_cast<double>(model.num_classes),
                 static_cast<double>(model.input_dim),
                 static_cast<double>(static_cast<int>(model.dtype)),
                 static_cast<double>(as_i32(static_cast<std::uint32_t>(model.seed >> 32))),
                 static_cast<double>(as_i32(static_cast<std::uint32_t>(model.seed)))};
  tensors.push_back(std::move(arch));
  for (const auto& l : model.layers) {
    tensors.push_back(tensor_from(l.name + ".weight", l.weight));
    tensors.push_back(tensor_from(l.name + ".bias", bias_dtype(model.dtype), l.bias));
  }
  write_container(path, tensors);
}

ModelGraph load_weights(const std::filesystem::path& path) {
  const auto tensors = read_container(path);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name.emplace(t.name, &t);

  const auto arch_it = by_name.find(kArchTensor);
  if (arch_it == by_name.end()) throw FormatError("missing tensor '__arch__'");
  const NamedTensor& arch = *arch_it->second;
  if (arch.dtype != DType::int32 || arch.values.size() != 8) throw FormatError("malformed tensor '__arch__'");
  const auto& a = arch.values;
  if (a[5] < 0 || a[5] > static_cast<double>(DType::int32)) throw FormatError("bad dtype tag in '__arch__'");
  const std::uint64_t seed = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(static_cast<std::int32_t>(a[6]))) << 32) |
                             static_cast<std::uint32_t>(static_cast<std::int32_t>(a[7]));
  ModelGraph model;
  try {
    model = build_toy_model(static_cast<Index>(a[0]), static_cast<Index>(a[1]), static_cast<Index>(a[2]),
                            static_cast<Index>(a[3]), seed, static_cast<DType>(static_cast<int>(a[5])));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid architecture in '__arch__': ") + e.what());
  }

  for (auto& l : model.layers) {
    const auto w = by_name.find(l.name + ".weight");
    const auto b = by_name.find(l.name + ".bias");
    if (w == by_name.end()) throw FormatError("missing tensor '" + l.name + ".weight'");
    if (b == by_name.end()) throw FormatError("missing tensor '" + l.name + ".bias'");
    const NamedTensor& wt = *w->second;
    const NamedTensor& bt = *b->second;
    if (wt.dtype != model.dtype || wt.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(l.in_dim),
                                                                         static_cast<std::uint32_t>(l.out_dim)})
      throw FormatError("tensor '" + wt.name + "' has unexpected dtype or dims");
    if (bt.dtype != bias_dtype(model.dtype) || bt.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(l.out_dim)})
      throw FormatError("tensor '" + bt.name + "' has unexpected dtype or dims");
    RowMatrixXd values = Eigen::Map<const RowMatrixXd>(wt.values.data(), l.in_dim, l.out_dim);
    l.weight = Matrix2D(model.dtype, std::move(values));
    l.bias = Eigen::Map<const Eigen::VectorXd>(bt.values.data(), l.out_dim);
  }
  model.validate();
  return model;
}

}  // namespace ftb
