#include "ftbench/model.hpp"

#include "ftbench/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ftb {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream, std::uint32_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), salt};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kWeightSalt = 0x5EED0001u;
constexpr std::uint32_t kInputSalt = 0x5EED0002u;

// Nominal standard deviations used to pick int8 requantization shifts.
constexpr double kInt8UniformStd = 73.3;  // uniform integers in [-127, 127]
constexpr double kInt8TargetStd = 32.0;

int requant_shift_for(Index in_dim, bool first_layer) {
  const double sigma_in = first_layer ? kInt8UniformStd : kInt8TargetStd;
  const double y_std = std::sqrt(static_cast<double>(in_dim)) * sigma_in * kInt8UniformStd;
  return std::max(0, static_cast<int>(std::lround(std::log2(y_std / kInt8TargetStd))));
}

void init_weights(LayerSpec& layer, DType dtype, std::uint64_t seed) {
  auto rng = seeded_engine(seed, static_cast<std::uint64_t>(layer.index), kWeightSalt);
  RowMatrixXd w(layer.in_dim, layer.out_dim);
  layer.bias.resize(layer.out_dim);
  if (is_integer(dtype)) {
    std::uniform_int_distribution<int> weight_dist(-127, 127);
    std::uniform_int_distribution<int> bias_dist(-256, 256);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = weight_dist(rng);
    for (Index o = 0; o < layer.out_dim; ++o) layer.bias[o] = bias_dist(rng);
    // A zero row sum makes the sum checksum blind to faults in that input
    // feature; nudge one element so every row sum is nonzero.
    for (Index k = 0; k < layer.in_dim; ++k) {
      if (w.row(k).sum() == 0.0) w(k, 0) += w(k, 0) < 127.0 ? 1.0 : -1.0;
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.in_dim));
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = conform(normal(rng) * scale, dtype);
    for (Index o = 0; o < layer.out_dim; ++o) layer.bias[o] = conform(0.1 * normal(rng), dtype);
  }
  layer.weight = Matrix2D(dtype, std::move(w));
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Matrix2D token_mix_float(const Matrix2D& qkv, Index dim, DType dtype) {
  const Index tokens = qkv.rows();
  Eigen::VectorXd vmean = Eigen::VectorXd::Zero(dim);
  for (Index t = 0; t < tokens; ++t)
    for (Index j = 0; j < dim; ++j) vmean[j] += qkv(t, 2 * dim + j);
  vmean /= static_cast<double>(tokens);
  RowMatrixXd z(tokens, dim);
  for (Index t = 0; t < tokens; ++t)
    for (Index j = 0; j < dim; ++j) z(t, j) = conform((qkv(t, j) + qkv(t, dim + j) + vmean[j]) / 3.0, dtype);
  return Matrix2D::adopt(dtype, std::move(z));
}

Matrix2D token_mix_int(const Matrix2D& qkv, Index dim) {
  const Index tokens = qkv.rows();
  std::vector<std::int64_t> vsum(static_cast<std::size_t>(dim), 0);
  for (Index t = 0; t < tokens; ++t)
    for (Index j = 0; j < dim; ++j) vsum[static_cast<std::size_t>(j)] += static_cast<std::int64_t>(qkv(t, 2 * dim + j));
  RowMatrixXd z(tokens, dim);
  for (Index t = 0; t < tokens; ++t)
    for (Index j = 0; j < dim; ++j) {
      const std::int64_t mixed = (static_cast<std::int64_t>(qkv(t, j)) + static_cast<std::int64_t>(qkv(t, dim + j)) +
                                  vsum[static_cast<std::size_t>(j)] / tokens) /
                                 3;
      z(t, j) = static_cast<double>(std::clamp<std::int64_t>(mixed, -128, 127));
    }
  return Matrix2D::adopt(DType::int8, std::move(z));
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::embed: return "embed";
    case LayerKind::qkv: return "qkv";
    case LayerKind::attn_proj: return "attn_proj";
    case LayerKind::mlp_fc1: return "mlp_fc1";
    case LayerKind::mlp_fc2: return "mlp_fc2";
    case LayerKind::head: return "head";
  }
  return "unknown";
}

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::none: return "none";
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
  }
  return "unknown";
}

void ModelGraph::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  Index expected_in = input_dim;
  for (Index i = 0; i < size(); ++i) {
    const LayerSpec& l = layer(i);
    if (l.index != i) throw ShapeError("layer " + l.name + " has index " + std::to_string(l.index));
    if (l.weight.rows() != l.in_dim || l.weight.cols() != l.out_dim)
      throw ShapeError("layer " + l.name + ": weight dims do not match (in_dim, out_dim)");
    if (l.bias.size() != l.out_dim) throw ShapeError("layer " + l.name + ": bias length != out_dim");
    if (l.in_dim != expected_in)
      throw ShapeError("layer " + l.name + ": in_dim " + std::to_string(l.in_dim) + " does not chain from " +
                       std::to_string(expected_in));
    if (l.kind == LayerKind::head && i != head_index()) throw ShapeError("head layer must be last");
    if (l.kind == LayerKind::qkv && l.out_dim % 3 != 0) throw ShapeError("qkv out_dim must be divisible by 3");
    expected_in = l.kind == LayerKind::qkv ? l.out_dim / 3 : l.out_dim;
  }
  if (layers.back().kind != LayerKind::head) throw ShapeError("last layer must be the head");
  if (layers.back().out_dim != num_classes) throw ShapeError("head out_dim != num_classes");
}

TapSet all_layers(const ModelGraph& model) {
  TapSet taps;
  for (Index i = 0; i < model.size(); ++i) taps.insert(i);
  return taps;
}

ModelGraph build_toy_model(Index blocks, Index dim, Index tokens, Index classes, std::uint64_t seed, DType dtype) {
  if (blocks < 1) throw std::invalid_argument("blocks must be >= 1");
  if (dim < 4 || dim % 4 != 0) throw std::invalid_argument("dim must be a positive multiple of 4");
  if (tokens < 1) throw std::invalid_argument("tokens must be >= 1");
  if (classes < 2) throw std::invalid_argument("classes must be >= 2");
  if (dtype == DType::int32) throw std::invalid_argument("int32 models are not supported; use int8");

  ModelGraph model;
  model.num_classes = classes;
  model.input_dim = dim;
  model.tokens = tokens;
  model.blocks = blocks;
  model.dim = dim;
  model.dtype = dtype;
  model.seed = seed;

  const bool integer = is_integer(dtype);
  auto add = [&](LayerKind kind, int block, std::string name, Index in, Index out, Index rows, Activation act,
                 bool norm) {
    LayerSpec layer;
    layer.index = model.size();
    layer.name = std::move(name);
    layer.kind = kind;
    layer.block = block;
    layer.in_dim = in;
    layer.out_dim = out;
    layer.tokens = rows;
    layer.activation = act;
    layer.normalize_before = norm && !integer;
    if (integer) layer.requant_shift = requant_shift_for(in, layer.index == 0);
    init_weights(layer, dtype, seed);
    model.layers.push_back(std::move(layer));
  };

  add(LayerKind::embed, -1, "embed", dim, dim, tokens, Activation::none, false);
  for (Index b = 0; b < blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    const int block = static_cast<int>(b);
    add(LayerKind::qkv, block, prefix + "qkv", dim, 3 * dim, tokens, Activation::none, true);
    add(LayerKind::attn_proj, block, prefix + "attn_proj", dim, dim, tokens, Activation::none, true);
    add(LayerKind::mlp_fc1, block, prefix + "mlp_fc1", dim, 4 * dim, tokens,
        integer ? Activation::relu : Activation::gelu, true);
    add(LayerKind::mlp_fc2, block, prefix + "mlp_fc2", 4 * dim, dim, tokens, Activation::none, false);
  }
  add(LayerKind::head, -1, "head", dim, classes, 1, Activation::none, true);
  model.validate();
  return model;
}

Index mac_count(const LayerSpec& layer) { return layer.tokens * layer.in_dim * layer.out_dim; }

Index total_macs(const ModelGraph& model) {
  Index total = 0;
  for (const auto& l : model.layers) total += mac_count(l);
  return total;
}

Matrix2D layer_norm(const Matrix2D& x) {
  constexpr double eps = 1e-5;
  RowMatrixXd out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = conform((x(r, c) - mean) * inv, x.dtype());
  }
  return Matrix2D::adopt(x.dtype(), std::move(out));
}

Matrix2D gemm_operand(const LayerSpec& layer, const Matrix2D& carried) {
  Matrix2D x = layer.kind == LayerKind::head ? carried.row(0) : carried;
  if (x.rows() != layer.tokens || x.cols() != layer.in_dim)
    throw ShapeError("layer " + layer.name + " expects " + std::to_string(layer.tokens) + "x" +
                     std::to_string(layer.in_dim) + " input, got " + std::to_string(x.rows()) + "x" +
                     std::to_string(x.cols()));
  if (layer.normalize_before && !is_integer(x.dtype())) return layer_norm(x);
  return x;
}

Matrix2D layer_gemm(const LayerSpec& layer, const Matrix2D& x) { return layer_gemm(layer, x, layer.weight); }

Matrix2D layer_gemm(const LayerSpec& layer, const Matrix2D& x, const Matrix2D& weight) {
  return gemm(x, weight, layer.bias_span(), default_accumulation(weight.dtype()));
}

Matrix2D epilogue(const ModelGraph& model, const LayerSpec& layer, const Matrix2D& y) {
  if (layer.kind == LayerKind::head) return y;
  if (is_integer(model.dtype)) {
    RowMatrixXd a(y.rows(), y.cols());
    const double scale = std::ldexp(1.0, -layer.requant_shift);
    for (Index i = 0; i < y.size(); ++i) {
      double v = y.at(i);
      if (layer.activation == Activation::relu) v = std::max(0.0, v);
      a.data()[i] = std::clamp(std::floor(v * scale), -128.0, 127.0);
    }
    Matrix2D q = Matrix2D::adopt(DType::int8, std::move(a));
    return layer.kind == LayerKind::qkv ? token_mix_int(q, layer.out_dim / 3) : q;
  }
  const DType dtype = y.dtype();
  Matrix2D a = y;
  if (layer.activation != Activation::none) {
    RowMatrixXd v(y.rows(), y.cols());
    for (Index i = 0; i < y.size(); ++i) {
      const double in = y.at(i);
      v.data()[i] = conform(layer.activation == Activation::gelu ? gelu(in) : std::max(0.0, in), dtype);
    }
    a = Matrix2D::adopt(dtype, std::move(v));
  }
  return layer.kind == LayerKind::qkv ? token_mix_float(a, layer.out_dim / 3, dtype) : a;
}

Prediction classify(const ModelGraph& model, const Matrix2D& head_output, Index label) {
  if (label < 0 || label >= model.num_classes) throw std::out_of_range("label out of range");
  Prediction p;
  p.logits = head_output.values().row(0).transpose();
  if (is_integer(model.dtype)) p.logits *= std::ldexp(1.0, -model.layers.back().requant_shift);
  Index best = 0;
  for (Index c = 1; c < p.logits.size(); ++c)
    if (p.logits[c] > p.logits[best]) best = c;
  p.predicted = best;
  const double m = p.logits[best];
  double s = 0.0;
  for (Index c = 0; c < p.logits.size(); ++c) s += std::exp(p.logits[c] - m);
  p.loss = m + std::log(s) - p.logits[label];
  return p;
}

ActivationTrace forward_from(const ModelGraph& model, Index start, Matrix2D carried, Index label, const TapSet& taps) {
  if (start < 0 || start > model.head_index()) throw std::out_of_range("forward start layer out of range");
  ActivationTrace trace;
  for (Index i = start; i < model.size(); ++i) {
    const LayerSpec& layer = model.layer(i);
    Matrix2D x = gemm_operand(layer, carried);
    Matrix2D y = layer_gemm(layer, x);
    const bool tapped = taps.contains(i);
    if (tapped) trace.inputs.emplace(i, std::move(x));
    if (i == model.head_index()) {
      Prediction p = classify(model, y, label);
      trace.logits = std::move(p.logits);
      trace.predicted = p.predicted;
      trace.loss = p.loss;
    } else {
      carried = epilogue(model, layer, y);
    }
    if (tapped) trace.outputs.emplace(i, std::move(y));
  }
  return trace;
}

ActivationTrace forward(const ModelGraph& model, const Matrix2D& input, Index label, const TapSet& taps) {
  if (input.rows() != model.tokens || input.cols() != model.input_dim)
    throw ShapeError("input must be " + std::to_string(model.tokens) + "x" + std::to_string(model.input_dim));
  return forward_from(model, 0, input, label, taps);
}

Matrix2D run_prefix(const ModelGraph& model, const Matrix2D& input, Index stop) {
  if (stop < 0 || stop > model.head_index()) throw std::out_of_range("prefix stop layer out of range");
  Matrix2D carried = input;
  for (Index i = 0; i < stop; ++i) {
    const LayerSpec& layer = model.layer(i);
    carried = epilogue(model, layer, layer_gemm(layer, gemm_operand(layer, carried)));
  }
  return carried;
}

Matrix2D random_input(const ModelGraph& model, std::uint64_t seed, Index sample) {
  auto rng = seeded_engine(seed, static_cast<std::uint64_t>(sample), kInputSalt);
  RowMatrixXd v(model.tokens, model.input_dim);
  if (is_integer(model.dtype)) {
    std::uniform_int_distribution<int> dist(-127, 127);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
    return Matrix2D(DType::int8, std::move(v));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = conform(normal(rng), model.dtype);
  return Matrix2D(model.dtype, std::move(v));
}

Dataset make_dataset(const ModelGraph& model, Index size, std::uint64_t seed) {
  if (size < 0) throw std::invalid_argument("dataset size must be >= 0");
  Dataset data;
  data.seed = seed;
  data.inputs.reserve(static_cast<std::size_t>(size));
  data.labels.reserve(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) {
    Matrix2D x = random_input(model, seed, i);
    data.labels.push_back(forward(model, x, 0).predicted);
    data.inputs.push_back(std::move(x));
  }
  return data;
}

}  // namespace ftb
