#pragma once

#include "ftbench/numerics.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace ftb {

enum class LayerKind : std::uint8_t { embed, qkv, attn_proj, mlp_fc1, mlp_fc2, head };
enum class Activation : std::uint8_t { none, gelu, relu };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation activation);

/// One GEMM layer. `weight` holds the transposed weight (in_dim x out_dim).
struct LayerSpec {
  Index index = 0;
  std::string name;
  LayerKind kind = LayerKind::embed;
  int block = -1;  // transformer block, -1 for embed/head
  Index in_dim = 0;
  Index out_dim = 0;
  Index tokens = 0;  // GEMM rows per inference
  Matrix2D weight;
  Eigen::VectorXd bias;
  Activation activation = Activation::none;
  bool normalize_before = false;
  int requant_shift = 0;  // integer models only

  DType dtype() const { return weight.dtype(); }
  std::span<const double> bias_span() const { return {bias.data(), static_cast<std::size_t>(bias.size())}; }
};

/// Ordered GEMM pipeline: embed, four layers per block, classification head.
/// Between qkv and attn_proj a fixed token-mixing average
/// z = (q + k + mean_tokens(v)) / 3 stands in for attention.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  Index num_classes = 0;
  Index input_dim = 0;
  Index tokens = 0;
  Index blocks = 0;
  Index dim = 0;
  DType dtype = DType::binary32;
  std::uint64_t seed = 0;

  Index size() const { return static_cast<Index>(layers.size()); }
  Index head_index() const { return size() - 1; }
  const LayerSpec& layer(Index i) const { return layers.at(static_cast<std::size_t>(i)); }

  /// Throws ShapeError when dims do not chain or the head is misplaced.
  void validate() const;
};

using TapSet = std::set<Index>;
TapSet all_layers(const ModelGraph& model);

struct ActivationTrace {
  std::map<Index, Matrix2D> inputs;   // GEMM operand X of tapped layers
  std::map<Index, Matrix2D> outputs;  // raw GEMM output Y (bias added, before activation)
  Eigen::VectorXd logits;
  Index predicted = -1;
  double loss = 0.0;
};

struct Prediction {
  Eigen::VectorXd logits;
  Index predicted = -1;
  double loss = 0.0;
};

/// Builds a seeded toy transformer: 1 embed + 4 * blocks + 1 head layers.
/// Float weights are N(0,1)/sqrt(in_dim) rounded into `dtype`; int8 models use
/// uniform int8 weights with per-layer requantization shifts.
ModelGraph build_toy_model(Index blocks, Index dim, Index tokens, Index classes, std::uint64_t seed,
                           DType dtype = DType::binary32);

Index mac_count(const LayerSpec& layer);
Index total_macs(const ModelGraph& model);

/// Full forward pass. Loss is softmax cross-entropy against `label`.
ActivationTrace forward(const ModelGraph& model, const Matrix2D& input, Index label, const TapSet& taps = {});

/// Forward pass starting at layer `start` with `carried` as the activation
/// entering that layer.
ActivationTrace forward_from(const ModelGraph& model, Index start, Matrix2D carried, Index label,
                             const TapSet& taps = {});

/// Activation entering layer `stop` (the model input when stop == 0).
Matrix2D run_prefix(const ModelGraph& model, const Matrix2D& input, Index stop);

// Layer steps, shared by injection and guarded execution ---------------------

/// GEMM operand for `layer`: the class-token row for the head, layer-norm
/// (float models) when normalize_before is set.
Matrix2D gemm_operand(const LayerSpec& layer, const Matrix2D& carried);

/// Raw GEMM output of `layer` for operand `x`, optionally with a scratch weight.
Matrix2D layer_gemm(const LayerSpec& layer, const Matrix2D& x);
Matrix2D layer_gemm(const LayerSpec& layer, const Matrix2D& x, const Matrix2D& weight);

/// Activation, requantization and token mixing; returns the next carried activation.
Matrix2D epilogue(const ModelGraph& model, const LayerSpec& layer, const Matrix2D& y);

/// Logits, argmax (lowest index on ties) and cross-entropy from a head output.
Prediction classify(const ModelGraph& model, const Matrix2D& head_output, Index label);

/// Per-token layer norm without affine parameters, epsilon 1e-5.
Matrix2D layer_norm(const Matrix2D& x);

// Datasets -------------------------------------------------------------------

struct Dataset {
  std::vector<Matrix2D> inputs;
  std::vector<Index> labels;
  std::uint64_t seed = 0;

  Index size() const { return static_cast<Index>(inputs.size()); }
};

/// Seeded random input for `model` (tokens x input_dim).
Matrix2D random_input(const ModelGraph& model, std::uint64_t seed, Index sample);

/// `size` seeded inputs labelled by an error-free teacher pass of `model`.
Dataset make_dataset(const ModelGraph& model, Index size, std::uint64_t seed);

// Weight container -----------------------------------------------------------

struct NamedTensor {
  std::string name;
  DType dtype = DType::binary64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

/// Little-endian container: "ALBT", u32 version=1, u32 count, then per tensor
/// u16 name_len, name, u8 dtype, u8 rank, rank x u32 dims, raw payload.
void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_container(const std::filesystem::path& path);

void save_weights(const std::filesystem::path& path, const ModelGraph& model);
ModelGraph load_weights(const std::filesystem::path& path);

}  // namespace ftb
