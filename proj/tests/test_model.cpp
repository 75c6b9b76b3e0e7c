#include "ftbench/errors.hpp"
#include "ftbench/model.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

using namespace ftb;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ftbench_test_model_" + name);
}

// Straight-line binary64 forward pass over raw vectors. Mirrors the graph
// description, not the library code.
std::vector<double> reference_logits(const ModelGraph& m, const Matrix2D& input) {
  const Index T = m.tokens;
  const Index D = m.dim;
  std::vector<double> h(input.data().begin(), input.data().end());  // T x D
  auto matmul = [](const std::vector<double>& x, Index rows, const LayerSpec& l) {
    std::vector<double> y(static_cast<std::size_t>(rows * l.out_dim));
    for (Index r = 0; r < rows; ++r)
      for (Index o = 0; o < l.out_dim; ++o) {
        double acc = 0.0;
        for (Index k = 0; k < l.in_dim; ++k) acc += x[r * l.in_dim + k] * l.weight(k, o);
        y[r * l.out_dim + o] = acc + l.bias[o];
      }
    return y;
  };
  auto norm = [](std::vector<double> x, Index rows, Index cols) {
    for (Index r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (Index c = 0; c < cols; ++c) mean += x[r * cols + c];
      mean /= cols;
      double var = 0.0;
      for (Index c = 0; c < cols; ++c) var += (x[r * cols + c] - mean) * (x[r * cols + c] - mean);
      var /= cols;
      for (Index c = 0; c < cols; ++c) x[r * cols + c] = (x[r * cols + c] - mean) / std::sqrt(var + 1e-5);
    }
    return x;
  };
  auto gelu = [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); };

  h = matmul(h, T, m.layer(0));
  for (Index b = 0; b < m.blocks; ++b) {
    const Index base = 1 + 4 * b;
    auto qkv = matmul(norm(h, T, D), T, m.layer(base));
    std::vector<double> z(static_cast<std::size_t>(T * D));
    for (Index j = 0; j < D; ++j) {
      double vm = 0.0;
      for (Index t = 0; t < T; ++t) vm += qkv[t * 3 * D + 2 * D + j];
      vm /= T;
      for (Index t = 0; t < T; ++t) z[t * D + j] = (qkv[t * 3 * D + j] + qkv[t * 3 * D + D + j] + vm) / 3.0;
    }
    h = matmul(norm(z, T, D), T, m.layer(base + 1));
    auto f = matmul(norm(h, T, D), T, m.layer(base + 2));
    for (auto& v : f) v = gelu(v);
    h = matmul(f, T, m.layer(base + 3));
  }
  std::vector<double> cls(h.begin(), h.begin() + D);
  return matmul(norm(cls, 1, D), 1, m.layer(m.head_index()));
}

}  // namespace

TEST_CASE("toy model layout") {
  const auto m = build_toy_model(2, 8, 4, 10, 7);
  CHECK(m.size() == 10);
  CHECK(m.layer(0).kind == LayerKind::embed);
  CHECK(m.layer(9).kind == LayerKind::head);
  CHECK(m.layer(9).tokens == 1);
  CHECK(m.layer(2).name == "blocks.0.attn_proj");

  const auto small = build_toy_model(1, 4, 2, 3, 1);
  CHECK(small.layer(3).kind == LayerKind::mlp_fc1);
  CHECK(small.layer(3).out_dim == 16);

  CHECK_THROWS_AS(build_toy_model(0, 8, 4, 10, 7), std::invalid_argument);
  CHECK_THROWS_AS(build_toy_model(1, 6, 4, 10, 7), std::invalid_argument);
}

TEST_CASE("model construction is deterministic") {
  for (DType dt : {DType::binary64, DType::binary32, DType::binary16, DType::int8}) {
    const auto a = build_toy_model(2, 8, 4, 10, 7, dt);
    const auto b = build_toy_model(2, 8, 4, 10, 7, dt);
    for (Index i = 0; i < a.size(); ++i) {
      CHECK(a.layer(i).weight.bit_equal(b.layer(i).weight));
      CHECK(a.layer(i).bias == b.layer(i).bias);
    }
    const auto c = build_toy_model(2, 8, 4, 10, 8, dt);
    CHECK_FALSE(a.layer(0).weight.bit_equal(c.layer(0).weight));
  }
}

TEST_CASE("int8 weight rows never sum to zero") {
  const auto m = build_toy_model(2, 64, 4, 10, 3, DType::int8);
  for (const auto& l : m.layers)
    for (Index k = 0; k < l.in_dim; ++k) CHECK(l.weight.values().row(k).sum() != 0.0);
}

TEST_CASE("zero model gives a uniform softmax") {
  for (DType dt : {DType::binary64, DType::binary16}) {
    auto m = build_toy_model(2, 8, 4, 10, 7, dt);
    for (auto& l : m.layers) {
      l.weight = Matrix2D(dt, l.in_dim, l.out_dim);
      l.bias.setZero();
    }
    const auto trace = forward(m, Matrix2D(dt, 4, 8), 3);
    CHECK(trace.loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));
    CHECK(trace.predicted == 0);
  }
}

TEST_CASE("forward matches a straight-line reimplementation") {
  const auto m = build_toy_model(2, 16, 5, 7, 42, DType::binary64);
  for (Index s = 0; s < 20; ++s) {
    const auto x = random_input(m, 99, s);
    const auto trace = forward(m, x, 0);
    const auto ref = reference_logits(m, x);
    REQUIRE(trace.logits.size() == 7);
    for (Index c = 0; c < 7; ++c) CHECK(trace.logits[c] == doctest::Approx(ref[c]).epsilon(1e-12));
  }
}

TEST_CASE("taps control what the trace keeps") {
  const auto m = build_toy_model(1, 8, 4, 5, 7);
  const auto x = random_input(m, 1, 0);
  const auto none = forward(m, x, 0);
  CHECK(none.inputs.empty());
  CHECK(none.outputs.empty());
  CHECK(none.logits.size() == 5);

  const auto some = forward(m, x, 0, {1, 5});
  CHECK(some.outputs.size() == 2);
  CHECK(some.outputs.at(1).cols() == 24);
  CHECK(some.inputs.at(5).rows() == 1);
  CHECK(some.logits == none.logits);

  // forward_from over a prefix reproduces the full pass
  const auto tail = forward_from(m, 3, run_prefix(m, x, 3), 0);
  CHECK(tail.logits == none.logits);
}

TEST_CASE("softmax loss is consistent with the logits") {
  const auto m = build_toy_model(2, 8, 4, 6, 11);
  const auto x = random_input(m, 5, 2);
  double total = 0.0;
  for (Index c = 0; c < 6; ++c) total += std::exp(-forward(m, x, c).loss);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mac counts") {
  LayerSpec l;
  l.in_dim = 4;
  l.out_dim = 3;
  l.tokens = 2;
  CHECK(mac_count(l) == 24);
  l.in_dim = 8;
  l.out_dim = 10;
  l.tokens = 1;
  CHECK(mac_count(l) == 80);

  const auto m = build_toy_model(2, 8, 4, 10, 7);
  Index counted = 0;
  for (const auto& layer : m.layers)
    for (Index t = 0; t < layer.tokens; ++t)
      for (Index i = 0; i < layer.in_dim; ++i)
        for (Index o = 0; o < layer.out_dim; ++o) ++counted;
  CHECK(total_macs(m) == counted);
}

TEST_CASE("weights round-trip through the container") {
  for (DType dt : {DType::binary32, DType::binary16, DType::int8}) {
    const auto m = build_toy_model(2, 8, 4, 10, 7, dt);
    const auto path = temp_file("roundtrip.bin");
    save_weights(path, m);
    const auto back = load_weights(path);
    REQUIRE(back.size() == m.size());
    CHECK(back.dtype == dt);
    for (Index i = 0; i < m.size(); ++i) {
      CHECK(back.layer(i).weight.bit_equal(m.layer(i).weight));
      CHECK(back.layer(i).bias == m.layer(i).bias);
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("container errors") {
  const auto m = build_toy_model(1, 8, 4, 10, 7, DType::binary32);
  const auto path = temp_file("broken.bin");
  save_weights(path, m);
  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }

  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto message = [&] {
    try {
      load_weights(path);
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };

  auto bad = bytes;
  bad[0] = 'X';
  write(bad);
  CHECK(message() == "bad magic");

  bad = bytes;
  bad[4] = 2;
  write(bad);
  CHECK(message().find("version") != std::string::npos);

  // cut inside the last tensor's payload
  bad.assign(bytes.begin(), bytes.end() - 10);
  write(bad);
  CHECK(message() == "truncated payload in tensor 'head.bias'");

  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_weights(path), FormatError);
}

TEST_CASE("dataset labels come from the model") {
  const auto m = build_toy_model(1, 8, 4, 5, 7, DType::binary16);
  const auto a = make_dataset(m, 16, 3);
  const auto b = make_dataset(m, 16, 3);
  REQUIRE(a.size() == 16);
  for (Index i = 0; i < 16; ++i) {
    CHECK(a.inputs[i].bit_equal(b.inputs[i]));
    CHECK(a.labels[i] == forward(m, a.inputs[i], 0).predicted);
  }
}
