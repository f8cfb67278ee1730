#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "xmodal/error.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

using namespace xmodal;
using xmodal::testing::gradcheck;
using xmodal::testing::random_tensor;

namespace {

EncoderSpec tiny_spec(std::size_t channels) {
  EncoderSpec s;
  s.input_channels = channels;
  s.input_size = 8;
  s.conv = {{3, 3, 1, true}, {4, 3, 2, true}};
  s.fc = {4};
  return s;
}

std::vector<Tensor> param_tensors(TwoStreamModel& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value);
  return out;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("initialization is deterministic per seed") {
  auto a = TwoStreamModel::init_default(5), b = TwoStreamModel::init_default(5), c = TwoStreamModel::init_default(6);
  CHECK(a.serialize() == b.serialize());
  bool differs = false;
  for (std::size_t k = 0; k < a.f.parameters().size(); ++k)
    differs = differs || !same_values(a.f.parameters()[k].value, c.f.parameters()[k].value);
  CHECK(differs);
}

TEST_CASE("initial weights follow the fan-in uniform law") {
  auto m = TwoStreamModel::init_default(11, 128);
  for (Parameter* p : m.parameters()) {
    const auto v = p->value.data();
    if (p->kind == ParamKind::weight) {
      const std::size_t fan_in = p->value.numel() / p->value.dim(0);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      const double sigma_mean = bound / std::sqrt(3.0) / std::sqrt(static_cast<double>(v.size()));
      CHECK_MESSAGE(std::abs(mean) < 3 * sigma_mean, p->name);
      for (double x : v) REQUIRE(std::abs(x) <= bound);
    } else {
      const double expected = p->kind == ParamKind::bn_gamma ? 1.0 : 0.0;
      for (double x : v) REQUIRE(x == expected);
    }
  }
}

TEST_CASE("f and g are independent and structurally symmetric") {
  auto m = TwoStreamModel::init_default(3);
  CHECK(m.f.spec().canonical_text(false) == m.g.spec().canonical_text(false));
  CHECK(m.f.spec().canonical_text() != m.g.spec().canonical_text());
  const auto& first = m.f.spec().conv.front();
  CHECK(m.g.parameter_count() - m.f.parameter_count() == first.out_channels * first.kernel * first.kernel);

  for (const auto& pf : m.f.parameters())
    for (const auto& pg : m.g.parameters()) REQUIRE_FALSE(pf.value.is_same(pg.value));

  std::vector<std::vector<double>> g_values;
  for (const auto& p : m.g.parameters()) g_values.emplace_back(p.value.data().begin(), p.value.data().end());
  for (auto& p : m.f.parameters())
    for (double& x : p.value.data_mut()) x += 0.5;
  for (std::size_t k = 0; k < g_values.size(); ++k)
    CHECK(std::equal(g_values[k].begin(), g_values[k].end(), m.g.parameters()[k].value.data().begin()));

  auto other = EncoderSpec::desk_default(4);
  other.fc.back() = 32;
  CHECK_THROWS_AS(TwoStreamModel::init(EncoderSpec::desk_default(3), other, 1), ConfigError);
}

TEST_CASE("feature tap is nonnegative and eval forward is pure") {
  auto m = TwoStreamModel::init_default(8);
  std::mt19937_64 gen(1);
  for (int k = 0; k < 100; ++k) {
    Tape tape = Tape::inference();
    const Tensor x = random_tensor({2, 3, 32, 32}, gen, 0.0, 1.0, false);
    const Tensor y = random_tensor({2, 4, 32, 32}, gen, -1.0, 1.0, false);
    const Tensor ff = forward_f(tape, m, x, k % 2 ? Mode::train : Mode::eval);
    const Tensor gg = forward_g(tape, m, y, Mode::eval);
    CHECK(ff.shape() == Shape{2, 64});
    for (double v : ff.data()) REQUIRE(v >= 0.0);
    for (double v : gg.data()) REQUIRE(v >= 0.0);
  }
  Tape tape = Tape::inference();
  const Tensor x = random_tensor({3, 3, 32, 32}, gen, 0.0, 1.0, false);
  CHECK(same_values(forward_f(tape, m, x, Mode::eval), forward_f(tape, m, x, Mode::eval)));
  CHECK_THROWS_AS(forward_f(tape, m, random_tensor({1, 4, 32, 32}, gen), Mode::eval), DimensionError);
  CHECK_THROWS_AS(forward_g(tape, m, random_tensor({1, 4, 30, 30}, gen), Mode::eval), DimensionError);
}

TEST_CASE("end-to-end gradient of the combined loss") {
  std::mt19937_64 gen(31);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = TwoStreamModel::init(tiny_spec(3), tiny_spec(4), seed);
    const Tensor rgb = random_tensor({4, 3, 8, 8}, gen, 0.0, 1.0, false);
    const Tensor sod = random_tensor({4, 4, 8, 8}, gen, -1.0, 1.0, false);
    auto build = [&](Tape& t) {
      const Tensor ff = forward_f(t, m, rgb, Mode::train);
      const Tensor gg = forward_g(t, m, sod, Mode::train);
      TupleBatch b{ops::slice_rows(t, ff, 0, 2), ops::slice_rows(t, ff, 2, 4), ops::slice_rows(t, gg, 0, 2),
                   ops::slice_rows(t, gg, 2, 4)};
      return loss_combined(t, b, {}, 1e-5);
    };
    CHECK(gradcheck(param_tensors(m), build).max_relative_error < 1e-4);
  }
}

TEST_CASE("concat head") {
  std::mt19937_64 gen(4);
  auto m = TwoStreamModel::init(tiny_spec(3), tiny_spec(4), 9, 6);
  REQUIRE(m.head.has_value());
  CHECK(m.head->input_dim() == 8);
  const Tensor rgb = random_tensor({4, 3, 8, 8}, gen, 0.0, 1.0, false);
  const Tensor sod = random_tensor({4, 4, 8, 8}, gen, -1.0, 1.0, false);

  SUBCASE("gradient through the head") {
    auto build = [&](Tape& t) {
      const std::vector<int> labels{1, 0, 1, 0};
      return ops::softmax_cross_entropy(t, forward_concat(t, m, rgb, sod, Mode::train), labels);
    };
    CHECK(gradcheck(param_tensors(m), build).max_relative_error < 1e-4);
  }
  SUBCASE("zero head gives zero logits") {
    for (Parameter* p : m.head->parameters())
      for (double& v : p->value.data_mut()) v = 0.0;
    Tape t = Tape::inference();
    const Tensor logits = forward_concat(t, m, rgb, sod, Mode::eval);
    for (double v : logits.data()) CHECK(v == 0.0);
  }
  SUBCASE("rows are independent in eval mode") {
    Tape t = Tape::inference();
    const Tensor base = forward_concat(t, m, rgb, sod, Mode::eval);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor permuted =
        forward_concat(t, m, ops::gather_rows(t, rgb, perm), ops::gather_rows(t, sod, perm), Mode::eval);
    const Tensor expected = ops::gather_rows(t, base, perm);
    CHECK(same_values(permuted, expected));
  }
  SUBCASE("width mismatch") {
    Tape t = Tape::inference();
    CHECK_THROWS_AS(m.head->forward(t, random_tensor({2, 5}, gen)), DimensionError);
    CHECK_THROWS_AS(forward_concat(t, m, rgb, ops::slice_rows(t, sod, 0, 3), Mode::eval), DimensionError);
  }
}

TEST_CASE("checkpoint round trip") {
  auto m = TwoStreamModel::init_default(2, 128);
  // Exercise the running statistics too.
  std::mt19937_64 gen(3);
  Tape t = Tape::inference();
  forward_f(t, m, random_tensor({4, 3, 32, 32}, gen, 0.0, 1.0, false), Mode::train);
  const auto bytes = m.serialize();
  CHECK(bytes.substr(0, 4) == "XMCK");
  const auto back = TwoStreamModel::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.f.bn_states()[0].running_mean == m.f.bn_states()[0].running_mean);
  CHECK(back.head.has_value());

  auto corrupt = bytes;
  corrupt[1] = 'Z';
  CHECK_THROWS_AS(TwoStreamModel::deserialize(corrupt), FormatError);
  CHECK_THROWS_AS(TwoStreamModel::deserialize(bytes.substr(0, bytes.size() - 8)), FormatError);
  CHECK_THROWS_AS(TwoStreamModel::deserialize(bytes + "x"), FormatError);
}

TEST_CASE("encoder spec text round trip") {
  auto s = EncoderSpec::desk_default(4);
  s.dropout_p = 0.5;
  CHECK(EncoderSpec::parse(s.canonical_text()) == s);
  CHECK(s.spatial_sizes() == std::vector<std::size_t>{14, 6, 2});
  CHECK(s.final_conv_units() == 256);
  CHECK_THROWS_AS(EncoderSpec::parse("fc=1\n"), ConfigError);
  CHECK_THROWS_AS(EncoderSpec::parse("fc=x\n"), FormatError);
  CHECK_THROWS_AS(EncoderSpec::parse("bogus=3\nfc=4\n"), FormatError);
}
