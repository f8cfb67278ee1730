#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "xmodal/error.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/ops.hpp"

using namespace xmodal;
using xmodal::testing::gradcheck;
using xmodal::testing::random_tensor;

namespace {

using Rows = std::vector<std::vector<double>>;

// Plain-arithmetic reference for the bounded cosine distance.
double oracle_distance(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return 1.0 - ab / (std::sqrt(aa + eps) * std::sqrt(bb + eps));
}

double oracle_cross(const Rows& fi, const Rows& fj, const Rows& gi, const Rows& gj, double eps) {
  double total = 0;
  for (std::size_t k = 0; k < fi.size(); ++k) {
    total += 0.5 * (oracle_distance(fi[k], gi[k], eps) + oracle_distance(fj[k], gj[k], eps));
  }
  return total / static_cast<double>(fi.size());
}

double oracle_div(const Rows& fi, const Rows& fj, const Rows& gi, const Rows& gj, double eps) {
  double total = 0;
  for (std::size_t k = 0; k < fi.size(); ++k) {
    total += -0.5 * (oracle_distance(fi[k], fj[k], eps) + oracle_distance(gi[k], gj[k], eps));
  }
  return total / static_cast<double>(fi.size());
}

Tensor to_tensor(const Rows& rows, bool requires_grad = false) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows[0].size()}, flat, requires_grad);
}

Rows negated(Rows rows) {
  for (auto& r : rows)
    for (double& v : r) v = -v;
  return rows;
}

const Rows kFi = {{1.0, 2.0}, {0.5, -1.0}};
const Rows kFj = {{-1.0, 0.3}, {2.0, 2.0}};
const Rows kGi = {{0.2, 1.0}, {1.0, -1.5}};
const Rows kGj = {{-0.7, -0.1}, {3.0, 1.0}};
constexpr double kEps = 1e-5;

TupleBatch hand_batch() { return {to_tensor(kFi), to_tensor(kFj), to_tensor(kGi), to_tensor(kGj)}; }

TupleBatch random_batch(std::mt19937_64& gen, std::size_t b, std::size_t d, bool requires_grad = false) {
  return {random_tensor({b, d}, gen, -1, 1, requires_grad), random_tensor({b, d}, gen, -1, 1, requires_grad),
          random_tensor({b, d}, gen, -1, 1, requires_grad), random_tensor({b, d}, gen, -1, 1, requires_grad)};
}

bool rows_norm_above(const Tensor& t, double bound) {
  const std::size_t d = t.dim(1);
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += t.at(r * d + c) * t.at(r * d + c);
    if (std::sqrt(s) <= bound) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("loss_cross examples") {
  Tape tape = Tape::inference();
  TupleBatch same{to_tensor(kFi), to_tensor(kFj), to_tensor(kFi), to_tensor(kFj)};
  CHECK(std::abs(loss_cross(tape, same, 1e-10).item()) < 1e-8);
  TupleBatch opposite{to_tensor(kFi), to_tensor(kFj), to_tensor(negated(kFi)), to_tensor(negated(kFj))};
  CHECK(std::abs(loss_cross(tape, opposite, 1e-10).item() - 2.0) < 1e-8);
  CHECK(std::abs(loss_cross(tape, hand_batch(), kEps).item() - oracle_cross(kFi, kFj, kGi, kGj, kEps)) < 1e-10);
}

TEST_CASE("loss_div examples") {
  Tape tape = Tape::inference();
  TupleBatch same{to_tensor(kFi), to_tensor(kFi), to_tensor(kGi), to_tensor(kGi)};
  CHECK(std::abs(loss_div(tape, same, 1e-10).item()) < 1e-8);
  TupleBatch spread{to_tensor(kFi), to_tensor(negated(kFi)), to_tensor(kGi), to_tensor(negated(kGi))};
  CHECK(std::abs(loss_div(tape, spread, 1e-10).item() + 2.0) < 1e-8);
  CHECK(std::abs(loss_div(tape, hand_batch(), kEps).item() - oracle_div(kFi, kFj, kGi, kGj, kEps)) < 1e-10);
}

TEST_CASE("loss_combined examples") {
  Tape tape = Tape::inference();
  const TupleBatch batch = hand_batch();
  CHECK(loss_combined(tape, batch, {1, 0}, kEps).item() == loss_cross(tape, batch, kEps).item());
  CHECK(loss_combined(tape, batch, {0, 1}, kEps).item() == loss_div(tape, batch, kEps).item());
  const double both = oracle_cross(kFi, kFj, kGi, kGj, kEps) + oracle_div(kFi, kFj, kGi, kGj, kEps);
  CHECK(std::abs(loss_combined(tape, batch, {1, 1}, kEps).item() - both) < 1e-10);
  CHECK(loss_combined(tape, batch, {}, kEps).item() ==
        loss_cross(tape, batch, kEps).item() + loss_div(tape, batch, kEps).item());
  CHECK_THROWS_AS(loss_combined(tape, batch, {0, 0}, kEps), ConfigError);
  CHECK_THROWS_AS(loss_combined(tape, batch, {-1, 1}, kEps), ConfigError);
}

TEST_CASE("mismatched feature blocks are dimension errors") {
  Tape tape = Tape::inference();
  TupleBatch bad{Tensor({2, 3}), Tensor({2, 3}), Tensor({2, 4}), Tensor({2, 3})};
  CHECK_THROWS_AS(loss_cross(tape, bad, kEps), DimensionError);
  CHECK_THROWS_AS(loss_div(tape, bad, kEps), DimensionError);
}

TEST_CASE("loss bounds over 1000 random batches") {
  std::mt19937_64 gen(20);
  Tape tape = Tape::inference();
  for (int trial = 0; trial < 1000; ++trial) {
    const TupleBatch batch = random_batch(gen, 1 + trial % 7, 1 + trial % 11);
    const double c = loss_cross(tape, batch, kEps).item();
    const double d = loss_div(tape, batch, kEps).item();
    const double t = loss_combined(tape, batch, {}, kEps).item();
    REQUIRE(c >= 0.0);
    REQUIRE(c <= 2.0);
    REQUIRE(d >= -2.0);
    REQUIRE(d <= 0.0);
    REQUIRE(t >= -2.0);
    REQUIRE(t <= 2.0);
  }
}

TEST_CASE("loss symmetries") {
  std::mt19937_64 gen(21);
  Tape tape = Tape::inference();
  for (int trial = 0; trial < 50; ++trial) {
    const TupleBatch b = random_batch(gen, 5, 6);
    const TupleBatch swapped_ij{b.f_j, b.f_i, b.g_j, b.g_i};
    const TupleBatch swapped_fg{b.g_i, b.g_j, b.f_i, b.f_j};
    CHECK(std::abs(loss_cross(tape, b, kEps).item() - loss_cross(tape, swapped_ij, kEps).item()) < 1e-14);
    CHECK(std::abs(loss_div(tape, b, kEps).item() - loss_div(tape, swapped_ij, kEps).item()) < 1e-14);
    CHECK(std::abs(loss_div(tape, b, kEps).item() - loss_div(tape, swapped_fg, kEps).item()) < 1e-14);
  }
}

TEST_CASE("row-wise rescaling leaves the losses unchanged") {
  std::mt19937_64 gen(22);
  std::uniform_real_distribution<double> factor(0.2, 20.0);
  Tape tape = Tape::inference();
  int checked = 0;
  while (checked < 100) {
    TupleBatch b = random_batch(gen, 4, 8);
    if (!rows_norm_above(b.f_i, 1.0) || !rows_norm_above(b.f_j, 1.0) || !rows_norm_above(b.g_i, 1.0) ||
        !rows_norm_above(b.g_j, 1.0)) {
      continue;
    }
    const double c0 = loss_cross(tape, b, 1e-10).item();
    const double d0 = loss_div(tape, b, 1e-10).item();
    Tensor scaled = b.g_i.clone();
    auto v = scaled.data_mut();
    for (std::size_t r = 0; r < 4; ++r) {
      const double s = factor(gen);
      for (std::size_t c = 0; c < 8; ++c) v[r * 8 + c] *= s;
    }
    const TupleBatch rescaled{b.f_i, b.f_j, scaled, b.g_j};
    CHECK(std::abs(loss_cross(tape, rescaled, 1e-10).item() - c0) < 1e-5);
    CHECK(std::abs(loss_div(tape, rescaled, 1e-10).item() - d0) < 1e-5);
    ++checked;
  }
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 gen(23);
  int checked = 0;
  while (checked < 20) {
    TupleBatch b = random_batch(gen, 3, 5, true);
    if (!rows_norm_above(b.f_i, 0.1) || !rows_norm_above(b.f_j, 0.1) || !rows_norm_above(b.g_i, 0.1) ||
        !rows_norm_above(b.g_j, 0.1)) {
      continue;
    }
    const std::vector<Tensor> inputs{b.f_i, b.f_j, b.g_i, b.g_j};
    CHECK(gradcheck(inputs, [&](Tape& t) { return loss_cross(t, b, kEps); }).max_relative_error < 1e-5);
    CHECK(gradcheck(inputs, [&](Tape& t) { return loss_div(t, b, kEps); }).max_relative_error < 1e-5);
    CHECK(gradcheck(inputs, [&](Tape& t) { return loss_combined(t, b, {}, kEps); }).max_relative_error < 1e-5);
    CHECK(gradcheck(inputs, [&](Tape& t) { return loss_combined(t, b, {2, 0.5}, kEps); }).max_relative_error <
          1e-5);
    ++checked;
  }
}

TEST_CASE("zero-weighted terms contribute no gradient") {
  std::mt19937_64 gen(24);
  TupleBatch b = random_batch(gen, 3, 4, true);
  Tape tape;
  Tensor loss = loss_combined(tape, b, {1, 0}, kEps);
  tape.backward(loss);
  // Only the cross term touches f_i together with g_i; with the div term
  // absent, d/d f_i depends on g_i alone.
  Tape ref;
  Tensor fi = b.f_i.clone(true);
  Tensor gi = b.g_i.clone();
  Tensor fj = b.f_j.clone();
  Tensor gj = b.g_j.clone();
  Tensor only_cross = loss_cross(ref, TupleBatch{fi, fj, gi, gj}, kEps);
  ref.backward(only_cross);
  for (std::size_t i = 0; i < fi.numel(); ++i) CHECK(b.f_i.grad()[i] == fi.grad()[i]);
}

TEST_CASE("concat layout pairs and labels") {
  const ConcatLayout layout = concat_layout(3);
  REQUIRE(layout.labels.size() == 12);
  for (std::size_t r = 0; r < 6; ++r) {
    CHECK(layout.labels[r] == 1);
    CHECK(layout.rgb_rows[r] == layout.sod_rows[r]);
  }
  for (std::size_t r = 6; r < 12; ++r) {
    CHECK(layout.labels[r] == 0);
    CHECK(layout.rgb_rows[r] % 3 == layout.sod_rows[r] % 3);
    CHECK(layout.rgb_rows[r] != layout.sod_rows[r]);
  }
}

TEST_CASE("loss_concat examples") {
  Tape tape = Tape::inference();
  const ConcatLayout layout = concat_layout(2);
  Tensor zeros({8, 2});
  CHECK(std::abs(loss_concat(tape, zeros, layout.labels).item() - std::log(2.0)) < 1e-10);

  std::vector<double> confident(16, 0.0);
  for (std::size_t r = 0; r < 8; ++r) confident[r * 2 + layout.labels[r]] = 10.0;
  CHECK(loss_concat(tape, Tensor({8, 2}, confident), layout.labels).item() < 1e-4);

  std::mt19937_64 gen(25);
  Tensor logits = random_tensor({8, 2}, gen, -3, 3, true);
  double oracle = 0;
  for (std::size_t r = 0; r < 8; ++r) {
    const double z0 = logits.at(2 * r), z1 = logits.at(2 * r + 1);
    const double lse = std::log(std::exp(z0) + std::exp(z1));
    oracle += lse - (layout.labels[r] == 1 ? z1 : z0);
  }
  oracle /= 8.0;
  CHECK(std::abs(loss_concat(tape, logits, layout.labels).item() - oracle) < 1e-10);
  CHECK(gradcheck({logits}, [&](Tape& t) { return loss_concat(t, logits, layout.labels); }).max_relative_error < 1e-5);

  const std::vector<int> unbalanced{1, 1, 1, 1, 1, 1, 1, 0};
  CHECK_THROWS_AS(loss_concat(tape, logits, unbalanced), DimensionError);
  const std::vector<int> short_labels{1, 0, 1, 0};
  CHECK_THROWS_AS(loss_concat(tape, logits, short_labels), DimensionError);
}

TEST_CASE("euclidean distance variant is available and unbounded") {
  Tape tape = Tape::inference();
  TupleBatch far{Tensor({1, 2}, {100, 0}), Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {-100, 0}), Tensor({1, 2}, {0, 0})};
  CHECK(loss_cross(tape, far, kEps, DistanceKind::euclidean).item() > 2.0);
}
