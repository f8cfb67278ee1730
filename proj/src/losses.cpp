#include "xmodal/losses.hpp"

#include "xmodal/error.hpp"
#include "xmodal/ops.hpp"

namespace xmodal {

void TupleBatch::validate() const {
  for (const Tensor* t : {&f_i, &f_j, &g_i, &g_j}) {
    if (!t->defined()) throw DimensionError("tuple batch has an undefined feature block");
  }
  if (f_i.rank() != 2) throw DimensionError("tuple batch blocks must be B x D, got " + shape_str(f_i.shape()));
  for (const Tensor* t : {&f_j, &g_i, &g_j}) {
    if (t->shape() != f_i.shape()) {
      throw DimensionError("tuple batch blocks disagree: " + shape_str(f_i.shape()) + " vs " +
                           shape_str(t->shape()));
    }
  }
}

void LossWeights::validate() const {
  if (cross < 0.0 || div < 0.0) throw ConfigError("loss weights must be non-negative");
  if (cross == 0.0 && div == 0.0) throw ConfigError("loss weights must not both be zero");
}

Tensor pair_distance(Tape& tape, const Tensor& a, const Tensor& b, double epsilon, DistanceKind kind) {
  return kind == DistanceKind::cosine ? ops::cosine_distance_rows(tape, a, b, epsilon)
                                      : ops::euclidean_distance_rows(tape, a, b, epsilon);
}

namespace {

Tensor half_sum_of_means(Tape& tape, const Tensor& d1, const Tensor& d2) {
  return ops::scale(tape, ops::add(tape, ops::mean(tape, d1), ops::mean(tape, d2)), 0.5);
}

}  // namespace

Tensor loss_cross(Tape& tape, const TupleBatch& batch, double epsilon, DistanceKind kind) {
  batch.validate();
  return half_sum_of_means(tape, pair_distance(tape, batch.f_i, batch.g_i, epsilon, kind),
                           pair_distance(tape, batch.f_j, batch.g_j, epsilon, kind));
}

Tensor loss_div(Tape& tape, const TupleBatch& batch, double epsilon, DistanceKind kind) {
  batch.validate();
  Tensor spread = half_sum_of_means(tape, pair_distance(tape, batch.f_i, batch.f_j, epsilon, kind),
                                    pair_distance(tape, batch.g_i, batch.g_j, epsilon, kind));
  return ops::scale(tape, spread, -1.0);
}

Tensor loss_combined(Tape& tape, const TupleBatch& batch, const LossWeights& weights, double epsilon,
                     DistanceKind kind) {
  weights.validate();
  auto weighted = [&](Tensor term, double w) { return w == 1.0 ? term : ops::scale(tape, term, w); };
  if (weights.div == 0.0) return weighted(loss_cross(tape, batch, epsilon, kind), weights.cross);
  if (weights.cross == 0.0) return weighted(loss_div(tape, batch, epsilon, kind), weights.div);
  return ops::add(tape, weighted(loss_cross(tape, batch, epsilon, kind), weights.cross),
                  weighted(loss_div(tape, batch, epsilon, kind), weights.div));
}

ConcatLayout concat_layout(std::size_t tuples) {
  ConcatLayout layout;
  const std::size_t b = tuples;
  auto push = [&](std::size_t rgb, std::size_t sod, int label) {
    layout.rgb_rows.push_back(rgb);
    layout.sod_rows.push_back(sod);
    layout.labels.push_back(label);
  };
  for (std::size_t k = 0; k < b; ++k) push(k, k, 1);          // (x_i, y_i)
  for (std::size_t k = 0; k < b; ++k) push(b + k, b + k, 1);  // (x_j, y_j)
  for (std::size_t k = 0; k < b; ++k) push(k, b + k, 0);      // (x_i, y_j)
  for (std::size_t k = 0; k < b; ++k) push(b + k, k, 0);      // (x_j, y_i)
  return layout;
}

Tensor loss_concat(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw DimensionError("loss_concat: logits must be [4B x 2], got " + shape_str(logits.shape()));
  }
  if (labels.size() != logits.dim(0) || labels.size() % 4 != 0) {
    throw DimensionError("loss_concat: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  std::size_t positives = 0;
  for (int l : labels) positives += l == 1;
  if (positives * 2 != labels.size()) {
    throw DimensionError("loss_concat: expected " + std::to_string(labels.size() / 2) + " positive rows, got " +
                         std::to_string(positives));
  }
  return ops::softmax_cross_entropy(tape, logits, labels);
}

}  // namespace xmodal
