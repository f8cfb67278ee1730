#pragma once

#include <span>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

/// Features of B tuples, each made of two cross-modal pairs (i, j).
///
/// Row k of f_i/g_i is one pair, row k of f_j/g_j the other pair of the
/// same tuple. f is the RGB stream, g the SOD stream. All blocks are B x D.
struct TupleBatch {
  Tensor f_i;
  Tensor f_j;
  Tensor g_i;
  Tensor g_j;

  void validate() const;
  std::size_t tuples() const { return f_i.dim(0); }
};

struct LossWeights {
  double cross = 1.0;
  double div = 1.0;

  void validate() const;
};

enum class DistanceKind { cosine, euclidean };

// Pair distance d(a, b) applied row-wise. The euclidean variant is unbounded
// and only exists to reproduce the instability it causes.
Tensor pair_distance(Tape& tape, const Tensor& a, const Tensor& b, double epsilon,
                     DistanceKind kind = DistanceKind::cosine);

// Mean over tuples of 1/2 [d(f_i, g_i) + d(f_j, g_j)].
Tensor loss_cross(Tape& tape, const TupleBatch& batch, double epsilon,
                  DistanceKind kind = DistanceKind::cosine);

// Mean over tuples of -1/2 [d(f_i, f_j) + d(g_i, g_j)].
Tensor loss_div(Tape& tape, const TupleBatch& batch, double epsilon,
                DistanceKind kind = DistanceKind::cosine);

// w_cross * loss_cross + w_div * loss_div. A zero weight drops its term from
// the graph entirely, so it contributes neither value nor gradient.
Tensor loss_combined(Tape& tape, const TupleBatch& batch, const LossWeights& weights, double epsilon,
                     DistanceKind kind = DistanceKind::cosine);

/// Row layout for the binary same-pair task over one batch of B tuples.
///
/// Combination r pairs RGB row rgb_rows[r] with SOD row sod_rows[r] of the
/// stacked [2B x D] stream features (rows 0..B-1 are the i members, rows
/// B..2B-1 the j members). The first 2B combinations are the positives
/// (x_i, y_i) and (x_j, y_j); the last 2B the negatives (x_i, y_j), (x_j, y_i).
struct ConcatLayout {
  std::vector<std::size_t> rgb_rows;
  std::vector<std::size_t> sod_rows;
  std::vector<int> labels;  // 1 = same pair
};

ConcatLayout concat_layout(std::size_t tuples);

// Mean cross-entropy over the 4B combinations; requires a balanced 2B/2B
// label split.
Tensor loss_concat(Tape& tape, const Tensor& logits, std::span<const int> labels);

}  // namespace xmodal
