#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

// Differentiable tensor operations. Every op records its backward rule on
// the given tape when the tape is recording and some input requires grad;
// the output requires grad under the same condition. Outputs are checked
// for NaN/Inf and a NumericalError names the offending op.

namespace xmodal {

enum class Mode { train, eval };

namespace ops {

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);

// Sum / mean of all elements, as a one-element tensor.
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
// Mean over one axis; the axis is removed (a rank-1 input yields shape [1]).
Tensor mean_axis(Tape& tape, const Tensor& a, std::size_t axis);

Tensor reshape(Tape& tape, const Tensor& a, Shape shape);
// [N x ...] -> [N x prod(...)]
Tensor flatten(Tape& tape, const Tensor& a);

// Rows [begin, end) along axis 0.
Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end);
// out[r] = a[indices[r]] along axis 0; backward scatters and accumulates.
Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> indices);
// [N x P] ++ [N x Q] -> [N x (P+Q)]
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);

// [M x K] * [K x N]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// x [N x in], weight [out x in], optional bias [out] -> [N x out]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Valid cross-correlation. input [C x H x W] or [N x C x H x W],
// kernels [C_out x C x k x k], optional bias [C_out].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              Conv2dOptions options = {});

// Gradient is passed where a > 0 (zero at the kink). Under Tape::ReluRule::guided
// negative upstream gradients are also zeroed.
Tensor relu(Tape& tape, const Tensor& a);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

// a [B x C x ...]; per-channel statistics over batch and trailing axes.
// Train mode uses batch statistics and updates `state`; eval mode uses it.
Tensor batchnorm(Tape& tape, const Tensor& a, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode, BatchNormOptions options = {});

// Inverted dropout; identity in eval mode or when p == 0.
Tensor dropout(Tape& tape, const Tensor& a, double p, Rng& rng, Mode mode);

// 1 - a.b / (|a|_eps |b|_eps) with |v|_eps = sqrt(sum v^2 + eps).
Tensor cosine_distance(Tape& tape, const Tensor& a, const Tensor& b, double epsilon);
// Row-wise cosine distance of two [N x D] tensors -> [N].
Tensor cosine_distance_rows(Tape& tape, const Tensor& a, const Tensor& b, double epsilon);
// Row-wise sqrt(|a - b|^2 + eps) -> [N].
Tensor euclidean_distance_rows(Tape& tape, const Tensor& a, const Tensor& b, double epsilon);

// Mean cross-entropy of softmax(logits) [N x C] against integer labels.
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

}  // namespace ops
}  // namespace xmodal
