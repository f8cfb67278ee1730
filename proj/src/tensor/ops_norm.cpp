#include <cmath>

#include "op_util.hpp"
#include "xmodal/ops.hpp"

namespace xmodal::ops {

using detail::check_finite;
using detail::tracks;
using detail::wants_grad;

Tensor batchnorm(Tape& tape, const Tensor& a, const Tensor& gamma, const Tensor& beta,
                 BatchNormState& state, Mode mode, BatchNormOptions options) {
  if (a.rank() < 2) throw DimensionError("batchnorm: need [B x C x ...], got " + shape_str(a.shape()));
  const std::size_t batch = a.dim(0);
  const std::size_t channels = a.dim(1);
  const std::size_t inner = a.numel() / (batch * channels);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw DimensionError("batchnorm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " do not match " + std::to_string(channels) + " channels");
  }
  if (state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw DimensionError("batchnorm: running statistics sized for " + std::to_string(state.running_mean.size()) +
                         " channels, input has " + std::to_string(channels));
  }
  if (mode == Mode::train && batch < 2) {
    throw ConfigError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(batch));
  }

  const double count = static_cast<double>(batch * inner);
  std::vector<double> mean(channels, 0.0);
  std::vector<double> inv_std(channels, 0.0);
  auto x = a.data();
  if (mode == Mode::train) {
    std::vector<double> var(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = x.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mean[c] = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const double* p = x.data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mean[c];
          ss += d * d;
        }
      }
      var[c] = ss / count;
      inv_std[c] = 1.0 / std::sqrt(var[c] + options.epsilon);
      const double unbiased = ss / (count - 1.0);
      state.running_mean[c] = (1.0 - options.momentum) * state.running_mean[c] + options.momentum * mean[c];
      state.running_var[c] = (1.0 - options.momentum) * state.running_var[c] + options.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + options.epsilon);
    }
  }

  const bool grad = tracks(tape, {&a, &gamma, &beta});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto xhat = std::make_shared<std::vector<double>>(a.numel());
  {
    auto o = out.data_mut();
    auto gv = gamma.data();
    auto bv = beta.data();
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double xh = (x[base + i] - mean[c]) * inv_std[c];
          (*xhat)[base + i] = xh;
          o[base + i] = gv[c] * xh + bv[c];
        }
      }
    }
  }
  check_finite(out, "batchnorm");

  if (grad) {
    const bool batch_stats = mode == Mode::train;
    tape.record([a, gamma, beta, out, xhat, inv_std = std::move(inv_std), batch, channels, inner, count,
                 batch_stats]() mutable {
      auto g = out.grad();
      auto gv = gamma.data();
      std::vector<double> sum_g(channels, 0.0);
      std::vector<double> sum_gx(channels, 0.0);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (n * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            sum_g[c] += g[base + i];
            sum_gx[c] += g[base + i] * (*xhat)[base + i];
          }
        }
      }
      if (wants_grad(gamma)) {
        auto gg = gamma.grad_mut();
        for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
      }
      if (wants_grad(beta)) {
        auto gb = beta.grad_mut();
        for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
      }
      if (wants_grad(a)) {
        auto ga = a.grad_mut();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (n * channels + c) * inner;
            const double s = gv[c] * inv_std[c];
            if (batch_stats) {
              const double mg = sum_g[c] / count;
              const double mgx = sum_gx[c] / count;
              for (std::size_t i = 0; i < inner; ++i) {
                ga[base + i] += s * (g[base + i] - mg - (*xhat)[base + i] * mgx);
              }
            } else {
              for (std::size_t i = 0; i < inner; ++i) ga[base + i] += s * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace xmodal::ops
