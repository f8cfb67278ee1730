#include <algorithm>
#include <memory>

#include "op_util.hpp"
#include "xmodal/ops.hpp"
#include "xmodal/simd/kernels.hpp"

namespace xmodal::ops {

using detail::check_finite;
using detail::tracks;
using detail::wants_grad;

namespace {

// dst[cols x rows] = src[rows x cols]^T
std::vector<double> transposed(std::span<const double> src, std::size_t rows, std::size_t cols) {
  std::vector<double> dst(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  return dst;
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, k, stride, pad, oh, ow;
  std::size_t plane() const { return oh * ow; }
  std::size_t cols_n() const { return batch * oh * ow; }
};

// cols[(c, ki, kj) x (n, oy, ox)] gathers the input under every kernel tap.
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t plane = g.plane(), cols_n = g.cols_n();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * cols_n;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* src = x + (n * g.cin + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            double* dst = row + n * plane + oy * g.ow;
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (g.pad == 0) {
              const double* s = src + static_cast<std::size_t>(iy) * g.w + kj;
              for (std::size_t ox = 0; ox < g.ow; ++ox) dst[ox] = s[ox * g.stride];
              continue;
            }
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill_n(dst, g.ow, 0.0);
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              dst[ox] = (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) ? src[iy * static_cast<std::ptrdiff_t>(g.w) + ix] : 0.0;
            }
          }
        }
      }
}

// Adjoint of im2col: scatters column gradients back onto the input.
void col2im_add(const double* dcols, const ConvGeometry& g, double* gx) {
  const std::size_t plane = g.plane(), cols_n = g.cols_n();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = dcols + ((c * g.k + ki) * g.k + kj) * cols_n;
        for (std::size_t n = 0; n < g.batch; ++n) {
          double* dst = gx + (n * g.cin + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const double* src = row + n * plane + oy * g.ow;
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
            if (g.pad == 0) {
              double* d = dst + static_cast<std::size_t>(iy) * g.w + kj;
              for (std::size_t ox = 0; ox < g.ow; ++ox) d[ox * g.stride] += src[ox];
              continue;
            }
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += src[ox];
            }
          }
        }
      }
}

// Scratch buffer without value-initialization; every element is written
// before it is read.
std::unique_ptr<double[]> scratch(std::size_t n) { return std::unique_ptr<double[]>(new double[n]); }

// Target number of output positions per conv chunk.
constexpr std::size_t kChunkColumns = 512;

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros({m, n}, grad);
  const auto& kt = simd::active();
  kt.gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data_mut().data(), n, false);
  check_finite(out, "matmul");
  if (grad) {
    tape.record([a, b, out, m, k, n]() mutable {
      const auto& kt = simd::active();
      const double* g = out.grad().data();
      if (wants_grad(a)) {
        // dA[M x K] += dOut[M x N] * B[K x N]^T
        kt.gemm_nt(m, k, n, g, n, b.data().data(), n, a.grad_mut().data(), k, true);
      }
      if (wants_grad(b)) {
        // dB[K x N] += A^T[K x M] * dOut[M x N]
        const auto at = transposed(a.data(), m, k);
        kt.gemm_nn(k, n, m, at.data(), m, g, n, b.grad_mut().data(), n, true);
      }
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t in = x.dim(1);
  const std::size_t out_f = weight.dim(0);
  if (bias.defined() && bias.shape() != Shape{out_f}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  const bool grad = tracks(tape, {&x, &weight, &bias});
  Tensor out = Tensor::zeros({n, out_f}, grad);
  auto o = out.data_mut();
  const auto& kt = simd::active();
  kt.gemm_nt(n, out_f, in, x.data().data(), in, weight.data().data(), in, o.data(), out_f, false);
  if (bias.defined()) {
    auto bv = bias.data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out_f; ++c) o[r * out_f + c] += bv[c];
  }
  check_finite(out, "linear");
  if (grad) {
    tape.record([x, weight, bias, out, n, in, out_f]() mutable {
      const auto& kt = simd::active();
      auto g = out.grad();
      if (wants_grad(x)) {
        kt.gemm_nn(n, in, out_f, g.data(), out_f, weight.data().data(), in, x.grad_mut().data(), in, true);
      }
      if (wants_grad(weight)) {
        const auto gt = transposed(g, n, out_f);
        kt.gemm_nn(out_f, in, n, gt.data(), n, x.data().data(), in, weight.grad_mut().data(), in, true);
      }
      if (wants_grad(bias)) {
        auto gb = bias.grad_mut();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < out_f; ++c) gb[c] += g[r * out_f + c];
      }
    });
  }
  return out;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              Conv2dOptions options) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3) {
    throw DimensionError("conv2d: input must be [C x H x W] or [N x C x H x W], got " + shape_str(input.shape()));
  }
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3)) {
    throw DimensionError("conv2d: kernels must be [C_out x C_in x k x k], got " + shape_str(kernels.shape()));
  }
  if (options.stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t batch = batched ? input.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t cin = input.dim(off);
  const std::size_t h = input.dim(off + 1);
  const std::size_t w = input.dim(off + 2);
  const std::size_t cout = kernels.dim(0);
  const std::size_t k = kernels.dim(2);
  const std::size_t pad = options.padding;
  const std::size_t stride = options.stride;
  if (kernels.dim(1) != cin) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(cin) +
                         " channels but kernels " + shape_str(kernels.shape()) + " expect " +
                         std::to_string(kernels.dim(1)));
  }
  if (k > h + 2 * pad || k > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than input " +
                         shape_str(input.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) +
                         " output channels");
  }
  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (w + 2 * pad - k) / stride + 1;
  const std::size_t plane = oh * ow;
  const std::size_t patch = cin * k * k;

  // The batch is processed in chunks of images whose column buffer stays in
  // cache; backward rebuilds each chunk's columns instead of keeping them.
  const std::size_t chunk = std::clamp<std::size_t>(kChunkColumns / plane, 1, batch);
  const std::size_t image = cin * h * w;
  const ConvGeometry geom{chunk, cin, h, w, k, stride, pad, oh, ow};
  const auto& kt = simd::active();

  const bool grad = tracks(tape, {&input, &kernels, &bias});
  Shape out_shape = batched ? Shape{batch, cout, oh, ow} : Shape{cout, oh, ow};
  Tensor out = Tensor::zeros(out_shape, grad);
  {
    auto cols = scratch(patch * chunk * plane);
    auto tmp = scratch(cout * chunk * plane);
    auto o = out.data_mut();
    for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
      ConvGeometry g = geom;
      g.batch = std::min(chunk, batch - n0);
      const std::size_t cn = g.cols_n();
      im2col(input.data().data() + n0 * image, g, cols.get());
      kt.gemm_nn(cout, cn, patch, kernels.data().data(), patch, cols.get(), cn, tmp.get(), cn, false);
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < cout; ++co) {
          const double b = bias.defined() ? bias.data()[co] : 0.0;
          const double* src = tmp.get() + co * cn + n * plane;
          double* dst = o.data() + ((n0 + n) * cout + co) * plane;
          for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
        }
    }
  }
  check_finite(out, "conv2d");

  if (grad) {
    tape.record([input, kernels, bias, out, geom, batch, cout, image]() mutable {
      const auto& kt = simd::active();
      const std::size_t plane = geom.plane();
      const std::size_t patch = geom.cin * geom.k * geom.k;
      const std::size_t chunk = geom.batch;
      auto g_out = out.grad();
      auto gt = scratch(cout * chunk * plane);
      auto cols = scratch(patch * chunk * plane);
      auto dcols = scratch(patch * chunk * plane);
      const bool need_k = wants_grad(kernels), need_x = wants_grad(input), need_b = wants_grad(bias);
      const auto kt_t = need_x ? transposed(kernels.data(), cout, patch) : std::vector<double>();
      for (std::size_t n0 = 0; n0 < batch; n0 += chunk) {
        ConvGeometry g = geom;
        g.batch = std::min(chunk, batch - n0);
        const std::size_t cn = g.cols_n();
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t co = 0; co < cout; ++co)
            std::copy_n(g_out.data() + ((n0 + n) * cout + co) * plane, plane, gt.get() + co * cn + n * plane);
        if (need_b) {
          auto gb = bias.grad_mut();
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0.0;
            for (std::size_t i = 0; i < cn; ++i) s += gt[co * cn + i];
            gb[co] += s;
          }
        }
        if (need_k) {
          // dK[cout x patch] += dOut[cout x cn] * cols[patch x cn]^T
          im2col(input.data().data() + n0 * image, g, cols.get());
          kt.gemm_nt(cout, patch, cn, gt.get(), cn, cols.get(), cn, kernels.grad_mut().data(), patch, true);
        }
        if (need_x) {
          kt.gemm_nn(patch, cn, cout, kt_t.data(), cout, gt.get(), cn, dcols.get(), cn, false);
          col2im_add(dcols.get(), g, input.grad_mut().data() + n0 * image);
        }
      }
    });
  }
  return out;
}

}  // namespace xmodal::ops
