#include <cmath>

#include "op_util.hpp"
#include "xmodal/ops.hpp"
#include "xmodal/simd/kernels.hpp"

namespace xmodal::ops {

using detail::check_finite;
using detail::tracks;
using detail::wants_grad;

namespace {

void require_rows_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": expected two [N x D] tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
}

void require_epsilon(double epsilon, const char* op) {
  if (!(epsilon > 0.0)) throw ConfigError(std::string(op) + ": epsilon must be positive");
}

// Shared core for the vector and row-wise cosine distance. Writes one
// distance per row.
Tensor cosine_rows_impl(Tape& tape, const Tensor& a, const Tensor& b, std::size_t rows, std::size_t dim,
                        double epsilon, Shape out_shape, const char* op) {
  const auto& kt = simd::active();
  auto x = a.data();
  auto y = b.data();
  std::vector<double> dots(rows), na(rows), nb(rows);
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros(std::move(out_shape), grad);
  auto o = out.data_mut();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * dim;
    const double* yr = y.data() + r * dim;
    dots[r] = kt.dot(xr, yr, dim);
    na[r] = std::sqrt(kt.dot(xr, xr, dim) + epsilon);
    nb[r] = std::sqrt(kt.dot(yr, yr, dim) + epsilon);
    o[r] = 1.0 - dots[r] / (na[r] * nb[r]);
  }
  check_finite(out, op);
  if (grad) {
    tape.record([a, b, out, rows, dim, dots = std::move(dots), na = std::move(na), nb = std::move(nb)]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      const bool ga_on = wants_grad(a);
      const bool gb_on = wants_grad(b);
      for (std::size_t r = 0; r < rows; ++r) {
        const double denom = na[r] * nb[r];
        // d = 1 - s / (na nb);  dd/da = -(b / (na nb) - s a / (na^3 nb))
        const double ca = dots[r] / (na[r] * na[r] * denom);
        const double cb = dots[r] / (nb[r] * nb[r] * denom);
        const double* xr = x.data() + r * dim;
        const double* yr = y.data() + r * dim;
        if (ga_on) {
          double* gar = a.grad_mut().data() + r * dim;
          for (std::size_t i = 0; i < dim; ++i) gar[i] += g[r] * (ca * xr[i] - yr[i] / denom);
        }
        if (gb_on) {
          double* gbr = b.grad_mut().data() + r * dim;
          for (std::size_t i = 0; i < dim; ++i) gbr[i] += g[r] * (cb * yr[i] - xr[i] / denom);
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor cosine_distance(Tape& tape, const Tensor& a, const Tensor& b, double epsilon) {
  if (a.rank() != 1 || a.shape() != b.shape()) {
    throw DimensionError("cosine_distance: expected two [D] vectors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  require_epsilon(epsilon, "cosine_distance");
  return cosine_rows_impl(tape, a, b, 1, a.dim(0), epsilon, {1}, "cosine_distance");
}

Tensor cosine_distance_rows(Tape& tape, const Tensor& a, const Tensor& b, double epsilon) {
  require_rows_pair(a, b, "cosine_distance_rows");
  require_epsilon(epsilon, "cosine_distance_rows");
  return cosine_rows_impl(tape, a, b, a.dim(0), a.dim(1), epsilon, {a.dim(0)}, "cosine_distance_rows");
}

Tensor euclidean_distance_rows(Tape& tape, const Tensor& a, const Tensor& b, double epsilon) {
  require_rows_pair(a, b, "euclidean_distance_rows");
  require_epsilon(epsilon, "euclidean_distance_rows");
  const std::size_t rows = a.dim(0);
  const std::size_t dim = a.dim(1);
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros({rows}, grad);
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = x[r * dim + i] - y[r * dim + i];
      s += d * d;
    }
    o[r] = std::sqrt(s + epsilon);
  }
  check_finite(out, "euclidean_distance_rows");
  if (grad) {
    tape.record([a, b, out, rows, dim]() mutable {
      auto g = out.grad();
      auto o = out.data();
      auto x = a.data();
      auto y = b.data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < dim; ++i) {
          const double d = (x[r * dim + i] - y[r * dim + i]) / o[r] * g[r];
          if (wants_grad(a)) a.grad_mut()[r * dim + i] += d;
          if (wants_grad(b)) b.grad_mut()[r * dim + i] -= d;
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  detail::require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw DimensionError("softmax_cross_entropy: label " + std::to_string(l) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * classes);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * classes;
    double mx = zr[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, zr[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(zr[c] - mx);
    const double lse = mx + std::log(s);
    total += lse - zr[labels[r]];
    for (std::size_t c = 0; c < classes; ++c) (*probs)[r * classes + c] = std::exp(zr[c] - lse);
  }
  const bool grad = tracks(tape, {&logits});
  Tensor out({1}, {total / static_cast<double>(n)}, grad);
  check_finite(out, "softmax_cross_entropy");
  if (grad) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record([logits, out, probs, lab = std::move(lab), n, classes]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      auto gl = logits.grad_mut();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < classes; ++c) {
          const double target = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
          gl[r * classes + c] += g * ((*probs)[r * classes + c] - target);
        }
      }
    });
  }
  return out;
}

}  // namespace xmodal::ops
