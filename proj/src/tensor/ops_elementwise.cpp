#include <algorithm>

#include "op_util.hpp"
#include "xmodal/ops.hpp"

namespace xmodal::ops {

using detail::check_finite;
using detail::require_same_shape;
using detail::tracks;
using detail::wants_grad;

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  check_finite(out, "add");
  if (grad) {
    tape.record([a, b, out]() mutable {
      auto g = out.grad();
      if (wants_grad(a)) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  check_finite(out, "sub");
  if (grad) {
    tape.record([a, b, out]() mutable {
      auto g = out.grad();
      if (wants_grad(a)) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  check_finite(out, "mul");
  if (grad) {
    tape.record([a, b, out]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (wants_grad(a)) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  const bool grad = tracks(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = factor * x[i];
  check_finite(out, "scale");
  if (grad) {
    tape.record([a, out, factor]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  const bool grad = tracks(tape, {&a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out({1}, {s}, grad);
  check_finite(out, "sum");
  if (grad) {
    tape.record([a, out]() mutable {
      const double g = out.grad()[0];
      for (double& ga : a.grad_mut()) ga += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_axis(Tape& tape, const Tensor& a, std::size_t axis) {
  const Shape& in = a.shape();
  if (axis >= in.size()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(in));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  const std::size_t extent = in[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];

  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i != axis) out_shape.push_back(in[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  const bool grad = tracks(tape, {&a});
  Tensor out = Tensor::zeros(out_shape, grad);
  auto o = out.data_mut();
  auto x = a.data();
  const double inv = 1.0 / static_cast<double>(extent);
  for (std::size_t p = 0; p < outer; ++p) {
    for (std::size_t e = 0; e < extent; ++e) {
      for (std::size_t q = 0; q < inner; ++q) o[p * inner + q] += x[(p * extent + e) * inner + q];
    }
  }
  for (double& v : o) v *= inv;
  check_finite(out, "mean_axis");
  if (grad) {
    tape.record([a, out, outer, extent, inner, inv]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t p = 0; p < outer; ++p) {
        for (std::size_t e = 0; e < extent; ++e) {
          for (std::size_t q = 0; q < inner; ++q) ga[(p * extent + e) * inner + q] += inv * g[p * inner + q];
        }
      }
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const bool grad = tracks(tape, {&a});
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()), grad);
  if (grad) {
    tape.record([a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor flatten(Tape& tape, const Tensor& a) {
  if (a.rank() < 2) throw DimensionError("flatten: need rank >= 2, got " + shape_str(a.shape()));
  return reshape(tape, a, {a.dim(0), a.numel() / a.dim(0)});
}

Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  const bool grad = tracks(tape, {&a});
  auto x = a.data();
  Tensor out(shape, std::vector<double>(x.begin() + begin * row, x.begin() + end * row), grad);
  if (grad) {
    tape.record([a, out, begin, row]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * row + i] += g[i];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> indices) {
  if (a.rank() < 1 || indices.empty()) throw DimensionError("gather_rows: empty selection");
  const std::size_t rows = a.dim(0);
  const std::size_t row = a.numel() / rows;
  for (std::size_t idx : indices) {
    if (idx >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                           shape_str(a.shape()));
    }
  }
  Shape shape = a.shape();
  shape[0] = indices.size();
  const bool grad = tracks(tape, {&a});
  Tensor out = Tensor::zeros(shape, grad);
  auto o = out.data_mut();
  auto x = a.data();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(x.begin() + indices[r] * row, row, o.begin() + r * row);
  }
  if (grad) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    tape.record([a, out, idx = std::move(idx), row]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < row; ++c) ga[idx[r] * row + c] += g[r * row + c];
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0);
  const std::size_t p = a.dim(1);
  const std::size_t q = b.dim(1);
  const bool grad = tracks(tape, {&a, &b});
  Tensor out = Tensor::zeros({n, p + q}, grad);
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(x.begin() + r * p, p, o.begin() + r * (p + q));
    std::copy_n(y.begin() + r * q, q, o.begin() + r * (p + q) + p);
  }
  if (grad) {
    tape.record([a, b, out, n, p, q]() mutable {
      auto g = out.grad();
      if (wants_grad(a)) {
        auto ga = a.grad_mut();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += g[r * (p + q) + c];
      }
      if (wants_grad(b)) {
        auto gb = b.grad_mut();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += g[r * (p + q) + p + c];
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  const bool grad = tracks(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (grad) {
    const bool guided = tape.relu_rule() == Tape::ReluRule::guided;
    tape.record([a, out, guided]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0 && (!guided || g[i] > 0.0)) ga[i] += g[i];
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& a, double p, Rng& rng, Mode mode) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return a;
  const bool grad = tracks(tape, {&a});
  std::vector<double> mask(a.numel());
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto o = out.data_mut();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * mask[i];
  if (grad) {
    tape.record([a, out, mask = std::move(mask)]() mutable {
      auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
  }
  return out;
}

}  // namespace xmodal::ops
