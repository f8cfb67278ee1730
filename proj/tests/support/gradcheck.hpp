#pragma once

// Central finite-difference oracle. It only ever evaluates the forward
// pass (on non-recording tapes), so it is independent of every backward
// rule it checks.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal::testing {

using LossBuilder = std::function<Tensor(Tape&)>;

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
};

inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
  return std::sqrt(diff) / scale;
}

inline std::vector<double> numeric_gradient(Tensor& input, const LossBuilder& build, double h) {
  std::vector<double> out(input.numel());
  auto values = input.data_mut();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    Tape plus = Tape::inference();
    const double fp = build(plus).item();
    values[i] = saved - h;
    Tape minus = Tape::inference();
    const double fm = build(minus).item();
    values[i] = saved;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

// `inputs` must be leaves with requires_grad that `build` reads.
inline GradcheckReport gradcheck(std::vector<Tensor> inputs, const LossBuilder& build, double h = 1e-5) {
  for (Tensor& t : inputs) t.zero_grad();
  Tape tape;
  Tensor loss = build(tape);
  tape.backward(loss);
  GradcheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    const auto numeric = numeric_gradient(inputs[k], build, h);
    const double err = relative_error(analytic, numeric);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_input = k;
    }
  }
  return report;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(gen);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Uniform values with |v| >= margin, used away from ReLU kinks.
inline Tensor random_away_from_zero(Shape shape, std::mt19937_64& gen, double margin, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sign(gen) ? dist(gen) : -dist(gen);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace xmodal::testing
