#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"

namespace xmodal::eval {

const char* task_name(Task t) { return t == Task::shape_class ? "shape_class" : "motion_class"; }
const char* modality_name(Modality m) { return m == Modality::rgb ? "rgb" : "sod"; }

Task parse_task(const std::string& s) {
  if (s == "shape_class") return Task::shape_class;
  if (s == "motion_class") return Task::motion_class;
  throw ConfigError("unknown task '" + s + "' (valid: shape_class, motion_class)");
}

Modality parse_modality(const std::string& s) {
  if (s == "rgb") return Modality::rgb;
  if (s == "sod") return Modality::sod;
  throw ConfigError("unknown modality '" + s + "' (valid: rgb, sod)");
}

FeatureSet extract_features(TwoStreamModel& model, const synth::Dataset& ds, Modality modality, Task task,
                            const synth::SamplerConfig& view) {
  constexpr std::size_t kBatch = 50;
  const auto centers = synth::candidate_centers(ds.geometry());
  if (centers.empty()) throw ProtocolError("clips are too short for a window");
  const std::size_t center = centers[centers.size() / 2];
  FeatureSet out;
  out.rows = ds.size();
  for (std::size_t start = 0; start < ds.size(); start += kBatch) {
    const std::size_t end = std::min(ds.size(), start + kBatch);
    std::vector<synth::ModalityPair> pairs;
    for (std::size_t i = start; i < end; ++i) {
      pairs.push_back(synth::eval_view(synth::extract_pair(ds.clip(i), center), view));
      const auto& c = ds.clip(i);
      out.labels.push_back(task == Task::shape_class ? c.shape_class : c.motion_class);
      out.clip_ids.push_back(c.clip_id);
    }
    std::vector<const synth::ModalityPair*> ptrs;
    for (const auto& p : pairs) ptrs.push_back(&p);
    Tape tape = Tape::inference();
    const Tensor feats = modality == Modality::rgb ? forward_f(tape, model, synth::stack_rgb(ptrs), Mode::eval)
                                                   : forward_g(tape, model, synth::stack_sod(ptrs), Mode::eval);
    out.dim = feats.dim(1);
    out.values.insert(out.values.end(), feats.data().begin(), feats.data().end());
  }
  return out;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Rows of standardized features with a trailing bias column.
MatrixXd design(const FeatureSet& fs, const VectorXd& mean, const VectorXd& scale) {
  MatrixXd x(static_cast<Eigen::Index>(fs.rows), static_cast<Eigen::Index>(fs.dim + 1));
  for (std::size_t r = 0; r < fs.rows; ++r) {
    for (std::size_t d = 0; d < fs.dim; ++d)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = (fs.values[r * fs.dim + d] - mean(d)) / scale(d);
    x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(fs.dim)) = 1.0;
  }
  return x;
}

// Class scores with the last class pinned to zero; w is (D+1) x (C-1).
MatrixXd scores(const MatrixXd& x, const MatrixXd& w) {
  MatrixXd s(x.rows(), w.cols() + 1);
  s.leftCols(w.cols()) = x * w;
  s.col(w.cols()).setZero();
  return s;
}

MatrixXd softmax_rows(const MatrixXd& s) {
  MatrixXd p = s;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

struct Objective {
  const MatrixXd& x;
  const std::vector<int>& y;
  double l2;
  Eigen::Index feat;  // regularized rows: all but the bias row

  double value(const MatrixXd& w) const {
    const MatrixXd s = scores(x, w);
    double loss = 0;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      loss += m + std::log((s.row(r).array() - m).exp().sum()) - s(r, y[static_cast<std::size_t>(r)]);
    }
    return loss / static_cast<double>(x.rows()) + 0.5 * l2 * w.topRows(feat).squaredNorm();
  }
};

}  // namespace

ProbeResult fit_probe(const FeatureSet& train, const FeatureSet& test, std::size_t classes, const ProbeConfig& cfg) {
  if (classes < 2) throw ProtocolError("a probe needs at least two classes");
  if (train.dim != test.dim && test.rows > 0) throw DimensionError("train and test features differ in width");
  if (test.rows == 0) throw ProtocolError("probe test split is empty");
  std::vector<std::size_t> counts(classes, 0);
  for (int l : train.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw ProtocolError("label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw ProtocolError("class " + std::to_string(c) + " is absent from the probe train split");
    if (counts[c] < cfg.min_per_class)
      throw ProtocolError("class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                          " train samples, the probe needs " + std::to_string(cfg.min_per_class));
  }

  const auto d = static_cast<Eigen::Index>(train.dim);
  VectorXd mean = VectorXd::Zero(d), scale = VectorXd::Ones(d);
  for (std::size_t r = 0; r < train.rows; ++r)
    for (Eigen::Index k = 0; k < d; ++k) mean(k) += train.values[r * train.dim + static_cast<std::size_t>(k)];
  mean /= static_cast<double>(train.rows);
  VectorXd var = VectorXd::Zero(d);
  for (std::size_t r = 0; r < train.rows; ++r)
    for (Eigen::Index k = 0; k < d; ++k) {
      const double c = train.values[r * train.dim + static_cast<std::size_t>(k)] - mean(k);
      var(k) += c * c;
    }
  for (Eigen::Index k = 0; k < d; ++k) {
    const double sd = std::sqrt(var(k) / static_cast<double>(train.rows));
    scale(k) = sd > 1e-12 ? sd : 1.0;
  }

  const MatrixXd x = design(train, mean, scale);
  const Eigen::Index n = x.rows(), p = x.cols(), c1 = static_cast<Eigen::Index>(classes) - 1;
  const Objective obj{x, train.labels, cfg.l2, d};
  MatrixXd w = MatrixXd::Zero(p, c1);
  ProbeResult res;
  res.n_train = train.rows;
  res.n_test = test.rows;
  res.seed = cfg.seed;

  double f = obj.value(w);
  for (std::size_t it = 0;; ++it) {
    const MatrixXd prob = softmax_rows(scores(x, w));
    MatrixXd resid = prob.leftCols(c1);
    for (Eigen::Index r = 0; r < n; ++r) {
      const int l = train.labels[static_cast<std::size_t>(r)];
      if (l < c1) resid(r, l) -= 1.0;
    }
    MatrixXd grad = x.transpose() * resid / static_cast<double>(n);
    grad.topRows(d) += cfg.l2 * w.topRows(d);
    res.gradient_norm = grad.norm();
    res.iterations = it;
    if (res.gradient_norm < cfg.gradient_tolerance || it >= cfg.max_iterations) break;

    // Hessian over the flattened (class-major) parameter vector.
    const Eigen::Index m = p * c1;
    MatrixXd hess = MatrixXd::Zero(m, m);
    for (Eigen::Index r = 0; r < n; ++r) {
      const MatrixXd xx = x.row(r).transpose() * x.row(r);
      for (Eigen::Index a = 0; a < c1; ++a)
        for (Eigen::Index b = a; b < c1; ++b) {
          const double wab = (a == b ? prob(r, a) : 0.0) - prob(r, a) * prob(r, b);
          hess.block(a * p, b * p, p, p) += wab * xx;
        }
    }
    for (Eigen::Index a = 0; a < c1; ++a)
      for (Eigen::Index b = a + 1; b < c1; ++b) hess.block(b * p, a * p, p, p) = hess.block(a * p, b * p, p, p);
    hess /= static_cast<double>(n);
    for (Eigen::Index a = 0; a < c1; ++a)
      for (Eigen::Index k = 0; k < d; ++k) hess(a * p + k, a * p + k) += cfg.l2;

    const VectorXd g = Eigen::Map<const VectorXd>(grad.data(), m);
    const VectorXd step = hess.ldlt().solve(-g);
    const double slope = g.dot(step);
    double t = 1.0;
    MatrixXd next;
    double fn = f;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      next = w + t * Eigen::Map<const MatrixXd>(step.data(), p, c1);
      fn = obj.value(next);
      if (fn <= f + 1e-4 * t * slope) break;
    }
    if (!(fn < f)) break;  // no further progress at machine precision
    w = next;
    f = fn;
  }

  const MatrixXd s = scores(design(test, mean, scale), w);
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.cols(); ++c)
      if (s(r, c) > s(r, best)) best = c;
    if (best == test.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(test.rows);
  return res;
}

ProbeResult linear_probe(TwoStreamModel& model, const synth::Dataset& ds, Task task, Modality modality,
                         const synth::SamplerConfig& view, const ProbeConfig& cfg) {
  const auto train = ds.train_split(), test = ds.test_split();
  const std::size_t classes = task == Task::shape_class ? ds.shape_classes() : ds.motion_classes();
  ProbeResult r = fit_probe(extract_features(model, train, modality, task, view),
                            extract_features(model, test, modality, task, view), classes, cfg);
  r.task = task;
  r.modality = modality;
  return r;
}

}  // namespace xmodal::eval
