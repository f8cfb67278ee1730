#include <charconv>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "xmodal/error.hpp"
#include "xmodal/ops.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

namespace {

double cosine_rows_value(std::span<const double> a, std::span<const double> b, double eps) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return 1.0 - ab / (std::sqrt(aa + eps) * std::sqrt(bb + eps));
}

// Mean distance between row r of `a` and row r + offset_b of `b`, r < n.
double mean_row_distance(const Tensor& a, std::size_t offset_a, const Tensor& b, std::size_t offset_b, std::size_t n,
                         double eps) {
  const std::size_t d = a.dim(1);
  double acc = 0;
  for (std::size_t r = 0; r < n; ++r)
    acc += cosine_rows_value(a.data().subspan((offset_a + r) * d, d), b.data().subspan((offset_b + r) * d, d), eps);
  return acc / static_cast<double>(n);
}

// Per-step activation buffers are large; keep them on the heap instead of
// paying fresh-page faults for every mmap-backed allocation.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

double feature_spread(const Tensor& features, double epsilon) {
  if (features.rank() != 2 || features.dim(0) < 2) throw DimensionError("feature_spread needs [N x D] with N >= 2");
  const std::size_t n = features.dim(0), d = features.dim(1);
  double acc = 0;
  std::size_t pairs = 0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t s = r + 1; s < n; ++s, ++pairs)
      acc += cosine_rows_value(features.data().subspan(r * d, d), features.data().subspan(s * d, d), epsilon);
  return acc / static_cast<double>(pairs);
}

bool detect_collapse(std::span<const MetricsRecord> window, double threshold) {
  if (window.size() < kCollapseWindow)
    throw ConfigError("collapse detection needs at least " + std::to_string(kCollapseWindow) + " records");
  double acc = 0;
  for (const auto& r : window) acc += r.feature_spread;
  return acc / static_cast<double>(window.size()) < threshold;
}

std::string metrics_csv_header() {
  return "iteration,loss_total,loss_cross,loss_div,mean_cross_modal_distance,mean_cross_pair_distance_f,"
         "mean_cross_pair_distance_g,feature_spread,lr";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.iteration << ',' << num(r.loss_total) << ',' << num(r.loss_cross) << ',' << num(r.loss_div) << ','
     << num(r.mean_cross_modal_distance) << ',' << num(r.mean_cross_pair_distance_f) << ','
     << num(r.mean_cross_pair_distance_g) << ',' << num(r.feature_spread) << ',' << num(r.lr);
  return os.str();
}

std::string metrics_csv(std::span<const MetricsRecord> log) {
  std::string out = metrics_csv_header() + "\n";
  for (const auto& r : log) out += metrics_csv_row(r) + "\n";
  return out;
}

std::vector<MetricsRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) throw FormatError("metrics CSV header mismatch");
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw FormatError("metrics CSV row with " + std::to_string(cells.size()) + " columns");
    try {
      MetricsRecord r;
      r.iteration = std::stoull(cells[0]);
      double* fields[] = {&r.loss_total, &r.loss_cross, &r.loss_div, &r.mean_cross_modal_distance,
                          &r.mean_cross_pair_distance_f, &r.mean_cross_pair_distance_g, &r.feature_spread, &r.lr};
      for (std::size_t k = 0; k < 8; ++k) *fields[k] = std::stod(cells[k + 1]);
      out.push_back(r);
    } catch (const std::exception&) {
      throw FormatError("unparsable metrics CSV row: " + line);
    }
  }
  return out;
}

void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw DimensionError("sgd_update: parameter, gradient and velocity sizes differ");
  for (std::size_t k = 0; k < param.size(); ++k) {
    velocity[k] = momentum * velocity[k] + grad[k] + weight_decay * param[k];
    param[k] -= lr * velocity[k];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params) : params_(std::move(params)) {
  for (const Parameter* p : params_) velocity_.emplace_back(p->value.numel(), 0.0);
}

void SgdOptimizer::step(double lr, double momentum, double weight_decay) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    const double wd = p.kind == ParamKind::weight ? weight_decay : 0.0;
    sgd_update(p.value.data_mut(), p.value.grad(), velocity_[k], lr, momentum, wd);
  }
}

TrainingAborted::TrainingAborted(std::size_t iteration, MetricsRecord last, const std::string& reason)
    : NumericalError("training aborted at iteration " + std::to_string(iteration) + ": " + reason +
                     " (last metrics: " + metrics_csv_row(last) + ")"),
      iteration_(iteration),
      last_(last) {}

TwoStreamModel init_model_for(const TrainingConfig& cfg, std::uint64_t init_seed) {
  auto sf = EncoderSpec::desk_default(3), sg = EncoderSpec::desk_default(4);
  sf.input_size = sg.input_size = cfg.sampler.crop_size;
  sf.dropout_p = sg.dropout_p = cfg.dropout_p;
  return TwoStreamModel::init(sf, sg, init_seed, cfg.loss_mode == LossMode::concat ? cfg.head_hidden : 0);
}

std::vector<MetricsRecord> train(const synth::Dataset& ds, TwoStreamModel& model, const TrainingConfig& cfg,
                                 const TrainOptions& options) {
  cfg.validate();
  tune_allocator();
  synth::SamplerConfig sampler = cfg.sampler;
  sampler.tuple_count = cfg.tuples;
  sampler.validate(ds.geometry());
  if (cfg.loss_mode == LossMode::concat && !model.head) throw ConfigError("concat mode needs a model with a head");
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  Rng sample_rng(derive_seed(cfg.seed, "sample"));
  Rng augment_rng(derive_seed(cfg.seed, "augment"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  const LossWeights weights = cfg.effective_weights();
  const std::size_t b = cfg.tuples;
  const ConcatLayout layout = concat_layout(b);

  std::vector<Parameter*> params = model.parameters();
  SgdOptimizer optimizer(params);
  std::vector<MetricsRecord> log;
  log.reserve(cfg.total_iterations);
  MetricsRecord last;

  auto save = [&](const std::string& name) {
    if (options.out_dir) model.save((*options.out_dir / name).string());
  };

  for (std::size_t it = 0; it < cfg.total_iterations; ++it) {
    const auto tuples = synth::sample_tuple_batch(ds, sampler, sample_rng);
    std::vector<synth::ModalityPair> pairs;
    pairs.reserve(2 * b);
    for (const auto& t : tuples) pairs.push_back(synth::augment_pair(t.i, sampler, augment_rng));
    for (const auto& t : tuples) pairs.push_back(synth::augment_pair(t.j, sampler, augment_rng));
    std::vector<const synth::ModalityPair*> ptrs;
    for (const auto& p : pairs) ptrs.push_back(&p);
    const Tensor rgb = synth::stack_rgb(ptrs), sod = synth::stack_sod(ptrs);

    MetricsRecord rec;
    rec.iteration = it;
    rec.lr = cfg.lr_at(it);
    for (Parameter* p : params) p->value.zero_grad();
    Tape tape;
    try {
      const Tensor ff = forward_f(tape, model, rgb, Mode::train, &dropout_rng);
      const Tensor gg = forward_g(tape, model, sod, Mode::train, &dropout_rng);

      rec.mean_cross_modal_distance =
          0.5 * (mean_row_distance(ff, 0, gg, 0, b, cfg.epsilon) + mean_row_distance(ff, b, gg, b, b, cfg.epsilon));
      rec.mean_cross_pair_distance_f = mean_row_distance(ff, 0, ff, b, b, cfg.epsilon);
      rec.mean_cross_pair_distance_g = mean_row_distance(gg, 0, gg, b, b, cfg.epsilon);
      rec.feature_spread = feature_spread(ff, cfg.epsilon);

      Tensor loss;
      if (cfg.loss_mode == LossMode::concat) {
        const Tensor fr = ops::gather_rows(tape, ff, layout.rgb_rows);
        const Tensor gr = ops::gather_rows(tape, gg, layout.sod_rows);
        const Tensor logits = model.head->forward(tape, ops::concat_cols(tape, fr, gr));
        loss = loss_concat(tape, logits, layout.labels);
        Tape probe = Tape::inference();
        const TupleBatch tb{ops::slice_rows(probe, ff, 0, b), ops::slice_rows(probe, ff, b, 2 * b),
                            ops::slice_rows(probe, gg, 0, b), ops::slice_rows(probe, gg, b, 2 * b)};
        rec.loss_cross = loss_cross(probe, tb, cfg.epsilon, cfg.distance).item();
        rec.loss_div = loss_div(probe, tb, cfg.epsilon, cfg.distance).item();
      } else {
        const TupleBatch tb{ops::slice_rows(tape, ff, 0, b), ops::slice_rows(tape, ff, b, 2 * b),
                            ops::slice_rows(tape, gg, 0, b), ops::slice_rows(tape, gg, b, 2 * b)};
        loss = loss_combined(tape, tb, weights, cfg.epsilon, cfg.distance);
        Tape probe = Tape::inference();
        rec.loss_cross = loss_cross(probe, tb, cfg.epsilon, cfg.distance).item();
        rec.loss_div = loss_div(probe, tb, cfg.epsilon, cfg.distance).item();
      }
      rec.loss_total = loss.item();
      if (!std::isfinite(rec.loss_total)) throw NumericalError("non-finite loss");
      tape.backward(loss);
    } catch (const TrainingAborted&) {
      throw;
    } catch (const NumericalError& e) {
      throw TrainingAborted(it, last, e.what());
    }
    log.push_back(rec);
    last = rec;
    optimizer.step(rec.lr, cfg.momentum, cfg.weight_decay);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.total_iterations)
      save("ckpt_" + std::to_string(it + 1) + ".xmck");
  }
  save("final.xmck");
  return log;
}

}  // namespace xmodal
