#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/sampler.hpp"
#include "xmodal/synth.hpp"

namespace xmodal {

enum class LossMode { full, cross_only, div_only, concat };

const char* loss_mode_name(LossMode mode);
// Throws ConfigError listing the valid modes.
LossMode parse_loss_mode(const std::string& name);
inline constexpr const char* kLossModeList = "full, cross_only, div_only, concat";

struct TrainingConfig {
  std::size_t tuples = 30;
  double epsilon = 1e-5;
  double lr_initial = 0.01;
  double lr_drop_factor = 0.1;
  std::optional<std::size_t> lr_drop_iteration;  // default: 3/4 of total_iterations
  std::size_t total_iterations = 4000;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LossMode loss_mode = LossMode::full;
  LossWeights loss_weights;
  DistanceKind distance = DistanceKind::cosine;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t head_hidden = 128;
  double dropout_p = 0.0;
  synth::SamplerConfig sampler;

  std::size_t drop_iteration() const;
  double lr_at(std::size_t iteration) const;
  // Weights actually applied for the configured mode.
  LossWeights effective_weights() const;
  void validate() const;

  // "key=value" lines; from_text starts from `base` and overrides the keys
  // it finds. Unknown keys are a ConfigError.
  std::string to_text() const;
  static TrainingConfig from_text(const std::string& text, TrainingConfig base);
  static TrainingConfig from_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
};

struct MetricsRecord {
  std::size_t iteration = 0;
  double loss_total = 0;
  double loss_cross = 0;
  double loss_div = 0;
  double mean_cross_modal_distance = 0;
  double mean_cross_pair_distance_f = 0;
  double mean_cross_pair_distance_g = 0;
  double feature_spread = 0;
  double lr = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
std::string metrics_csv(std::span<const MetricsRecord> log);
std::vector<MetricsRecord> parse_metrics_csv(const std::string& text);

// Mean pairwise cosine distance between the rows of a [N x D] matrix.
double feature_spread(const Tensor& features, double epsilon);

inline constexpr double kCollapseThreshold = 0.05;
inline constexpr std::size_t kCollapseWindow = 100;
// Mean feature_spread over the window below the threshold. Needs at least
// kCollapseWindow records.
bool detect_collapse(std::span<const MetricsRecord> window, double threshold = kCollapseThreshold);

// v <- momentum v + grad + weight_decay param; param <- param - lr v.
void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                double momentum, double weight_decay);

/// SGD with momentum over a fixed parameter list. Weight decay applies to
/// ParamKind::weight only.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(std::vector<Parameter*> params);
  void step(double lr, double momentum, double weight_decay);
  const std::vector<std::vector<double>>& velocity() const { return velocity_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> velocity_;
};

class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(std::size_t iteration, MetricsRecord last, const std::string& reason);
  std::size_t iteration() const { return iteration_; }
  const MetricsRecord& last_metrics() const { return last_; }

 private:
  std::size_t iteration_;
  MetricsRecord last_;
};

struct TrainOptions {
  // Checkpoints go here as ckpt_<iteration>.xmck and final.xmck when set.
  std::optional<std::filesystem::path> out_dir;
};

// Builds a model matching the config (concat mode gets a head).
TwoStreamModel init_model_for(const TrainingConfig& cfg, std::uint64_t init_seed);

// Runs cfg.total_iterations steps on `ds` and returns one record per step,
// measured before that step's update.
std::vector<MetricsRecord> train(const synth::Dataset& ds, TwoStreamModel& model, const TrainingConfig& cfg,
                                 const TrainOptions& options = {});

}  // namespace xmodal
