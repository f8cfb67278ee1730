#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/model.hpp"
#include "xmodal/sampler.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal::eval {

enum class Task { shape_class, motion_class };
enum class Modality { rgb, sod };
const char* task_name(Task t);
const char* modality_name(Modality m);
Task parse_task(const std::string& s);
Modality parse_modality(const std::string& s);

/// Row-major feature matrix with labels and clip ids per row.
struct FeatureSet {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<int> labels;
  std::vector<std::uint32_t> clip_ids;

  std::span<const double> row(std::size_t r) const { return std::span<const double>(values).subspan(r * dim, dim); }
};

// One eval-mode feature row per clip: middle candidate window, eval view.
FeatureSet extract_features(TwoStreamModel& model, const synth::Dataset& ds, Modality modality, Task task,
                            const synth::SamplerConfig& view);

struct ProbeConfig {
  double l2 = 1e-4;
  std::size_t max_iterations = 100;
  double gradient_tolerance = 1e-6;
  std::size_t min_per_class = 10;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  Task task = Task::shape_class;
  Modality modality = Modality::rgb;
  double accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

/// Multinomial logistic regression on standardized features, fitted by
/// damped Newton steps. Returns held-out accuracy.
ProbeResult fit_probe(const FeatureSet& train, const FeatureSet& test, std::size_t classes, const ProbeConfig& cfg);

// Features of the frozen encoder on the dataset's train/test splits.
ProbeResult linear_probe(TwoStreamModel& model, const synth::Dataset& ds, Task task, Modality modality,
                         const synth::SamplerConfig& view, const ProbeConfig& cfg);

struct RetrievalResult {
  std::size_t k = 1;
  std::size_t n = 0;
  double rgb_to_sod = 0.0;
  double sod_to_rgb = 0.0;
};

inline constexpr double kRetrievalEpsilon = 1e-10;

// Query row r's partner is key row r. Candidates are ranked by cosine
// distance, ties by lower clip id.
double recall_at_k(const FeatureSet& queries, const FeatureSet& keys, std::size_t k);

RetrievalResult crossmodal_retrieval(TwoStreamModel& model, const synth::Dataset& ds, std::size_t k,
                                     const synth::SamplerConfig& view);

struct SaliencyOptions {
  std::size_t top_n = 100;
  bool guided = false;
};

// |d(sum of the top_n final-conv activations)/d rgb| for one eval view.
Tensor saliency(TwoStreamModel& model, const synth::ModalityPair& pair, const SaliencyOptions& options);

// Mean saliency per pixel inside the box over the mean outside it (channels
// summed). Box coordinates are in the map's frame.
double saliency_box_ratio(const Tensor& map, const synth::Box& box);

// 8-bit binary graymap of the channel maximum, scaled to the map maximum.
void write_pgm(const std::string& path, const Tensor& map);
// Raw little-endian f64 values in tensor order.
void write_raw(const std::string& path, const Tensor& map);

// ---- Ablation -----------------------------------------------------------

enum class Arm { full, cross_only, div_only, concat, random_init };
const char* arm_name(Arm a);
Arm parse_arm(const std::string& s);
inline constexpr Arm kAllArms[] = {Arm::full, Arm::cross_only, Arm::div_only, Arm::concat, Arm::random_init};

struct ProbeRecord {
  std::string arm;
  ProbeResult result;
  std::string status = "ok";
};

struct AblationReport {
  std::vector<ProbeRecord> records;

  std::string to_text() const;
  static AblationReport parse(const std::string& text);
  const ProbeRecord* find(const std::string& arm, Task task, Modality modality) const;
};

struct ArmRun {
  Arm arm = Arm::full;
  std::string label;  // arm name, or a weight-sweep tag
  std::string status = "ok";
  std::string error;
  std::shared_ptr<TwoStreamModel> model;
  std::vector<MetricsRecord> metrics;
};

// Trains one arm from the shared init seed (random_init skips training).
ArmRun train_arm(const synth::Dataset& train_ds, Arm arm, const TrainingConfig& base);

// Probes every task x modality for every run.
AblationReport probe_runs(const std::vector<ArmRun>& runs, const synth::Dataset& ds, const TrainingConfig& base,
                          const ProbeConfig& probe);

struct AblationOutput {
  AblationReport report;
  std::vector<ArmRun> runs;
};

// Pretrains on the train split only; probes against the held-out split.
AblationOutput run_ablation(const synth::Dataset& ds, const TrainingConfig& base, const ProbeConfig& probe,
                            std::span<const Arm> arms = kAllArms);

// Full-loss runs for each weight pair, labelled full_w<cross>-<div>.
AblationOutput run_weight_sweep(const synth::Dataset& ds, const TrainingConfig& base, const ProbeConfig& probe,
                                std::span<const LossWeights> weights);

// Plain-text table: one row per arm (Random weights / Only L_div / ... / Our),
// one column per task x modality.
std::string render_table(const AblationReport& report);

}  // namespace xmodal::eval
