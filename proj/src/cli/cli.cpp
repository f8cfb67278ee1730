#include "xmodal/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <sstream>

#include "xmodal/binary_io.hpp"
#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Thrown for bad inputs discovered after argument parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (char& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

std::vector<std::pair<std::string, std::string>> config_pairs(const TrainingConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("XMODAL_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const auto s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw UsageError(std::string("XMODAL_SEED is not an unsigned integer: '") + v + "'");
  return s;
}

std::string describe(const std::string& key) {
  static const std::map<std::string, std::string> kText = {
      {"tuples", "tuples per batch (2 clips each)"},
      {"epsilon", "norm epsilon of the distance"},
      {"lr_initial", "initial learning rate"},
      {"lr_drop_factor", "learning-rate multiplier at the drop"},
      {"lr_drop_iteration", "iteration of the learning-rate drop"},
      {"total_iterations", "training iterations"},
      {"momentum", "SGD momentum"},
      {"weight_decay", "L2 decay on weights (not biases or batchnorm)"},
      {"loss_mode", "training objective"},
      {"weight_cross", "weight of the cross-modal term"},
      {"weight_div", "weight of the diversity term"},
      {"distance", "cosine or euclidean"},
      {"seed", "sampling/augmentation seed, also the default init seed"},
      {"checkpoint_every", "checkpoint period in iterations, 0 for final only"},
      {"head_hidden", "hidden width of the concat head"},
      {"dropout_p", "dropout between fully connected layers"},
      {"magnitude_weighting", "draw windows proportional to motion"},
      {"crop_size", "square crop side"},
      {"random_crop", "random crop position (else center)"},
      {"horizontal_flip", "random horizontal flip"},
      {"temporal_flip", "random temporal flip of the difference stack"},
      {"channel_split", "feed one random RGB channel as gray"},
      {"mean_subtract_sod", "subtract the per-stack mean from differences"},
  };
  const auto it = kText.find(key);
  return it == kText.end() ? key : it->second;
}

/// Training flags mirror every TrainingConfig key. Values are applied over
/// the defaults, then the XMODAL_SEED default, then --config, then flags.
class ConfigFlags {
 public:
  void attach(CLI::App& app, bool with_aliases) {
    app.add_option("--config", config_path_, "key=value training config file");
    const TrainingConfig defaults;
    for (const auto& [key, value] : config_pairs(defaults)) {
      std::string names = flag_name(key);
      if (with_aliases) {
        if (key == "loss_mode") names += ",--mode";
        if (key == "total_iterations") names += ",--iters";
        if (key == "lr_initial") names += ",--lr";
      }
      std::string shown = value;
      if (key == "lr_drop_iteration") shown = "3/4 of total_iterations";
      if (key == "loss_mode") shown += " (" + std::string(kLossModeList) + ")";
      if (key == "seed") shown += " or $XMODAL_SEED";
      auto* opt = app.add_option(names, values_[key], describe(key))->default_str(shown)->type_name("");
      options_[key] = opt;
    }
  }

  TrainingConfig resolve() const {
    TrainingConfig cfg;
    if (const auto s = env_seed()) cfg.seed = *s;
    if (!config_path_.empty()) {
      if (!fs::exists(config_path_)) throw UsageError("config file not found: " + config_path_);
      cfg = TrainingConfig::from_text(io::read_file(config_path_), cfg);
    }
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) cfg.set(key, values_.at(key));
    cfg.validate();
    return cfg;
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> options_;
};

/// Collects the run manifest; output hashes are taken when write() runs.
class Manifest {
 public:
  explicit Manifest(std::string command) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["outputs"] = json::array();
  }
  void set(const std::string& key, json v) { j_[key] = std::move(v); }
  void input(const std::string& role, const std::string& path) {
    j_["inputs"][role] = {{"path", path}, {"fnv1a64", io::hex64(io::fnv1a64(io::read_file(path)))}};
  }
  void output(const std::string& role, const std::string& path) { outputs_.emplace_back(role, path); }
  void write(const std::string& path) {
    for (const auto& [role, p] : outputs_)
      j_["outputs"].push_back({{"role", role}, {"path", p}, {"fnv1a64", io::hex64(io::fnv1a64(io::read_file(p)))}});
    j_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::write_file(path, j_.dump(2) + "\n");
  }

 private:
  json j_;
  std::vector<std::pair<std::string, std::string>> outputs_;
  std::chrono::steady_clock::time_point start_;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec || !fs::is_directory(path)) throw UsageError("cannot create output directory " + path);
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::size_t clips = 600;
  std::optional<std::uint64_t> seed;
  std::string out;
  synth::DatasetSpec dist;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  auto& g = a.dist.geometry;
  app.add_option("--clips", a.clips, "number of clips")->capture_default_str();
  app.add_option("--seed", a.seed, "generation seed")->default_str("0 or $XMODAL_SEED");
  app.add_option("-o,--out", a.out, "dataset file to write")->required();
  app.add_option("--height", g.height, "frame height")->capture_default_str();
  app.add_option("--width", g.width, "frame width")->capture_default_str();
  app.add_option("--frames", g.frame_count, "frames per clip")->capture_default_str();
  app.add_option("--shape-classes", a.dist.shape_classes, "number of shape classes")->capture_default_str();
  app.add_option("--motion-classes", a.dist.motion_classes, "number of motion classes")->capture_default_str();
  app.add_option("--min-speed", a.dist.min_speed, "minimum pixels per frame")->capture_default_str();
  app.add_option("--max-speed", a.dist.max_speed, "maximum pixels per frame")->capture_default_str();
  app.add_option("--pause-probability", a.dist.pause_probability, "per-frame pause probability")
      ->capture_default_str();
  app.add_option("--min-size", a.dist.min_size, "minimum shape size")->capture_default_str();
  app.add_option("--max-size", a.dist.max_size, "maximum shape size")->capture_default_str();
}

int run_generate(const GenerateArgs& a, std::ostream& out) {
  if (a.clips < 2) throw UsageError("need >= 2 clips (got " + std::to_string(a.clips) + ")");
  a.dist.validate();
  const std::uint64_t seed = a.seed ? *a.seed : env_seed().value_or(0);
  Manifest m("generate");
  const auto ds = synth::generate_dataset(a.clips, a.dist, seed);
  const fs::path parent = fs::path(a.out).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  ds.save(a.out);
  m.set("seed", seed);
  m.set("clips", a.clips);
  m.output("dataset", a.out);
  m.write(a.out + ".manifest.json");
  out << "wrote " << a.out << " (" << ds.size() << " clips, fnv1a64 " << io::hex64(io::fnv1a64(io::read_file(a.out)))
      << ")\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::uint64_t> init_seed;
  ConfigFlags flags;
};

int run_train(TrainArgs& a, std::ostream& out) {
  require_file(a.data, "dataset");
  const TrainingConfig cfg = a.flags.resolve();
  const auto ds = synth::Dataset::load(a.data);
  ensure_dir(a.out);
  Manifest m("train");
  m.input("dataset", a.data);
  const std::uint64_t init_seed = a.init_seed.value_or(cfg.seed);
  auto model = init_model_for(cfg, init_seed);
  TrainOptions opt;
  opt.out_dir = a.out;
  const auto log = train(ds.train_split(), model, cfg, opt);

  const std::string cfg_path = (fs::path(a.out) / "config.txt").string();
  const std::string csv_path = (fs::path(a.out) / "metrics.csv").string();
  io::write_file(cfg_path, cfg.to_text());
  io::write_file(csv_path, metrics_csv(log));
  m.set("config", cfg.to_text());
  m.set("init_seed", init_seed);
  m.output("config", cfg_path);
  m.output("metrics", csv_path);
  json ckpts = json::array();
  for (const auto& entry : fs::directory_iterator(a.out))
    if (entry.path().extension() == ".xmck") ckpts.push_back(entry.path().string());
  std::sort(ckpts.begin(), ckpts.end());
  for (const auto& c : ckpts) m.output("checkpoint", c.get<std::string>());
  m.set("checkpoints", ckpts);
  m.set("metrics", csv_path);
  m.write((fs::path(a.out) / "manifest.json").string());
  if (!log.empty()) out << metrics_csv_header() << "\n" << metrics_csv_row(log.back()) << "\n";
  out << "wrote " << (fs::path(a.out) / "final.xmck").string() << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string task = "all";
  std::string modality = "all";
  std::size_t k = 1;
  std::string label = "model";
  std::string out;
  std::string saliency_dir;
  std::size_t saliency_count = 4;
  std::size_t top_n = 100;
  bool guided = false;
  std::size_t min_per_class = eval::ProbeConfig{}.min_per_class;
  ConfigFlags flags;
};

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int run_eval(EvalArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  require_file(a.data, "dataset");
  TrainingConfig cfg = a.flags.resolve();
  auto model = TwoStreamModel::load(a.checkpoint);
  const auto ds = synth::Dataset::load(a.data);
  synth::SamplerConfig view = cfg.sampler;
  view.crop_size = model.f.spec().input_size;
  view.validate(ds.geometry());
  const auto test = ds.test_split();
  if (a.k >= test.size())
    throw UsageError("k=" + std::to_string(a.k) + " must be below the eval set size " + std::to_string(test.size()));

  std::vector<eval::Task> tasks;
  std::vector<eval::Modality> mods;
  if (a.task == "all") tasks = {eval::Task::shape_class, eval::Task::motion_class};
  else tasks = {eval::parse_task(a.task)};
  if (a.modality == "all") mods = {eval::Modality::rgb, eval::Modality::sod};
  else mods = {eval::parse_modality(a.modality)};

  Manifest m("eval");
  m.input("checkpoint", a.checkpoint);
  m.input("dataset", a.data);
  eval::AblationReport rep;
  eval::ProbeConfig pc;
  pc.seed = cfg.seed;
  pc.min_per_class = a.min_per_class;
  for (auto t : tasks)
    for (auto mo : mods) rep.records.push_back({a.label, eval::linear_probe(model, ds, t, mo, view, pc), "ok"});
  std::string text = rep.to_text();
  const auto r = eval::crossmodal_retrieval(model, test, a.k, view);
  text += "retrieval label=" + a.label + " k=" + std::to_string(r.k) + " n=" + std::to_string(r.n) +
          " rgb_to_sod=" + shortest(r.rgb_to_sod) + " sod_to_rgb=" + shortest(r.sod_to_rgb) + "\n";

  if (!a.saliency_dir.empty()) {
    ensure_dir(a.saliency_dir);
    const auto centers = synth::candidate_centers(ds.geometry());
    const std::size_t center = centers[centers.size() / 2];
    const std::size_t top = (ds.geometry().height - view.crop_size) / 2;
    const std::size_t left = (ds.geometry().width - view.crop_size) / 2;
    for (std::size_t i = 0; i < std::min(a.saliency_count, test.size()); ++i) {
      const auto& clip = test.clip(i);
      const auto pair = synth::eval_view(synth::extract_pair(clip, center), view);
      const Tensor map = eval::saliency(model, pair, {a.top_n, a.guided});
      const std::string stem = (fs::path(a.saliency_dir) / ("clip_" + std::to_string(clip.clip_id))).string();
      eval::write_pgm(stem + ".pgm", map);
      eval::write_raw(stem + ".raw", map);
      m.output("saliency", stem + ".pgm");
      m.output("saliency", stem + ".raw");
      // Loaded datasets carry no boxes; the static-background footprint stands in.
      std::optional<synth::Box> box;
      if (clip.object_boxes.size() > center) box = clip.object_boxes[center];
      else box = synth::estimate_object_box(clip, center);
      std::string ratio = "nan";
      if (box) {
        box->x -= static_cast<int>(left);
        box->y -= static_cast<int>(top);
        try {
          ratio = shortest(eval::saliency_box_ratio(map, *box));
        } catch (const ProtocolError&) {
        }
      }
      text += "saliency label=" + a.label + " clip=" + std::to_string(clip.clip_id) + " box_ratio=" + ratio + "\n";
    }
  }
  out << text;
  if (!a.out.empty()) {
    io::write_file(a.out, text);
    m.output("report", a.out);
    m.set("config", cfg.to_text());
    m.write(a.out + ".manifest.json");
  }
  return kExitOk;
}

// ---- ablate ---------------------------------------------------------------

struct AblateArgs {
  std::string data;
  std::string out;
  std::vector<std::string> arms;
  bool sweep = false;
  std::size_t min_per_class = eval::ProbeConfig{}.min_per_class;
  ConfigFlags flags;
};

void save_runs(const std::vector<eval::ArmRun>& runs, const std::string& dir, Manifest& m) {
  for (const auto& run : runs) {
    const fs::path sub = fs::path(dir) / run.label;
    ensure_dir(sub.string());
    const std::string ckpt = (sub / "final.xmck").string(), csv = (sub / "metrics.csv").string();
    if (run.status == "ok") {
      run.model->save(ckpt);
      m.output("checkpoint", ckpt);
    }
    io::write_file(csv, metrics_csv(run.metrics));
    m.output("metrics", csv);
  }
}

int run_ablate(AblateArgs& a, std::ostream& out) {
  require_file(a.data, "dataset");
  const TrainingConfig cfg = a.flags.resolve();
  std::vector<eval::Arm> arms;
  if (a.arms.empty()) arms.assign(std::begin(eval::kAllArms), std::end(eval::kAllArms));
  for (const auto& s : a.arms) arms.push_back(eval::parse_arm(s));
  const auto ds = synth::Dataset::load(a.data);
  ensure_dir(a.out);
  Manifest m("ablate");
  m.input("dataset", a.data);
  m.set("config", cfg.to_text());

  eval::ProbeConfig probe;
  probe.min_per_class = a.min_per_class;
  const auto result = eval::run_ablation(ds, cfg, probe, arms);
  save_runs(result.runs, a.out, m);
  const std::string report = (fs::path(a.out) / "report.txt").string();
  const std::string table = (fs::path(a.out) / "table.txt").string();
  io::write_file(report, result.report.to_text());
  io::write_file(table, eval::render_table(result.report));
  m.output("report", report);
  m.output("table", table);
  for (const auto& run : result.runs)
    if (run.status != "ok") out << "arm " << run.label << " failed: " << run.error << "\n";
  out << eval::render_table(result.report);

  if (a.sweep) {
    const LossWeights weights[] = {{2, 1}, {1, 1}, {1, 2}};
    const auto sw = eval::run_weight_sweep(ds, cfg, probe, weights);
    save_runs(sw.runs, a.out, m);
    const std::string sreport = (fs::path(a.out) / "sweep_report.txt").string();
    io::write_file(sreport, sw.report.to_text());
    m.output("sweep_report", sreport);
    out << eval::render_table(sw.report);
  }
  m.write((fs::path(a.out) / "manifest.json").string());
  return kExitOk;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::string input;
  std::string out;
};

int run_report(const ReportArgs& a, std::ostream& out) {
  require_file(a.input, "report");
  const std::string table = eval::render_table(eval::AblationReport::parse(io::read_file(a.input)));
  out << table;
  if (!a.out.empty()) io::write_file(a.out, table);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Two-stream cross-modal self-supervision on synthetic clips", "xmodal");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "render a synthetic clip dataset");
  add_generate(*g, gen);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "pretrain both streams on the dataset's train split");
  t->add_option("--data", tr.data, "dataset file")->required();
  t->add_option("-o,--out", tr.out, "output directory")->required();
  t->add_option("--init-seed", tr.init_seed, "model initialization seed")->default_str("training seed");
  tr.flags.attach(*t, true);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "probe, retrieval and saliency for one checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ev.data, "dataset file")->required();
  e->add_option("--task", ev.task, "shape_class, motion_class or all")->capture_default_str();
  e->add_option("--modality", ev.modality, "rgb, sod or all")->capture_default_str();
  e->add_option("-k", ev.k, "retrieval cutoff")->capture_default_str();
  e->add_option("--label", ev.label, "arm label written into records")->capture_default_str();
  e->add_option("-o,--out", ev.out, "report file (also printed)");
  e->add_option("--saliency-dir", ev.saliency_dir, "write saliency maps here");
  e->add_option("--saliency-count", ev.saliency_count, "test clips to map")->capture_default_str();
  e->add_option("--top-n", ev.top_n, "strongest final-conv activations")->capture_default_str();
  e->add_flag("--guided", ev.guided, "guided ReLU backward");
  e->add_option("--min-per-class", ev.min_per_class, "train samples required per class")->capture_default_str();
  ev.flags.attach(*e, false);

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and probe every ablation arm");
  a->add_option("--data", ab.data, "dataset file")->required();
  a->add_option("-o,--out", ab.out, "output directory")->required();
  a->add_option("--arms", ab.arms, "subset of full, cross_only, div_only, concat, random_init")->default_str("all");
  a->add_flag("--sweep", ab.sweep, "also run the (2,1), (1,1), (1,2) loss-weight sweep");
  a->add_option("--min-per-class", ab.min_per_class, "train samples required per class")->capture_default_str();
  ab.flags.attach(*a, true);

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "render an ablation report as a table");
  r->add_option("input", rp.input, "report file")->required();
  r->add_option("-o,--out", rp.out, "table file (also printed)");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return run_generate(gen, out);
    if (*t) return run_train(tr, out);
    if (*e) return run_eval(ev, out);
    if (*a) return run_ablate(ab, out);
    if (*r) return run_report(rp, out);
  } catch (const TrainingAborted& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const NumericalError& ex) {
    err << "error: numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace xmodal::cli
