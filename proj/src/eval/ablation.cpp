#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"

namespace xmodal::eval {

namespace {

constexpr Task kTasks[] = {Task::shape_class, Task::motion_class};
constexpr Modality kModalities[] = {Modality::rgb, Modality::sod};

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, const std::string& field) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad " + field + " value '" + s + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& field) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad " + field + " value '" + s + "'");
  return v;
}

}  // namespace

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::full: return "full";
    case Arm::cross_only: return "cross_only";
    case Arm::div_only: return "div_only";
    case Arm::concat: return "concat";
    case Arm::random_init: return "random_init";
  }
  return "?";
}

Arm parse_arm(const std::string& s) {
  for (Arm a : kAllArms)
    if (s == arm_name(a)) return a;
  throw ConfigError("unknown arm '" + s + "' (valid: full, cross_only, div_only, concat, random_init)");
}

std::string AblationReport::to_text() const {
  std::string out;
  for (const auto& r : records) {
    out += "arm=" + r.arm + " task=" + task_name(r.result.task) + " modality=" + modality_name(r.result.modality) +
           " accuracy=" + shortest(r.result.accuracy) + " n_train=" + std::to_string(r.result.n_train) +
           " n_test=" + std::to_string(r.result.n_test) + " seed=" + std::to_string(r.result.seed) +
           " status=" + r.status + "\n";
  }
  return out;
}

AblationReport AblationReport::parse(const std::string& text) {
  AblationReport rep;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::map<std::string, std::string> kv;
    std::istringstream fields(line);
    std::string tok;
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("report line " + std::to_string(line_no) + ": token '" + tok + "'");
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    for (const char* key : {"arm", "task", "modality", "accuracy", "n_train", "n_test", "seed", "status"})
      if (!kv.count(key)) throw FormatError("report line " + std::to_string(line_no) + ": missing " + key);
    if (kv.size() != 8) throw FormatError("report line " + std::to_string(line_no) + ": unexpected field");
    ProbeRecord r;
    r.arm = kv["arm"];
    try {
      r.result.task = parse_task(kv["task"]);
      r.result.modality = parse_modality(kv["modality"]);
    } catch (const ConfigError& e) {
      throw FormatError("report line " + std::to_string(line_no) + ": " + e.what());
    }
    r.result.accuracy = parse_double(kv["accuracy"], "accuracy");
    r.result.n_train = parse_u64(kv["n_train"], "n_train");
    r.result.n_test = parse_u64(kv["n_test"], "n_test");
    r.result.seed = parse_u64(kv["seed"], "seed");
    r.status = kv["status"];
    rep.records.push_back(r);
  }
  return rep;
}

const ProbeRecord* AblationReport::find(const std::string& arm, Task task, Modality modality) const {
  for (const auto& r : records)
    if (r.arm == arm && r.result.task == task && r.result.modality == modality) return &r;
  return nullptr;
}

ArmRun train_arm(const synth::Dataset& train_ds, Arm arm, const TrainingConfig& base) {
  ArmRun run;
  run.arm = arm;
  run.label = arm_name(arm);
  TrainingConfig cfg = base;
  switch (arm) {
    case Arm::full:
    case Arm::random_init: cfg.loss_mode = LossMode::full; break;
    case Arm::cross_only: cfg.loss_mode = LossMode::cross_only; break;
    case Arm::div_only: cfg.loss_mode = LossMode::div_only; break;
    case Arm::concat: cfg.loss_mode = LossMode::concat; break;
  }
  run.model = std::make_shared<TwoStreamModel>(init_model_for(cfg, base.seed));
  if (arm == Arm::random_init) return run;
  try {
    run.metrics = train(train_ds, *run.model, cfg);
  } catch (const TrainingAborted& e) {
    run.status = "failed";
    run.error = e.what();
  }
  return run;
}

AblationReport probe_runs(const std::vector<ArmRun>& runs, const synth::Dataset& ds, const TrainingConfig& base,
                          const ProbeConfig& probe) {
  ProbeConfig pc = probe;
  pc.seed = base.seed;
  AblationReport rep;
  const std::size_t n_train = ds.train_split().size(), n_test = ds.test_split().size();
  for (const auto& run : runs)
    for (Task t : kTasks)
      for (Modality m : kModalities) {
        ProbeRecord r;
        r.arm = run.label;
        r.status = run.status;
        if (run.status == "ok") {
          r.result = linear_probe(*run.model, ds, t, m, base.sampler, pc);
        } else {
          r.result.task = t;
          r.result.modality = m;
          r.result.accuracy = std::numeric_limits<double>::quiet_NaN();
          r.result.n_train = n_train;
          r.result.n_test = n_test;
          r.result.seed = pc.seed;
        }
        rep.records.push_back(r);
      }
  return rep;
}

AblationOutput run_ablation(const synth::Dataset& ds, const TrainingConfig& base, const ProbeConfig& probe,
                            std::span<const Arm> arms) {
  const synth::Dataset train_ds = ds.train_split();
  AblationOutput out;
  for (Arm a : arms) out.runs.push_back(train_arm(train_ds, a, base));
  out.report = probe_runs(out.runs, ds, base, probe);
  return out;
}

AblationOutput run_weight_sweep(const synth::Dataset& ds, const TrainingConfig& base, const ProbeConfig& probe,
                                std::span<const LossWeights> weights) {
  const synth::Dataset train_ds = ds.train_split();
  AblationOutput out;
  for (const auto& w : weights) {
    TrainingConfig cfg = base;
    cfg.loss_weights = w;
    ArmRun run = train_arm(train_ds, Arm::full, cfg);
    run.label = "full_w" + shortest(w.cross) + "-" + shortest(w.div);
    out.runs.push_back(std::move(run));
  }
  out.report = probe_runs(out.runs, ds, base, probe);
  return out;
}

std::string render_table(const AblationReport& report) {
  static const std::pair<const char*, const char*> kRows[] = {{"random_init", "Random weights"},
                                                             {"div_only", "Only L_div"},
                                                             {"cross_only", "Only L_cross"},
                                                             {"concat", "Concat"},
                                                             {"full", "Our"}};
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& [arm, label] : kRows)
    for (const auto& r : report.records)
      if (r.arm == arm) {
        rows.emplace_back(arm, label);
        break;
      }
  for (const auto& r : report.records) {
    bool seen = false;
    for (const auto& row : rows) seen = seen || row.first == r.arm;
    if (!seen) rows.emplace_back(r.arm, r.arm);
  }

  char buf[128];
  std::string out;
  std::snprintf(buf, sizeof buf, "%-16s %12s %12s %12s %12s\n", "method", "shape/rgb", "shape/sod", "motion/rgb",
                "motion/sod");
  out += buf;
  for (const auto& [arm, label] : rows) {
    std::snprintf(buf, sizeof buf, "%-16s", label.c_str());
    out += buf;
    for (Task t : kTasks)
      for (Modality m : kModalities) {
        const ProbeRecord* r = report.find(arm, t, m);
        if (!r)
          std::snprintf(buf, sizeof buf, " %12s", "-");
        else if (r->status != "ok")
          std::snprintf(buf, sizeof buf, " %12s", r->status.c_str());
        else
          std::snprintf(buf, sizeof buf, " %12s", shortest(r->result.accuracy).c_str());
        out += buf;
      }
    out += "\n";
  }
  return out;
}

}  // namespace xmodal::eval
