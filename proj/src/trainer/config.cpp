#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "xmodal/error.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

namespace {

std::string num(double v) {
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* boolean(bool v) { return v ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

}  // namespace

const char* loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::full: return "full";
    case LossMode::cross_only: return "cross_only";
    case LossMode::div_only: return "div_only";
    case LossMode::concat: return "concat";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  for (LossMode m : {LossMode::full, LossMode::cross_only, LossMode::div_only, LossMode::concat})
    if (name == loss_mode_name(m)) return m;
  throw ConfigError("unknown loss mode '" + name + "' (valid: " + kLossModeList + ")");
}

std::size_t TrainingConfig::drop_iteration() const {
  return lr_drop_iteration ? *lr_drop_iteration : total_iterations * 3 / 4;
}

double TrainingConfig::lr_at(std::size_t iteration) const {
  return iteration < drop_iteration() ? lr_initial : lr_initial * lr_drop_factor;
}

LossWeights TrainingConfig::effective_weights() const {
  switch (loss_mode) {
    case LossMode::cross_only: return {1.0, 0.0};
    case LossMode::div_only: return {0.0, 1.0};
    default: return loss_weights;
  }
}

void TrainingConfig::validate() const {
  if (tuples == 0) throw ConfigError("tuples must be positive");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (!(lr_initial > 0)) throw ConfigError("lr_initial must be positive");
  if (!(lr_drop_factor > 0)) throw ConfigError("lr_drop_factor must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (loss_mode == LossMode::full) loss_weights.validate();
  if (loss_mode == LossMode::concat && head_hidden == 0) throw ConfigError("concat mode needs head_hidden > 0");
  if (!(dropout_p >= 0 && dropout_p < 1)) throw ConfigError("dropout_p must be in [0, 1)");
}

std::string TrainingConfig::to_text() const {
  std::ostringstream os;
  os << "tuples=" << tuples << '\n'
     << "epsilon=" << num(epsilon) << '\n'
     << "lr_initial=" << num(lr_initial) << '\n'
     << "lr_drop_factor=" << num(lr_drop_factor) << '\n'
     << "lr_drop_iteration=" << drop_iteration() << '\n'
     << "total_iterations=" << total_iterations << '\n'
     << "momentum=" << num(momentum) << '\n'
     << "weight_decay=" << num(weight_decay) << '\n'
     << "loss_mode=" << loss_mode_name(loss_mode) << '\n'
     << "weight_cross=" << num(loss_weights.cross) << '\n'
     << "weight_div=" << num(loss_weights.div) << '\n'
     << "distance=" << (distance == DistanceKind::cosine ? "cosine" : "euclidean") << '\n'
     << "seed=" << seed << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "head_hidden=" << head_hidden << '\n'
     << "dropout_p=" << num(dropout_p) << '\n'
     << "magnitude_weighting=" << boolean(sampler.magnitude_weighting) << '\n'
     << "crop_size=" << sampler.crop_size << '\n'
     << "random_crop=" << boolean(sampler.random_crop) << '\n'
     << "horizontal_flip=" << boolean(sampler.horizontal_flip) << '\n'
     << "temporal_flip=" << boolean(sampler.temporal_flip) << '\n'
     << "channel_split=" << boolean(sampler.channel_split) << '\n'
     << "mean_subtract_sod=" << boolean(sampler.mean_subtract_sod) << '\n';
  return os.str();
}

void TrainingConfig::set(const std::string& key, const std::string& v) {
  if (key == "tuples") tuples = parse_uint(key, v);
  else if (key == "epsilon") epsilon = parse_double(key, v);
  else if (key == "lr_initial") lr_initial = parse_double(key, v);
  else if (key == "lr_drop_factor") lr_drop_factor = parse_double(key, v);
  else if (key == "lr_drop_iteration") {
    if (v == "auto") lr_drop_iteration.reset();
    else lr_drop_iteration = parse_uint(key, v);
  } else if (key == "total_iterations") total_iterations = parse_uint(key, v);
  else if (key == "momentum") momentum = parse_double(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "loss_mode") loss_mode = parse_loss_mode(v);
  else if (key == "weight_cross") loss_weights.cross = parse_double(key, v);
  else if (key == "weight_div") loss_weights.div = parse_double(key, v);
  else if (key == "distance") {
    if (v == "cosine") distance = DistanceKind::cosine;
    else if (v == "euclidean") distance = DistanceKind::euclidean;
    else throw ConfigError("distance: expected cosine or euclidean, got '" + v + "'");
  } else if (key == "seed") seed = parse_uint(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_uint(key, v);
  else if (key == "head_hidden") head_hidden = parse_uint(key, v);
  else if (key == "dropout_p") dropout_p = parse_double(key, v);
  else if (key == "magnitude_weighting") sampler.magnitude_weighting = parse_bool(key, v);
  else if (key == "crop_size") sampler.crop_size = parse_uint(key, v);
  else if (key == "random_crop") sampler.random_crop = parse_bool(key, v);
  else if (key == "horizontal_flip") sampler.horizontal_flip = parse_bool(key, v);
  else if (key == "temporal_flip") sampler.temporal_flip = parse_bool(key, v);
  else if (key == "channel_split") sampler.channel_split = parse_bool(key, v);
  else if (key == "mean_subtract_sod") sampler.mean_subtract_sod = parse_bool(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainingConfig TrainingConfig::from_text(const std::string& text, TrainingConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " has no '='");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainingConfig TrainingConfig::from_text(const std::string& text) { return from_text(text, TrainingConfig{}); }

}  // namespace xmodal
