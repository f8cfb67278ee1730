#include "xmodal/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "xmodal/error.hpp"

namespace xmodal {

namespace {

Tensor uniform_weight(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor filled(std::size_t n, double value) { return Tensor({n}, std::vector<double>(n, value), true); }

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

EncoderSpec EncoderSpec::desk_default(std::size_t input_channels) {
  EncoderSpec s;
  s.input_channels = input_channels;
  s.input_size = 32;
  s.conv = {{16, 5, 2, true}, {32, 3, 2, true}, {64, 3, 2, true}};
  s.fc = {128, 64};
  return s;
}

std::vector<std::size_t> EncoderSpec::spatial_sizes() const {
  std::vector<std::size_t> out;
  std::size_t s = input_size;
  for (const auto& c : conv) {
    if (c.kernel == 0 || c.stride == 0 || c.kernel > s) throw ConfigError("conv layer does not fit its input");
    s = (s - c.kernel) / c.stride + 1;
    out.push_back(s);
  }
  return out;
}

std::size_t EncoderSpec::final_conv_units() const {
  if (conv.empty()) return input_channels * input_size * input_size;
  const std::size_t s = spatial_sizes().back();
  return conv.back().out_channels * s * s;
}

void EncoderSpec::validate() const {
  if (input_channels == 0 || input_size == 0) throw ConfigError("encoder input must be non-empty");
  for (const auto& c : conv)
    if (c.out_channels == 0) throw ConfigError("conv layer with zero output channels");
  spatial_sizes();
  if (fc.empty()) throw ConfigError("encoder needs at least one fc layer (the feature tap)");
  for (std::size_t w : fc)
    if (w == 0) throw ConfigError("fc layer with zero width");
  if (feature_dim() < 2) throw ConfigError("feature dimension must be at least 2");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
}

std::string EncoderSpec::canonical_text(bool with_input_channels) const {
  std::ostringstream os;
  if (with_input_channels) os << "input_channels=" << input_channels << '\n';
  os << "input_size=" << input_size << '\n';
  for (const auto& c : conv)
    os << "conv=" << c.out_channels << ',' << c.kernel << ',' << c.stride << ',' << (c.batchnorm ? 1 : 0) << '\n';
  for (std::size_t w : fc) os << "fc=" << w << '\n';
  os << "dropout_p=" << fmt_double(dropout_p) << '\n';
  return os.str();
}

EncoderSpec EncoderSpec::parse(const std::string& text) {
  EncoderSpec s;
  std::istringstream in(text);
  std::string line;
  auto number = [](const std::string& v) {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("encoder spec line without '=': " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "input_channels") s.input_channels = number(value);
      else if (key == "input_size") s.input_size = number(value);
      else if (key == "fc") s.fc.push_back(number(value));
      else if (key == "dropout_p") s.dropout_p = std::stod(value);
      else if (key == "conv") {
        std::istringstream parts(value);
        std::string item;
        std::vector<std::size_t> f;
        while (std::getline(parts, item, ',')) f.push_back(number(item));
        if (f.size() != 4) throw std::invalid_argument(value);
        s.conv.push_back({f[0], f[1], f[2], f[3] != 0});
      } else {
        throw FormatError("unknown encoder spec key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw FormatError("bad value in encoder spec line: " + line);
    } catch (const std::out_of_range&) {
      throw FormatError("bad value in encoder spec line: " + line);
    }
  }
  s.validate();
  return s;
}

Encoder Encoder::init(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  Encoder e;
  e.spec_ = spec;
  std::size_t channels = spec.input_channels;
  for (std::size_t l = 0; l < spec.conv.size(); ++l) {
    const auto& c = spec.conv[l];
    const std::string name = "conv" + std::to_string(l + 1);
    const std::size_t fan_in = channels * c.kernel * c.kernel;
    e.params_.push_back({name + ".weight", ParamKind::weight,
                         uniform_weight({c.out_channels, channels, c.kernel, c.kernel}, fan_in, rng)});
    if (c.batchnorm) {
      e.params_.push_back({name + ".gamma", ParamKind::bn_gamma, filled(c.out_channels, 1.0)});
      e.params_.push_back({name + ".beta", ParamKind::bn_beta, filled(c.out_channels, 0.0)});
      e.bn_.emplace_back(c.out_channels);
    } else {
      e.params_.push_back({name + ".bias", ParamKind::bias, filled(c.out_channels, 0.0)});
    }
    channels = c.out_channels;
  }
  std::size_t width = spec.final_conv_units();
  for (std::size_t l = 0; l < spec.fc.size(); ++l) {
    const std::string name = "fc" + std::to_string(l + 1);
    e.params_.push_back({name + ".weight", ParamKind::weight, uniform_weight({spec.fc[l], width}, width, rng)});
    e.params_.push_back({name + ".bias", ParamKind::bias, filled(spec.fc[l], 0.0)});
    width = spec.fc[l];
  }
  return e;
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Tensor Encoder::forward(Tape& tape, const Tensor& x, Mode mode, Rng* dropout_rng, EncoderTaps* taps) {
  const std::size_t s = spec_.input_size;
  if (x.rank() != 4 || x.dim(1) != spec_.input_channels || x.dim(2) != s || x.dim(3) != s)
    throw DimensionError("encoder expects [N x " + std::to_string(spec_.input_channels) + " x " + std::to_string(s) +
                         " x " + std::to_string(s) + "], got " + shape_str(x.shape()));
  std::size_t p = 0, b = 0;
  Tensor h = x;
  for (const auto& c : spec_.conv) {
    const Tensor& w = params_[p++].value;
    if (c.batchnorm) {
      h = ops::conv2d(tape, h, w, Tensor(), {c.stride, 0});
      const Tensor& gamma = params_[p++].value;
      const Tensor& beta = params_[p++].value;
      h = ops::batchnorm(tape, h, gamma, beta, bn_[b++], mode);
    } else {
      const Tensor& bias = params_[p++].value;
      h = ops::conv2d(tape, h, w, bias, {c.stride, 0});
    }
    h = ops::relu(tape, h);
  }
  if (taps) taps->final_conv = h;
  h = ops::flatten(tape, h);
  for (std::size_t l = 0; l < spec_.fc.size(); ++l) {
    const Tensor& w = params_[p++].value;
    const Tensor& bias = params_[p++].value;
    h = ops::relu(tape, ops::linear(tape, h, w, bias));
    if (l + 1 < spec_.fc.size() && spec_.dropout_p > 0.0 && mode == Mode::train) {
      if (!dropout_rng) throw ConfigError("dropout needs a random source in train mode");
      h = ops::dropout(tape, h, spec_.dropout_p, *dropout_rng, mode);
    }
  }
  return h;
}

ConcatHead ConcatHead::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("concat head widths must be positive");
  ConcatHead h;
  h.fc7_weight = {"fc7.weight", ParamKind::weight, uniform_weight({hidden, input_dim}, input_dim, rng)};
  h.fc7_bias = {"fc7.bias", ParamKind::bias, filled(hidden, 0.0)};
  h.fc8_weight = {"fc8.weight", ParamKind::weight, uniform_weight({2, hidden}, hidden, rng)};
  h.fc8_bias = {"fc8.bias", ParamKind::bias, filled(2, 0.0)};
  return h;
}

std::vector<Parameter*> ConcatHead::parameters() { return {&fc7_weight, &fc7_bias, &fc8_weight, &fc8_bias}; }

std::vector<const Parameter*> ConcatHead::parameters() const {
  return {&fc7_weight, &fc7_bias, &fc8_weight, &fc8_bias};
}

Tensor ConcatHead::forward(Tape& tape, const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != input_dim())
    throw DimensionError("concat head expects width " + std::to_string(input_dim()) + ", got " +
                         shape_str(features.shape()));
  Tensor h = ops::relu(tape, ops::linear(tape, features, fc7_weight.value, fc7_bias.value));
  return ops::linear(tape, h, fc8_weight.value, fc8_bias.value);
}

TwoStreamModel TwoStreamModel::init(const EncoderSpec& spec_f, const EncoderSpec& spec_g, std::uint64_t seed,
                                    std::size_t head_hidden) {
  if (spec_f.canonical_text(false) != spec_g.canonical_text(false))
    throw ConfigError("f and g specs may differ only in input_channels");
  TwoStreamModel m;
  Rng rf(derive_seed(seed, "f")), rg(derive_seed(seed, "g"));
  m.f = Encoder::init(spec_f, rf);
  m.g = Encoder::init(spec_g, rg);
  if (head_hidden > 0) {
    Rng rh(derive_seed(seed, "head"));
    m.head = ConcatHead::init(2 * spec_f.feature_dim(), head_hidden, rh);
  }
  return m;
}

TwoStreamModel TwoStreamModel::init_default(std::uint64_t seed, std::size_t head_hidden) {
  return init(EncoderSpec::desk_default(3), EncoderSpec::desk_default(4), seed, head_hidden);
}

std::vector<Parameter*> TwoStreamModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : f.parameters()) out.push_back(&p);
  for (auto& p : g.parameters()) out.push_back(&p);
  if (head)
    for (Parameter* p : head->parameters()) out.push_back(p);
  return out;
}

Tensor forward_f(Tape& tape, TwoStreamModel& model, const Tensor& rgb, Mode mode, Rng* dropout_rng) {
  return model.f.forward(tape, rgb, mode, dropout_rng);
}

Tensor forward_g(Tape& tape, TwoStreamModel& model, const Tensor& sod, Mode mode, Rng* dropout_rng) {
  return model.g.forward(tape, sod, mode, dropout_rng);
}

Tensor forward_concat(Tape& tape, TwoStreamModel& model, const Tensor& rgb, const Tensor& sod, Mode mode) {
  if (!model.head) throw ConfigError("model has no concat head");
  if (rgb.rank() < 1 || sod.rank() < 1 || rgb.dim(0) != sod.dim(0))
    throw DimensionError("rgb and sod batches must have the same number of rows");
  Tensor ff = forward_f(tape, model, rgb, mode);
  Tensor gg = forward_g(tape, model, sod, mode);
  return model.head->forward(tape, ops::concat_cols(tape, ff, gg));
}

}  // namespace xmodal
