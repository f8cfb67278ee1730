#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xmodal/ops.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

struct ConvLayerSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  bool batchnorm = true;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// Architecture of one stream. Every conv and fc layer is followed by a
/// ReLU; the feature tap is the last fc after its ReLU.
struct EncoderSpec {
  std::size_t input_channels = 3;
  std::size_t input_size = 32;  // square inputs
  std::vector<ConvLayerSpec> conv;
  std::vector<std::size_t> fc;
  double dropout_p = 0.0;

  static EncoderSpec desk_default(std::size_t input_channels);

  std::size_t feature_dim() const { return fc.empty() ? 0 : fc.back(); }
  // Spatial extent after each conv layer.
  std::vector<std::size_t> spatial_sizes() const;
  std::size_t final_conv_units() const;
  void validate() const;

  // One "key=value" per line in a fixed order. Without the input channel
  // line the f and g specs of a model must serialize identically.
  std::string canonical_text(bool with_input_channels = true) const;
  static EncoderSpec parse(const std::string& text);

  bool operator==(const EncoderSpec&) const = default;
};

enum class ParamKind { weight, bias, bn_gamma, bn_beta };

struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor value;
};

// Intermediate activations exposed for inspection.
struct EncoderTaps {
  Tensor final_conv;  // post-ReLU output of the last conv layer
};

class Encoder {
 public:
  Encoder() = default;
  static Encoder init(const EncoderSpec& spec, Rng& rng);

  const EncoderSpec& spec() const { return spec_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<ops::BatchNormState>& bn_states() { return bn_; }
  const std::vector<ops::BatchNormState>& bn_states() const { return bn_; }
  std::size_t parameter_count() const;

  // x [N x C x s x s] -> [N x D]. Train mode uses batch statistics and
  // updates the running ones; `dropout_rng` is needed when dropout_p > 0.
  Tensor forward(Tape& tape, const Tensor& x, Mode mode, Rng* dropout_rng = nullptr,
                 EncoderTaps* taps = nullptr);

 private:
  EncoderSpec spec_;
  std::vector<Parameter> params_;
  std::vector<ops::BatchNormState> bn_;
};

// Binary same-pair classifier over concatenated [f | g] features.
struct ConcatHead {
  Parameter fc7_weight, fc7_bias, fc8_weight, fc8_bias;

  static ConcatHead init(std::size_t input_dim, std::size_t hidden, Rng& rng);
  std::size_t input_dim() const { return fc7_weight.value.dim(1); }
  std::size_t hidden() const { return fc7_weight.value.dim(0); }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Tensor forward(Tape& tape, const Tensor& features) const;
};

struct TwoStreamModel {
  Encoder f;  // RGB stream
  Encoder g;  // frame-difference stream
  std::optional<ConcatHead> head;

  // The two specs may differ only in input_channels. f, g and the head
  // draw from independent substreams of `seed`.
  static TwoStreamModel init(const EncoderSpec& spec_f, const EncoderSpec& spec_g, std::uint64_t seed,
                             std::size_t head_hidden = 0);
  static TwoStreamModel init_default(std::uint64_t seed, std::size_t head_hidden = 0);

  // Every trainable parameter: f, then g, then the head.
  std::vector<Parameter*> parameters();

  std::string serialize() const;
  static TwoStreamModel deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static TwoStreamModel load(const std::string& path);
};

Tensor forward_f(Tape& tape, TwoStreamModel& model, const Tensor& rgb, Mode mode, Rng* dropout_rng = nullptr);
Tensor forward_g(Tape& tape, TwoStreamModel& model, const Tensor& sod, Mode mode, Rng* dropout_rng = nullptr);
// Row-aligned rgb and sod batches -> [N x 2] logits.
Tensor forward_concat(Tape& tape, TwoStreamModel& model, const Tensor& rgb, const Tensor& sod, Mode mode);

}  // namespace xmodal
