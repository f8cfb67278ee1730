#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "xmodal/rng.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::synth {

// One RGB frame and the stack of grayscale differences around it.
struct ModalityPair {
  Tensor rgb;  // [3 x h x w], values in [0, 1]
  Tensor sod;  // [4 x h x w], values in [-1, 1]
  std::uint32_t clip_id = 0;
  std::uint16_t shape_class = 0;
  std::uint16_t motion_class = 0;
  std::size_t center_frame = 0;
};

struct SamplerConfig {
  std::size_t tuple_count = 30;
  bool magnitude_weighting = true;
  std::size_t crop_size = 32;
  bool random_crop = true;
  bool horizontal_flip = true;
  bool temporal_flip = false;
  bool channel_split = true;
  bool mean_subtract_sod = false;

  void validate(const Geometry& g) const;
};

struct PairTuple {
  ModalityPair i;
  ModalityPair j;
};

// Full-frame pair for the window centered on `center`.
ModalityPair extract_pair(const Clip& clip, std::size_t center);

// Index into candidate_centers(); weights are used when weighting is on and
// not all zero.
std::size_t draw_window(std::span<const double> weights, bool weighting, Rng& rng);

// B tuples over 2B distinct clips, un-augmented.
std::vector<PairTuple> sample_tuple_batch(const Dataset& ds, const SamplerConfig& cfg, Rng& rng);

ModalityPair augment_pair(const ModalityPair& pair, const SamplerConfig& cfg, Rng& rng);

// Deterministic counterpart of augment_pair used at evaluation time: center
// crop, no flips, grayscale RGB when channel splitting is part of training.
ModalityPair eval_view(const ModalityPair& pair, const SamplerConfig& cfg);

ModalityPair crop(const ModalityPair& pair, std::size_t top, std::size_t left, std::size_t size);
ModalityPair center_crop(const ModalityPair& pair, std::size_t size);
void flip_horizontal(ModalityPair& pair);
// Reverses the difference order and negates each difference.
void flip_temporal(ModalityPair& pair);
void split_channel(ModalityPair& pair, std::size_t channel);
void replace_with_gray(ModalityPair& pair);
void subtract_sod_mean(ModalityPair& pair);

// Stacks per-pair tensors into [N x C x h x w] batches.
Tensor stack_rgb(std::span<const ModalityPair* const> pairs);
Tensor stack_sod(std::span<const ModalityPair* const> pairs);

}  // namespace xmodal::synth
