#include <algorithm>
#include <numeric>
#include <string>

#include "xmodal/error.hpp"
#include "xmodal/sampler.hpp"

namespace xmodal::synth {

void SamplerConfig::validate(const Geometry& g) const {
  if (tuple_count == 0) throw ConfigError("tuple_count must be positive");
  if (crop_size == 0 || crop_size > g.height || crop_size > g.width)
    throw ConfigError("crop_size " + std::to_string(crop_size) + " does not fit a " + std::to_string(g.height) + "x" +
                      std::to_string(g.width) + " frame");
}

ModalityPair extract_pair(const Clip& clip, std::size_t center) {
  const Geometry& g = clip.geometry;
  if (center < 2 || center + 2 >= g.frame_count)
    throw SamplingError("center frame " + std::to_string(center) + " has no full window");
  const std::size_t h = g.height, w = g.width, hw = h * w;

  std::vector<double> rgb(3 * hw);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) rgb[c * hw + y * w + x] = clip.at(center, y, x, c);

  // Per-channel differences are exact on the render grid, so the background
  // cancels bitwise before the channel mean is taken.
  std::vector<double> sod(kSodChannels * hw);
  for (std::size_t t = 0; t < kSodChannels; ++t) {
    const std::size_t f = center - 2 + t;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 3; ++c) acc += static_cast<double>(clip.at(f + 1, y, x, c) - clip.at(f, y, x, c));
        sod[t * hw + y * w + x] = acc / 3.0;
      }
  }

  ModalityPair p;
  p.rgb = Tensor({3, h, w}, std::move(rgb));
  p.sod = Tensor({kSodChannels, h, w}, std::move(sod));
  p.clip_id = clip.clip_id;
  p.shape_class = clip.shape_class;
  p.motion_class = clip.motion_class;
  p.center_frame = center;
  return p;
}

std::size_t draw_window(std::span<const double> weights, bool weighting, Rng& rng) {
  if (weights.empty()) throw SamplingError("clip has no candidate windows");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!weighting || !(total > 0.0)) return static_cast<std::size_t>(rng.below(weights.size()));
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

std::vector<PairTuple> sample_tuple_batch(const Dataset& ds, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate(ds.geometry());
  const std::size_t need = 2 * cfg.tuple_count;
  if (ds.size() < need)
    throw SamplingError("dataset has " + std::to_string(ds.size()) + " clips, a batch needs " + std::to_string(need));

  // Partial Fisher-Yates: the first 2B slots become a uniform draw without
  // replacement.
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t k = 0; k < need; ++k) {
    const std::size_t pick = k + static_cast<std::size_t>(rng.below(order.size() - k));
    std::swap(order[k], order[pick]);
  }

  const auto centers = candidate_centers(ds.geometry());
  std::vector<PairTuple> out;
  out.reserve(cfg.tuple_count);
  auto draw = [&](std::size_t idx) {
    const std::size_t w = draw_window(ds.magnitudes(idx), cfg.magnitude_weighting, rng);
    return extract_pair(ds.clip(idx), centers[w]);
  };
  for (std::size_t k = 0; k < cfg.tuple_count; ++k) {
    PairTuple t;
    t.i = draw(order[2 * k]);
    t.j = draw(order[2 * k + 1]);
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

Tensor crop_planes(const Tensor& t, std::size_t top, std::size_t left, std::size_t size) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (top + size > h || left + size > w) throw DimensionError("crop window exceeds the frame");
  std::vector<double> out(c * size * size);
  const auto src = t.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < size; ++y)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((k * h + top + y) * w + left), size,
                  out.begin() + static_cast<std::ptrdiff_t>((k * size + y) * size));
  return Tensor({c, size, size}, std::move(out));
}

// Returns a mirrored copy; pairs share tensor handles, so nothing is
// modified in place.
Tensor mirror(const Tensor& t) {
  const std::size_t rows = t.dim(0) * t.dim(1), w = t.dim(2);
  Tensor out = t.clone(false);
  auto d = out.data_mut();
  for (std::size_t r = 0; r < rows; ++r) std::reverse(d.begin() + static_cast<std::ptrdiff_t>(r * w), d.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
  return out;
}

}  // namespace

ModalityPair crop(const ModalityPair& pair, std::size_t top, std::size_t left, std::size_t size) {
  ModalityPair out = pair;
  out.rgb = crop_planes(pair.rgb, top, left, size);
  out.sod = crop_planes(pair.sod, top, left, size);
  return out;
}

ModalityPair center_crop(const ModalityPair& pair, std::size_t size) {
  const std::size_t h = pair.rgb.dim(1), w = pair.rgb.dim(2);
  if (size > h || size > w) throw DimensionError("crop larger than the frame");
  return crop(pair, (h - size) / 2, (w - size) / 2, size);
}

void flip_horizontal(ModalityPair& pair) {
  pair.rgb = mirror(pair.rgb);
  pair.sod = mirror(pair.sod);
}

void flip_temporal(ModalityPair& pair) {
  const std::size_t c = pair.sod.dim(0), plane = pair.sod.dim(1) * pair.sod.dim(2);
  const auto src = pair.sod.data();
  std::vector<double> out(src.size());
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < plane; ++p) out[k * plane + p] = -src[(c - 1 - k) * plane + p];
  pair.sod = Tensor(pair.sod.shape(), std::move(out));
}

void split_channel(ModalityPair& pair, std::size_t channel) {
  const std::size_t plane = pair.rgb.dim(1) * pair.rgb.dim(2);
  if (channel >= pair.rgb.dim(0)) throw DimensionError("channel index out of range");
  const auto src = pair.rgb.data();
  std::vector<double> out(src.size());
  for (std::size_t k = 0; k < pair.rgb.dim(0); ++k)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(channel * plane), plane, out.begin() + static_cast<std::ptrdiff_t>(k * plane));
  pair.rgb = Tensor(pair.rgb.shape(), std::move(out));
}

void replace_with_gray(ModalityPair& pair) {
  const std::size_t plane = pair.rgb.dim(1) * pair.rgb.dim(2);
  const auto src = pair.rgb.data();
  std::vector<double> out(src.size());
  for (std::size_t p = 0; p < plane; ++p) {
    const double g = (src[p] + src[plane + p] + src[2 * plane + p]) / 3.0;
    out[p] = out[plane + p] = out[2 * plane + p] = g;
  }
  pair.rgb = Tensor(pair.rgb.shape(), std::move(out));
}

void subtract_sod_mean(ModalityPair& pair) {
  const auto src = pair.sod.data();
  const double mean = std::accumulate(src.begin(), src.end(), 0.0) / static_cast<double>(src.size());
  std::vector<double> out(src.begin(), src.end());
  for (double& v : out) v -= mean;
  pair.sod = Tensor(pair.sod.shape(), std::move(out));
}

ModalityPair augment_pair(const ModalityPair& pair, const SamplerConfig& cfg, Rng& rng) {
  const std::size_t h = pair.rgb.dim(1), w = pair.rgb.dim(2), s = cfg.crop_size;
  if (s > h || s > w) throw ConfigError("crop_size exceeds the frame");
  std::size_t top = (h - s) / 2, left = (w - s) / 2;
  if (cfg.random_crop) {
    top = static_cast<std::size_t>(rng.below(h - s + 1));
    left = static_cast<std::size_t>(rng.below(w - s + 1));
  }
  ModalityPair out = crop(pair, top, left, s);
  if (cfg.horizontal_flip && rng.bernoulli(0.5)) flip_horizontal(out);
  if (cfg.temporal_flip && rng.bernoulli(0.5)) flip_temporal(out);
  if (cfg.channel_split) split_channel(out, static_cast<std::size_t>(rng.below(3)));
  if (cfg.mean_subtract_sod) subtract_sod_mean(out);
  return out;
}

ModalityPair eval_view(const ModalityPair& pair, const SamplerConfig& cfg) {
  ModalityPair out = center_crop(pair, cfg.crop_size);
  if (cfg.channel_split) replace_with_gray(out);
  if (cfg.mean_subtract_sod) subtract_sod_mean(out);
  return out;
}

namespace {
Tensor stack(std::span<const ModalityPair* const> pairs, bool rgb) {
  if (pairs.empty()) throw DimensionError("cannot stack an empty batch");
  const Tensor& first = rgb ? pairs[0]->rgb : pairs[0]->sod;
  const xmodal::Shape inner = first.shape();
  std::vector<double> out;
  out.reserve(pairs.size() * first.numel());
  for (const ModalityPair* p : pairs) {
    const Tensor& t = rgb ? p->rgb : p->sod;
    if (t.shape() != inner) throw DimensionError("pairs in a batch have different shapes");
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  xmodal::Shape shape{pairs.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  return Tensor(std::move(shape), std::move(out));
}
}  // namespace

Tensor stack_rgb(std::span<const ModalityPair* const> pairs) { return stack(pairs, true); }
Tensor stack_sod(std::span<const ModalityPair* const> pairs) { return stack(pairs, false); }

}  // namespace xmodal::synth
