#include <algorithm>
#include <cmath>
#include <string>

#include "xmodal/error.hpp"
#include "xmodal/synth.hpp"

namespace xmodal::synth {

namespace {

constexpr int kSuper = 4;         // supersamples per axis for shape coverage
constexpr int kBgLevels = 128;    // background in [0, 128/256]
constexpr int kCoarse = 6;        // coarse texture grid per axis

bool inside(ShapeKind shape, double u, double v) {
  const double cu = u - 0.5;
  const double cv = v - 0.5;
  const double r2 = cu * cu + cv * cv;
  switch (shape) {
    case ShapeKind::square:
      return std::abs(cu) <= 0.4 && std::abs(cv) <= 0.4;
    case ShapeKind::disk:
      return r2 <= 0.45 * 0.45;
    case ShapeKind::triangle:
      return v >= 0.1 && v <= 0.9 && std::abs(cu) <= 0.5 * (v - 0.1);
    case ShapeKind::cross:
      return (std::abs(cu) <= 0.15 && std::abs(cv) <= 0.45) || (std::abs(cv) <= 0.15 && std::abs(cu) <= 0.45);
    case ShapeKind::diamond:
      return std::abs(cu) + std::abs(cv) <= 0.45;
    case ShapeKind::ring:
      return r2 <= 0.45 * 0.45 && r2 >= 0.25 * 0.25;
  }
  return false;
}

// Coverage in sixteenths over an s x s box.
std::vector<int> shape_mask(ShapeKind shape, int s) {
  std::vector<int> mask(static_cast<std::size_t>(s) * s, 0);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = (x + (sx + 0.5) / kSuper) / s;
          const double v = (y + (sy + 0.5) / kSuper) / s;
          hits += inside(shape, u, v) ? 1 : 0;
        }
      mask[static_cast<std::size_t>(y) * s + x] = hits;
    }
  return mask;
}

// Quantized static texture levels, [y][x][c] in 0..kBgLevels.
std::vector<int> background(const Geometry& g, std::uint64_t seed) {
  Rng rng(seed);
  const int h = g.height, w = g.width;
  std::vector<double> coarse(static_cast<std::size_t>(3) * (kCoarse + 1) * (kCoarse + 1));
  for (auto& v : coarse) v = rng.uniform();
  std::vector<int> out(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gy = static_cast<double>(y) * kCoarse / h;
      const double gx = static_cast<double>(x) * kCoarse / w;
      const int iy = static_cast<int>(gy), ix = static_cast<int>(gx);
      const double fy = gy - iy, fx = gx - ix;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) { return coarse[(static_cast<std::size_t>(c) * (kCoarse + 1) + yy) * (kCoarse + 1) + xx]; };
        const double smooth = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix + 1)) +
                              fy * ((1 - fx) * at(iy + 1, ix) + fx * at(iy + 1, ix + 1));
        const double v = 0.7 * smooth + 0.3 * rng.uniform();
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = std::clamp(static_cast<int>(v * (kBgLevels + 1)), 0, kBgLevels);
      }
    }
  return out;
}

}  // namespace

Step motion_direction(std::uint16_t motion_class) {
  static constexpr Step dirs[kMaxMotions] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  if (motion_class >= kMaxMotions) throw ConfigError("motion class " + std::to_string(motion_class) + " out of range");
  return dirs[motion_class];
}

const char* shape_name(std::uint16_t shape_class) {
  static constexpr const char* names[kMaxShapes] = {"square", "disk", "triangle", "cross", "diamond", "ring"};
  return shape_class < kMaxShapes ? names[shape_class] : "unknown";
}

void Geometry::validate() const {
  if (height == 0 || width == 0) throw ConfigError("frame size must be positive");
  if (frame_count < 6) throw ConfigError("frame_count must be at least 6, got " + std::to_string(frame_count));
}

std::vector<std::size_t> candidate_centers(const Geometry& g) {
  std::vector<std::size_t> out;
  for (std::size_t c = 2; c + 2 < g.frame_count; ++c) out.push_back(c);
  return out;
}

std::vector<Step> ClipSpec::positions() const {
  std::vector<Step> pos{{start_x, start_y}};
  for (const Step& v : velocity) pos.push_back({pos.back().dx + v.dx, pos.back().dy + v.dy});
  return pos;
}

void ClipSpec::validate() const {
  const std::string who = "clip " + std::to_string(clip_id) + ": ";
  geometry.validate();
  if (shape_class >= kMaxShapes) throw GenerationError(who + "unknown shape class");
  if (velocity.size() + 1 != geometry.frame_count) throw GenerationError(who + "trajectory length does not match frame_count");
  if (shape_size < 3) throw GenerationError(who + "shape too small");
  for (auto c : shape_color)
    if (c > 128) throw GenerationError(who + "shape color above 128/256");
  for (const Step& p : positions()) {
    if (p.dx < 0 || p.dy < 0 || p.dx + shape_size > geometry.width || p.dy + shape_size > geometry.height)
      throw GenerationError(who + "trajectory leaves the frame");
  }
}

ClipSpec ClipSpec::time_reversed() const {
  ClipSpec r = *this;
  const Step end = positions().back();
  r.start_x = end.dx;
  r.start_y = end.dy;
  r.velocity.assign(velocity.rbegin(), velocity.rend());
  for (Step& v : r.velocity) v = {-v.dx, -v.dy};
  return r;
}

Clip render(const ClipSpec& spec) {
  spec.validate();
  const Geometry& g = spec.geometry;
  const int h = g.height, w = g.width, s = spec.shape_size;
  const auto bg = background(g, spec.background_seed);
  const auto mask = shape_mask(static_cast<ShapeKind>(spec.shape_class), s);

  Clip clip;
  clip.clip_id = spec.clip_id;
  clip.shape_class = spec.shape_class;
  clip.motion_class = spec.motion_class;
  clip.geometry = g;
  clip.frames.resize(g.frame_count * g.frame_values());

  // Values live on a 1/4096 grid so differences are exact in f32:
  // 16 * background level + coverage * color, both in sixteenths of 1/256.
  const auto pos = spec.positions();
  for (const Step& p : pos) clip.object_boxes.push_back({p.dx, p.dy, s});
  for (std::size_t t = 0; t < g.frame_count; ++t) {
    float* frame = clip.frames.data() + t * g.frame_values();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int my = y - pos[t].dy, mx = x - pos[t].dx;
        const int cov = (my >= 0 && my < s && mx >= 0 && mx < s) ? mask[static_cast<std::size_t>(my) * s + mx] : 0;
        for (int c = 0; c < 3; ++c) {
          const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3 + c;
          const int units = 16 * bg[i] + cov * spec.shape_color[c];
          frame[i] = static_cast<float>(units) / 4096.0f;
        }
      }
  }
  return clip;
}

std::vector<double> window_magnitudes(const Clip& clip) {
  const Geometry& g = clip.geometry;
  const std::size_t fv = g.frame_values();
  std::vector<double> out;
  for (std::size_t c : candidate_centers(g)) {
    double acc = 0.0;
    for (std::size_t t = c - 2; t < c + 2; ++t) {
      const float* a = clip.frames.data() + t * fv;
      const float* b = a + fv;
      for (std::size_t p = 0; p < fv; p += 3) {
        const double d = (static_cast<double>(b[p] - a[p]) + (b[p + 1] - a[p + 1]) + (b[p + 2] - a[p + 2])) / 3.0;
        acc += std::abs(d);
      }
    }
    out.push_back(acc / static_cast<double>(kSodChannels * g.height * g.width));
  }
  return out;
}

void DatasetSpec::validate() const {
  geometry.validate();
  if (shape_classes < 4 || shape_classes > kMaxShapes)
    throw ConfigError("shape_classes must be in [4, " + std::to_string(kMaxShapes) + "]");
  if (motion_classes < 4 || motion_classes > kMaxMotions)
    throw ConfigError("motion_classes must be in [4, " + std::to_string(kMaxMotions) + "]");
  if (min_speed < 0 || max_speed < min_speed) throw ConfigError("speed range must satisfy 0 <= min <= max");
  if (!(pause_probability >= 0.0 && pause_probability < 1.0)) throw ConfigError("pause_probability must be in [0, 1)");
  if (min_size < 3 || max_size < min_size) throw ConfigError("shape size range must satisfy 3 <= min <= max");
  if (max_size > geometry.height || max_size > geometry.width) throw ConfigError("shape larger than the frame");
}

ClipSpec draw_clip_spec(std::uint32_t clip_id, const DatasetSpec& dist, Rng& rng) {
  ClipSpec spec;
  spec.clip_id = clip_id;
  spec.geometry = dist.geometry;
  spec.shape_class = static_cast<std::uint16_t>(rng.below(dist.shape_classes));
  spec.motion_class = static_cast<std::uint16_t>(rng.below(dist.motion_classes));
  for (auto& c : spec.shape_color) c = static_cast<std::uint16_t>(rng.between(64, 128));
  spec.shape_size = static_cast<std::uint16_t>(rng.between(dist.min_size, dist.max_size));
  spec.background_seed = rng.next();

  const Step dir = motion_direction(spec.motion_class);
  const int speed = static_cast<int>(rng.between(dist.min_speed, dist.max_speed));
  const std::size_t steps = dist.geometry.frame_count - 1u;
  bool moved = false;
  for (std::size_t t = 0; t < steps; ++t) {
    const bool pause = rng.bernoulli(dist.pause_probability);
    spec.velocity.push_back(pause ? Step{} : Step{dir.dx * speed, dir.dy * speed});
    moved = moved || !pause;
  }
  // A clip whose object never moves has no observable direction.
  if (!moved && speed > 0) spec.velocity[steps / 2] = {dir.dx * speed, dir.dy * speed};

  int lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0, x = 0, y = 0;
  for (const Step& v : spec.velocity) {
    x += v.dx;
    y += v.dy;
    lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
  }
  const int max_x = dist.geometry.width - spec.shape_size - hi_x;
  const int max_y = dist.geometry.height - spec.shape_size - hi_y;
  if (max_x < -lo_x || max_y < -lo_y)
    throw GenerationError("clip " + std::to_string(clip_id) + ": trajectory cannot stay inside the frame");
  spec.start_x = static_cast<int>(rng.between(-lo_x, max_x));
  spec.start_y = static_cast<int>(rng.between(-lo_y, max_y));
  return spec;
}

Dataset generate_dataset(std::size_t n_clips, const DatasetSpec& dist, std::uint64_t seed) {
  if (n_clips < 2) throw ConfigError("n_clips must be at least 2");
  dist.validate();
  Dataset ds(dist.geometry, dist.shape_classes, dist.motion_classes);
  for (std::size_t i = 0; i < n_clips; ++i) {
    const auto id = static_cast<std::uint32_t>(i);
    Rng rng(derive_seed(seed, "clip/" + std::to_string(id)));
    ds.add(render(draw_clip_spec(id, dist, rng)));
  }
  return ds;
}

std::optional<Box> estimate_object_box(const Clip& clip, std::size_t frame) {
  const Geometry& g = clip.geometry;
  if (frame >= g.frame_count) throw DimensionError("frame index out of range");
  int x0 = g.width, y0 = g.height, x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        float lo = clip.at(0, y, x, c);
        for (std::size_t t = 1; t < g.frame_count; ++t) lo = std::min(lo, clip.at(t, y, x, c));
        if (clip.at(frame, y, x, c) > lo) {
          x0 = std::min(x0, static_cast<int>(x));
          y0 = std::min(y0, static_cast<int>(y));
          x1 = std::max(x1, static_cast<int>(x));
          y1 = std::max(y1, static_cast<int>(y));
          break;
        }
      }
  if (x1 < 0) return std::nullopt;
  return Box{x0, y0, std::max(x1 - x0, y1 - y0) + 1};
}

}  // namespace xmodal::synth
