#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmodal/rng.hpp"

// Procedural moving-shape clips. Shape identity and motion direction are
// visible in both modalities; color and background texture only in RGB.

namespace xmodal::synth {

enum class ShapeKind : std::uint16_t { square, disk, triangle, cross, diamond, ring };
inline constexpr std::uint16_t kMaxShapes = 6;
inline constexpr std::uint16_t kMaxMotions = 8;

// Motion classes: right, left, down, up, then the four diagonals.
struct Step {
  int dx = 0;
  int dy = 0;
  bool operator==(const Step&) const = default;
};
Step motion_direction(std::uint16_t motion_class);
const char* shape_name(std::uint16_t shape_class);

struct Geometry {
  std::uint16_t height = 40;
  std::uint16_t width = 40;
  std::uint16_t frame_count = 8;
  void validate() const;
  std::size_t frame_values() const { return std::size_t{height} * width * 3; }
  bool operator==(const Geometry&) const = default;
};

struct ClipSpec {
  std::uint32_t clip_id = 0;
  std::uint16_t shape_class = 0;
  std::uint16_t motion_class = 0;
  // Per-channel color in units of 1/256.
  std::array<std::uint16_t, 3> shape_color{96, 96, 96};
  std::uint16_t shape_size = 10;
  std::uint64_t background_seed = 0;
  int start_x = 0;  // top-left of the shape's bounding box in frame 0
  int start_y = 0;
  std::vector<Step> velocity;  // frame_count - 1 steps, pixels per frame
  Geometry geometry;

  // Top-left corner per frame.
  std::vector<Step> positions() const;
  // Throws GenerationError naming the clip if the shape leaves the frame.
  void validate() const;
  // Same scene played backwards: starts at the final position with negated,
  // reversed velocities.
  ClipSpec time_reversed() const;
};

struct DatasetSpec {
  Geometry geometry;
  std::uint16_t shape_classes = 4;
  std::uint16_t motion_classes = 4;
  int min_speed = 1;
  int max_speed = 3;
  double pause_probability = 0.25;
  std::uint16_t min_size = 9;
  std::uint16_t max_size = 12;
  void validate() const;
};

// Number of frames feeding one frame-difference stack, and the stack depth.
inline constexpr std::size_t kWindowFrames = 5;
inline constexpr std::size_t kSodChannels = kWindowFrames - 1;

struct Box {
  int x = 0, y = 0, size = 0;  // square, top-left corner
};

struct Clip {
  std::uint32_t clip_id = 0;
  std::uint16_t shape_class = 0;
  std::uint16_t motion_class = 0;
  Geometry geometry;
  std::vector<float> frames;  // [frame][y][x][channel]
  // Object bounding box per frame; known for rendered clips only, the file
  // format does not carry it.
  std::vector<Box> object_boxes;

  float at(std::size_t frame, std::size_t y, std::size_t x, std::size_t c) const {
    return frames[((frame * geometry.height + y) * geometry.width + x) * 3 + c];
  }
};

// Valid centers for a 5-frame window: 2 .. frame_count - 3.
std::vector<std::size_t> candidate_centers(const Geometry& g);

// Mean |difference| of each candidate window, in candidate order.
std::vector<double> window_magnitudes(const Clip& clip);

Clip render(const ClipSpec& spec);

// Bounding box of the pixels brighter than their minimum over the clip, the
// object's footprint when the background is static. Pixels covered in every
// frame are missed, so the box can be smaller than the true one. Empty
// footprint gives nullopt.
std::optional<Box> estimate_object_box(const Clip& clip, std::size_t frame);

ClipSpec draw_clip_spec(std::uint32_t clip_id, const DatasetSpec& dist, Rng& rng);

class Dataset {
 public:
  Dataset(Geometry geometry, std::uint16_t shape_classes, std::uint16_t motion_classes);

  void add(Clip clip);
  std::size_t size() const { return clips_.size(); }
  const Clip& clip(std::size_t i) const { return *clips_.at(i); }
  const std::vector<double>& magnitudes(std::size_t i) const { return *magnitudes_.at(i); }
  const Geometry& geometry() const { return geometry_; }
  std::uint16_t shape_classes() const { return shape_classes_; }
  std::uint16_t motion_classes() const { return motion_classes_; }

  // Clips are shared, not copied.
  Dataset subset(std::span<const std::size_t> indices) const;
  // Deterministic split by clip id: every third clip is held out.
  Dataset train_split() const;
  Dataset test_split() const;

  std::string serialize() const;
  static Dataset deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

 private:
  Geometry geometry_;
  std::uint16_t shape_classes_;
  std::uint16_t motion_classes_;
  std::vector<std::shared_ptr<const Clip>> clips_;
  std::vector<std::shared_ptr<const std::vector<double>>> magnitudes_;
};

inline bool is_test_clip(std::uint32_t clip_id) { return clip_id % 3 == 2; }

Dataset generate_dataset(std::size_t n_clips, const DatasetSpec& dist, std::uint64_t seed);

}  // namespace xmodal::synth
