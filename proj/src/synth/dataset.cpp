#include <cmath>
#include <string>

#include "xmodal/binary_io.hpp"
#include "xmodal/error.hpp"
#include "xmodal/synth.hpp"

namespace xmodal::synth {

namespace {
constexpr std::string_view kMagic = "XMSD";
constexpr std::uint16_t kVersion = 1;
}  // namespace

Dataset::Dataset(Geometry geometry, std::uint16_t shape_classes, std::uint16_t motion_classes)
    : geometry_(geometry), shape_classes_(shape_classes), motion_classes_(motion_classes) {}

void Dataset::add(Clip clip) {
  if (!(clip.geometry == geometry_)) throw DimensionError("clip geometry does not match the dataset");
  if (clip.frames.size() != geometry_.frame_count * geometry_.frame_values())
    throw DimensionError("clip frame buffer has the wrong size");
  if (clip.shape_class >= shape_classes_ || clip.motion_class >= motion_classes_)
    throw ConfigError("clip " + std::to_string(clip.clip_id) + " has a label outside the class range");
  auto mags = std::make_shared<const std::vector<double>>(window_magnitudes(clip));
  clips_.push_back(std::make_shared<const Clip>(std::move(clip)));
  magnitudes_.push_back(std::move(mags));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(geometry_, shape_classes_, motion_classes_);
  for (std::size_t i : indices) {
    out.clips_.push_back(clips_.at(i));
    out.magnitudes_.push_back(magnitudes_.at(i));
  }
  return out;
}

Dataset Dataset::train_split() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < clips_.size(); ++i)
    if (!is_test_clip(clips_[i]->clip_id)) idx.push_back(i);
  return subset(idx);
}

Dataset Dataset::test_split() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < clips_.size(); ++i)
    if (is_test_clip(clips_[i]->clip_id)) idx.push_back(i);
  return subset(idx);
}

std::string Dataset::serialize() const {
  io::Writer w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(clips_.size()));
  w.u16(geometry_.height);
  w.u16(geometry_.width);
  w.u16(geometry_.frame_count);
  w.u16(shape_classes_);
  w.u16(motion_classes_);
  for (const auto& clip : clips_) {
    w.u32(clip->clip_id);
    w.u16(clip->shape_class);
    w.u16(clip->motion_class);
    for (float v : clip->frames) w.f32(v);
  }
  return w.take();
}

Dataset Dataset::deserialize(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad magic: not a dataset file");
  const auto version = r.u16("version");
  if (version != kVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  const auto count = r.u32("clip count");
  Geometry g;
  g.height = r.u16("height");
  g.width = r.u16("width");
  g.frame_count = r.u16("frame_count");
  const auto shapes = r.u16("shape class count");
  const auto motions = r.u16("motion class count");
  if (g.height == 0 || g.width == 0) throw FormatError("frame size field is zero");
  if (g.frame_count < 6) throw FormatError("frame_count field below 6");
  if (shapes == 0 || motions == 0) throw FormatError("class count field is zero");

  const std::size_t values = g.frame_count * g.frame_values();
  const std::size_t record = 8 + 4 * values;
  if (r.remaining() != record * count)
    throw FormatError("clip count field disagrees with file size (" + std::to_string(count) + " records declared)");

  Dataset ds(g, shapes, motions);
  for (std::uint32_t k = 0; k < count; ++k) {
    Clip clip;
    clip.geometry = g;
    clip.clip_id = r.u32("clip_id");
    clip.shape_class = r.u16("shape_class");
    clip.motion_class = r.u16("motion_class");
    if (clip.shape_class >= shapes) throw FormatError("record " + std::to_string(k) + ": shape_class out of range");
    if (clip.motion_class >= motions) throw FormatError("record " + std::to_string(k) + ": motion_class out of range");
    clip.frames.resize(values);
    for (auto& v : clip.frames) {
      v = r.f32("frame data");
      if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("record " + std::to_string(k) + ": frame value outside [0, 1]");
    }
    ds.add(std::move(clip));
  }
  return ds;
}

void Dataset::save(const std::string& path) const { io::write_file(path, serialize()); }

Dataset Dataset::load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace xmodal::synth
