#include <string>

#include "xmodal/binary_io.hpp"
#include "xmodal/error.hpp"
#include "xmodal/model.hpp"

// Checkpoint layout (little-endian):
//   "XMCK", u16 version,
//   u32 length + f spec text, u32 length + g spec text, u32 head hidden width (0 = none),
//   u32 tensor count, then per tensor: u32 rank, u32 extents..., f64 values.
// Tensor order: f parameters, f running mean/var per batchnorm layer, the
// same for g, then the head parameters.

namespace xmodal {

namespace {

constexpr std::string_view kMagic = "XMCK";
constexpr std::uint16_t kVersion = 1;

void put_tensor(io::Writer& w, const Shape& shape, std::span<const double> values) {
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (double v : values) w.f64(v);
}

void put_encoder(io::Writer& w, const Encoder& e) {
  for (const auto& p : e.parameters()) put_tensor(w, p.value.shape(), p.value.data());
  for (const auto& s : e.bn_states()) {
    put_tensor(w, {s.running_mean.size()}, s.running_mean);
    put_tensor(w, {s.running_var.size()}, s.running_var);
  }
}

std::size_t encoder_tensor_count(const Encoder& e) { return e.parameters().size() + 2 * e.bn_states().size(); }

void read_into(io::Reader& r, const Shape& expected, std::span<double> out, const std::string& what) {
  const auto rank = r.u32("tensor rank");
  if (rank != expected.size()) throw FormatError("checkpoint tensor " + what + ": rank mismatch");
  for (std::size_t d = 0; d < rank; ++d)
    if (r.u32("tensor extent") != expected[d]) throw FormatError("checkpoint tensor " + what + ": shape mismatch");
  for (double& v : out) v = r.f64("tensor data");
}

void get_encoder(io::Reader& r, Encoder& e) {
  for (auto& p : e.parameters()) read_into(r, p.value.shape(), p.value.data_mut(), p.name);
  for (auto& s : e.bn_states()) {
    read_into(r, {s.running_mean.size()}, s.running_mean, "running_mean");
    read_into(r, {s.running_var.size()}, s.running_var, "running_var");
  }
}

std::string read_text(io::Reader& r, const char* field) {
  const auto n = r.u32(field);
  return std::string(r.bytes(n, field));
}

}  // namespace

std::string TwoStreamModel::serialize() const {
  io::Writer w;
  w.bytes(kMagic);
  w.u16(kVersion);
  const auto tf = f.spec().canonical_text(), tg = g.spec().canonical_text();
  w.u32(static_cast<std::uint32_t>(tf.size()));
  w.bytes(tf);
  w.u32(static_cast<std::uint32_t>(tg.size()));
  w.bytes(tg);
  w.u32(head ? static_cast<std::uint32_t>(head->hidden()) : 0u);
  std::size_t count = encoder_tensor_count(f) + encoder_tensor_count(g) + (head ? 4 : 0);
  w.u32(static_cast<std::uint32_t>(count));
  put_encoder(w, f);
  put_encoder(w, g);
  if (head)
    for (const Parameter* p : head->parameters()) put_tensor(w, p->value.shape(), p->value.data());
  return w.take();
}

TwoStreamModel TwoStreamModel::deserialize(std::string_view bytes) {
  io::Reader r(bytes);
  if (r.bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad magic: not a checkpoint file");
  const auto version = r.u16("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto sf = EncoderSpec::parse(read_text(r, "f spec"));
  const auto sg = EncoderSpec::parse(read_text(r, "g spec"));
  const auto hidden = r.u32("head width");
  TwoStreamModel m = init(sf, sg, 0, hidden);
  const auto count = r.u32("tensor count");
  const std::size_t expected = encoder_tensor_count(m.f) + encoder_tensor_count(m.g) + (m.head ? 4 : 0);
  if (count != expected) throw FormatError("checkpoint tensor count does not match its spec");
  get_encoder(r, m.f);
  get_encoder(r, m.g);
  if (m.head)
    for (Parameter* p : m.head->parameters()) read_into(r, p->value.shape(), p->value.data_mut(), p->name);
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return m;
}

void TwoStreamModel::save(const std::string& path) const { io::write_file(path, serialize()); }

TwoStreamModel TwoStreamModel::load(const std::string& path) { return deserialize(io::read_file(path)); }

}  // namespace xmodal
