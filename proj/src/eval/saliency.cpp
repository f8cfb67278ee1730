#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xmodal/binary_io.hpp"
#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/ops.hpp"

namespace xmodal::eval {

Tensor saliency(TwoStreamModel& model, const synth::ModalityPair& pair, const SaliencyOptions& options) {
  const synth::ModalityPair* ptr = &pair;
  const Tensor x = synth::stack_rgb(std::span<const synth::ModalityPair* const>(&ptr, 1)).clone(true);
  Tape tape;
  if (options.guided) tape.set_relu_rule(Tape::ReluRule::guided);
  EncoderTaps taps;
  model.f.forward(tape, x, Mode::eval, nullptr, &taps);
  const std::size_t units = taps.final_conv.numel();
  if (options.top_n == 0 || options.top_n > units)
    throw ProtocolError("saliency top_n=" + std::to_string(options.top_n) + " must be in [1, " +
                        std::to_string(units) + "]");

  // Ranking is by activation value, ties to the lower flat index.
  const auto act = taps.final_conv.data();
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return act[a] > act[b]; });
  order.resize(options.top_n);

  const Tensor flat = ops::reshape(tape, taps.final_conv, {units, 1});
  const Tensor objective = ops::sum(tape, ops::gather_rows(tape, flat, order));
  tape.backward(objective);

  std::vector<double> out(x.numel());
  const auto g = x.grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(g[i]);
  for (Parameter* p : model.parameters()) p->value.zero_grad();
  Shape shape(x.shape().begin() + 1, x.shape().end());
  return Tensor(shape, std::move(out));
}

double saliency_box_ratio(const Tensor& map, const synth::Box& box) {
  if (map.rank() != 3) throw DimensionError("saliency map must be [C x H x W]");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  // Parts of the box outside the map are ignored.
  const long x0 = std::max<long>(box.x, 0), y0 = std::max<long>(box.y, 0);
  const long x1 = std::min<long>(box.x + box.size, static_cast<long>(w));
  const long y1 = std::min<long>(box.y + box.size, static_cast<long>(h));
  if (x0 >= x1 || y0 >= y1) throw ProtocolError("object box lies outside the saliency map");
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      double v = 0;
      for (std::size_t ch = 0; ch < c; ++ch) v += map.at((ch * h + y) * w + xx);
      const auto sx = static_cast<long>(xx), sy = static_cast<long>(y);
      const bool inside = sx >= x0 && sx < x1 && sy >= y0 && sy < y1;
      (inside ? in : out) += v;
      ++(inside ? n_in : n_out);
    }
  if (n_out == 0) throw ProtocolError("object box covers the whole map");
  const double mean_out = out / static_cast<double>(n_out);
  const double mean_in = in / static_cast<double>(n_in);
  if (mean_out == 0.0) return mean_in > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  return mean_in / mean_out;
}

void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 3) throw DimensionError("saliency map must be [C x H x W]");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  std::vector<double> m(h * w, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) m[i] = std::max(m[i], map.at(ch * h * w + i));
  const double top = *std::max_element(m.begin(), m.end());
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : m) {
    const double s = top > 0 ? v / top : 0.0;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0))));
  }
  io::write_file(path, bytes);
}

void write_raw(const std::string& path, const Tensor& map) {
  io::Writer w;
  for (double v : map.data()) w.f64(v);
  io::write_file(path, w.take());
}

}  // namespace xmodal::eval
