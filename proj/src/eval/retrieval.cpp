#include <cmath>

#include "xmodal/error.hpp"
#include "xmodal/eval.hpp"

namespace xmodal::eval {

namespace {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return 1.0 - ab / (std::sqrt(aa + kRetrievalEpsilon) * std::sqrt(bb + kRetrievalEpsilon));
}

}  // namespace

double recall_at_k(const FeatureSet& queries, const FeatureSet& keys, std::size_t k) {
  if (queries.rows != keys.rows || queries.dim != keys.dim)
    throw DimensionError("retrieval queries and keys must be row-aligned with equal width");
  const std::size_t n = queries.rows;
  if (k == 0 || k >= n)
    throw ProtocolError("recall@k needs 0 < k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  std::size_t hits = 0;
  std::vector<double> dist(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = cosine_distance(queries.row(q), keys.row(j));
    const double own = dist[q];
    const std::uint32_t own_id = keys.clip_ids[q];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < n && rank < k; ++j)
      if (j != q && (dist[j] < own || (dist[j] == own && keys.clip_ids[j] < own_id))) ++rank;
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

RetrievalResult crossmodal_retrieval(TwoStreamModel& model, const synth::Dataset& ds, std::size_t k,
                                     const synth::SamplerConfig& view) {
  const FeatureSet rgb = extract_features(model, ds, Modality::rgb, Task::shape_class, view);
  const FeatureSet sod = extract_features(model, ds, Modality::sod, Task::shape_class, view);
  RetrievalResult r;
  r.k = k;
  r.n = ds.size();
  r.rgb_to_sod = recall_at_k(rgb, sod, k);
  r.sod_to_rgb = recall_at_k(sod, rgb, k);
  return r;
}

}  // namespace xmodal::eval
