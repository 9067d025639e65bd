#pragma once

// Dynamic implicit conditioning: a KNN index over pooled training features,
// equidistant bins over the training set's mean KNN distances, and the map
// from a test image's mean distance to its noising step T_hat.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/checkpoint.hpp"
#include "dicad/feature_extractor.hpp"

namespace dicad {

class DegenerateBinsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FeatureIndex {
  std::size_t dim = 0;
  std::size_t k = 20;
  int block = 2;
  std::vector<float> vectors;  // N x dim, row-major

  std::size_t size() const noexcept { return dim ? vectors.size() / dim : 0; }
  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
  bool operator==(const FeatureIndex&) const = default;
};

struct BinTable {
  std::vector<double> edges;  // num_bins + 1, increasing
  int num_bins = 10;
  int t_max = 80;
  int min_bin = 2;
  bool operator==(const BinTable&) const = default;
};

enum class RoundingOrder {
  floor_then_round,  // raise b to min_bin, compute the step, then round
  round_then_floor,  // round the step from the raw bin, then apply the min_bin step as a floor
};

struct DicConfig {
  std::size_t k = 20;
  int block = 2;
  int num_bins = 10;
  int t_max = 80;
  int min_bin = 2;
  int round_multiple = 10;
  RoundingOrder order = RoundingOrder::floor_then_round;
};

inline FeatureIndex build_feature_index(std::span<const Tensor> images, const FeatureExtractor& phi, int block,
                                        std::size_t k) {
  if (images.empty()) throw std::invalid_argument("build_feature_index: empty training set");
  phi.check_block(block);
  FeatureIndex idx;
  idx.k = k;
  idx.block = block;
  idx.dim = phi.block_channels(block);
  idx.vectors.reserve(images.size() * idx.dim);
  for (const auto& img : images) {
    const auto v = phi.pooled(img, block);
    idx.vectors.insert(idx.vectors.end(), v.begin(), v.end());
  }
  return idx;
}

inline float l1_distance(std::span<const float> a, std::span<const float> b) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

// Mean L1 distance from y0 to its K nearest index entries. With exclude_self
// one exact (zero-distance) match is dropped first.
inline double mean_knn_distance(std::span<const float> y0, const FeatureIndex& index, bool exclude_self) {
  if (y0.size() != index.dim)
    throw std::invalid_argument("feature dimension " + std::to_string(y0.size()) + " does not match index dimension " +
                                std::to_string(index.dim));
  std::vector<float> d(index.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = l1_distance(y0, index.row(i));
  if (exclude_self) {
    auto it = std::find(d.begin(), d.end(), 0.0f);
    if (it != d.end()) d.erase(it);
  }
  if (index.k < 1 || index.k > d.size())
    throw std::invalid_argument("K = " + std::to_string(index.k) + " exceeds the " + std::to_string(d.size()) +
                                " available index entries");
  std::partial_sort(d.begin(), d.begin() + long(index.k), d.end());
  double s = 0;
  for (std::size_t i = 0; i < index.k; ++i) s += d[i];
  return s / double(index.k);
}

inline std::vector<double> training_mean_distances(const FeatureIndex& index) {
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean_knn_distance(index.row(i), index, true);
  return out;
}

inline BinTable build_bins(std::span<const double> train_mean_distances, int num_bins, int t_max, int min_bin) {
  if (num_bins < 1) throw std::invalid_argument("number of bins must be >= 1");
  if (min_bin < 1 || min_bin > num_bins) throw std::invalid_argument("min_bin must lie in [1, |B|]");
  if (t_max < 1) throw std::invalid_argument("T_max must be >= 1");
  if (train_mean_distances.empty()) throw std::invalid_argument("build_bins: no distances");
  const auto [lo, hi] = std::minmax_element(train_mean_distances.begin(), train_mean_distances.end());
  if (!(*hi > *lo))
    throw DegenerateBinsError("all training mean distances are equal; bins are undefined, use static conditioning");
  BinTable t;
  t.num_bins = num_bins;
  t.t_max = t_max;
  t.min_bin = min_bin;
  t.edges.resize(std::size_t(num_bins) + 1);
  const double width = (*hi - *lo) / num_bins;
  for (int i = 0; i <= num_bins; ++i) t.edges[std::size_t(i)] = *lo + width * i;
  t.edges.back() = *hi;
  return t;
}

// Half-open bins [e_{i-1}, e_i), last bin closed; out-of-range values clamp
// to the first or last bin, and the result is raised to min_bin.
inline int raw_bin(double mean_distance, const BinTable& table) {
  const auto it = std::upper_bound(table.edges.begin(), table.edges.end(), mean_distance);
  const int b = int(it - table.edges.begin());
  return std::clamp(b, 1, table.num_bins);
}

inline int assign_bin(double mean_distance, const BinTable& table) {
  return std::max(raw_bin(mean_distance, table), table.min_bin);
}

inline int round_to_multiple(int value, int multiple) {
  if (multiple <= 1) return value;
  return ((value + multiple / 2) / multiple) * multiple;
}

// floor(b / |B| * T_max), rounded to the nearest multiple and clamped to
// [round_multiple, T_max].
inline int dynamic_step(int bin, const BinTable& table, int round_multiple = 10) {
  if (bin < 1 || bin > table.num_bins) throw std::out_of_range("bin " + std::to_string(bin) + " outside [1, |B|]");
  const int raw = bin * table.t_max / table.num_bins;
  const int lo = std::min(std::max(round_multiple, 1), table.t_max);
  return std::clamp(round_to_multiple(raw, round_multiple), lo, table.t_max);
}

struct DicDecision {
  double mean_distance = 0;
  int bin = 0;
  int t_hat = 0;
};

inline int step_for_distance(double mean_distance, const BinTable& table, const DicConfig& cfg) {
  if (cfg.order == RoundingOrder::floor_then_round) return dynamic_step(assign_bin(mean_distance, table), table, cfg.round_multiple);
  const int rounded = dynamic_step(raw_bin(mean_distance, table), table, cfg.round_multiple);
  const int floor_step = table.min_bin * table.t_max / table.num_bins;
  return std::max(rounded, floor_step);
}

inline DicDecision dynamic_conditioning(const Tensor& image, const FeatureExtractor& phi, const FeatureIndex& index,
                                        const BinTable& table, const DicConfig& cfg) {
  if (index.size() == 0) throw std::logic_error("DIC index has not been built");
  if (phi.block_channels(index.block) != index.dim)
    throw std::invalid_argument("index block " + std::to_string(index.block) + " dimension " +
                                std::to_string(index.dim) + " does not match the extractor");
  DicDecision d;
  d.mean_distance = mean_knn_distance(phi.pooled(image, index.block), index, false);
  d.bin = cfg.order == RoundingOrder::floor_then_round ? assign_bin(d.mean_distance, table)
                                                        : raw_bin(d.mean_distance, table);
  d.t_hat = step_for_distance(d.mean_distance, table, cfg);
  return d;
}

// ---------------------------------------------------------------------------
// Persistence. Layout (little-endian):
//   "DICINDEX" | u32 version | u32 dim | u32 N | u32 K | u32 |B| | u32 T_max |
//   u32 min_bin | u32 block | f64 edges[|B|+1] | f32 vectors[N*dim]

inline void save_index(const std::filesystem::path& path, const FeatureIndex& index, const BinTable& table) {
  io::write_atomic(path, [&](std::ostream& os) {
    os.write("DICINDEX", 8);
    io::put<std::uint32_t>(os, 1);
    for (std::size_t v : {index.dim, index.size(), index.k, std::size_t(table.num_bins), std::size_t(table.t_max),
                          std::size_t(table.min_bin), std::size_t(index.block)})
      io::put<std::uint32_t>(os, std::uint32_t(v));
    for (double e : table.edges) io::put<double>(os, e);
    os.write(reinterpret_cast<const char*>(index.vectors.data()), std::streamsize(index.vectors.size() * sizeof(float)));
  });
}

inline std::pair<FeatureIndex, BinTable> load_index(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open index file " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  if (!is.read(magic, 8) || std::string(magic, 8) != "DICINDEX" || !io::get(is, version) || version != 1)
    throw FormatError(path.string() + ": not a DIC index file");
  std::uint32_t h[7];
  for (auto& v : h)
    if (!io::get(is, v)) throw FormatError(path.string() + ": truncated header");
  FeatureIndex idx;
  BinTable t;
  idx.dim = h[0];
  idx.k = h[2];
  t.num_bins = int(h[3]);
  t.t_max = int(h[4]);
  t.min_bin = int(h[5]);
  idx.block = int(h[6]);
  t.edges.resize(std::size_t(t.num_bins) + 1);
  for (auto& e : t.edges)
    if (!io::get(is, e)) throw FormatError(path.string() + ": truncated bin edges");
  idx.vectors.resize(std::size_t(h[1]) * idx.dim);
  if (!is.read(reinterpret_cast<char*>(idx.vectors.data()), std::streamsize(idx.vectors.size() * sizeof(float))))
    throw FormatError(path.string() + ": truncated feature vectors");
  return {std::move(idx), std::move(t)};
}

}  // namespace dicad
