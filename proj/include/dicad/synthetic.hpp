#pragma once

// Synthetic industrial-texture dataset: a jittered lattice of soft disks on
// a flat background. Test anomalies come in three sizes: thin scratches,
// foreign blobs and missing groups of disks. Every anomalous sample keeps
// its pre-anomaly source, and its mask is exactly the set of pixels that
// differ from that source.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/dataset.hpp"
#include "dicad/image_io.hpp"

namespace dicad {

struct AreaRange {
  double lo = 0, hi = 0;  // fraction of image area
};

struct SyntheticSpec {
  std::size_t size = 64;
  std::uint64_t seed = 0;
  std::string category = "synthetic";
  double period = 16.0;
  double radius = 4.5;
  double noise = 0.01;
  std::size_t n_train = 200, n_validation = 20, n_test_good = 20, n_per_kind = 20;
  AreaRange scratch{0.003, 0.03};
  AreaRange blob{0.01, 0.06};
  AreaRange missing{0.03, 0.15};

  void validate() const {
    if (size < 16) throw std::invalid_argument("synthetic image size must be >= 16");
    if (!(period > 2 * radius) || !(radius > 1)) throw std::invalid_argument("synthetic lattice: need period > 2*radius > 2");
    if (n_train == 0) throw std::invalid_argument("synthetic spec needs training images");
    for (const auto& [name, r] : {std::pair{"scratch", scratch}, {"blob", blob}, {"missing", missing}})
      if (!(r.hi > 0) || !(r.lo >= 0) || r.lo > r.hi || r.hi > 1)
        throw std::invalid_argument(std::string("zero-area or invalid area range for anomaly kind ") + name);
  }

  nlohmann::json to_json() const {
    auto ar = [](const AreaRange& r) { return nlohmann::json::array({r.lo, r.hi}); };
    return {{"size", size},         {"seed", seed},       {"category", category},       {"period", period},
            {"radius", radius},     {"noise", noise},     {"n_train", n_train},         {"n_validation", n_validation},
            {"n_test_good", n_test_good}, {"n_per_kind", n_per_kind}, {"scratch", ar(scratch)}, {"blob", ar(blob)},
            {"missing", ar(missing)}};
  }
};

namespace synth {

struct Style {
  std::array<float, 3> bg, disk;
  double phase_x, phase_y, radius;
};

inline Style draw_style(const SyntheticSpec& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> j(-1.0, 1.0);
  Style st;
  const std::array<float, 3> bg{0.22f, 0.24f, 0.26f}, disk{0.82f, 0.62f, 0.30f};
  for (int c = 0; c < 3; ++c) {
    st.bg[c] = bg[c] + 0.03f * float(j(rng));
    st.disk[c] = disk[c] + 0.04f * float(j(rng));
  }
  std::uniform_real_distribution<double> ph(0.0, s.period);
  st.phase_x = ph(rng);
  st.phase_y = ph(rng);
  st.radius = s.radius * (1.0 + 0.05 * j(rng));
  return st;
}

struct Site {
  int i, j;
  bool operator==(const Site&) const = default;
};

inline int site_range(const SyntheticSpec& s) { return int(std::ceil(double(s.size) / s.period)) + 1; }

// Renders with sites listed in `removed` left out; `noise` is added last.
inline Tensor render(const SyntheticSpec& s, const Style& st, const std::vector<float>& noise,
                     const std::vector<Site>& removed = {}) {
  const std::size_t N = s.size;
  Tensor img(Shape{3, N, N});
  const int R = site_range(s);
  for (std::size_t y = 0; y < N; ++y)
    for (std::size_t x = 0; x < N; ++x) {
      // nearest lattice site
      const double fx = (double(x) + 0.5 - st.phase_x) / s.period, fy = (double(y) + 0.5 - st.phase_y) / s.period;
      const int i = int(std::lround(fx)), j = int(std::lround(fy));
      double cover = 0;
      if (i >= -1 && i <= R && j >= -1 && j <= R &&
          std::find(removed.begin(), removed.end(), Site{i, j}) == removed.end()) {
        const double d = std::hypot((fx - i) * s.period, (fy - j) * s.period);
        cover = std::clamp(st.radius + 0.5 - d, 0.0, 1.0);
      }
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = float(st.bg[c] + cover * (st.disk[c] - st.bg[c]));
    }
  for (std::size_t k = 0; k < img.size(); ++k) img[k] = float(to_byte(img[k] + noise[k])) / 255.0f;
  return img;
}

inline std::vector<float> draw_noise(const SyntheticSpec& s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, s.noise);
  std::vector<float> v(3 * s.size * s.size);
  for (auto& e : v) e = float(n(rng));
  return v;
}

inline Tensor diff_mask(const Tensor& a, const Tensor& b) {
  const std::size_t H = a.dim(1), W = a.dim(2);
  Tensor m(Shape{H, W});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < H * W; ++p)
      if (a[c * H * W + p] != b[c * H * W + p]) m[p] = 1.0f;
  return m;
}

inline double area_fraction(const Tensor& mask) { return double(sum(mask)) / double(mask.size()); }

inline void paint(Tensor& img, const Tensor& coverage, const std::array<float, 3>& color, const std::vector<float>& noise) {
  const std::size_t HW = coverage.size();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < HW; ++p)
      if (coverage[p] > 0) {
        const float base = img[c * HW + p];
        const float v = base + coverage[p] * (color[c] - base) + noise[c * HW + p];
        img[c * HW + p] = float(to_byte(v)) / 255.0f;
      }
}

inline Tensor scratch_coverage(const SyntheticSpec& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double N = double(s.size);
  const double len = N * (0.2 + 0.35 * u(rng)), ang = u(rng) * M_PI, half = 0.6 + 0.5 * u(rng);
  const double cx = N * (0.25 + 0.5 * u(rng)), cy = N * (0.25 + 0.5 * u(rng));
  const double dx = std::cos(ang), dy = std::sin(ang);
  Tensor cov(Shape{s.size, s.size});
  for (std::size_t y = 0; y < s.size; ++y)
    for (std::size_t x = 0; x < s.size; ++x) {
      const double px = double(x) + 0.5 - cx, py = double(y) + 0.5 - cy;
      const double along = std::clamp(px * dx + py * dy, -len / 2, len / 2);
      const double d = std::hypot(px - along * dx, py - along * dy);
      cov[y * s.size + x] = float(std::clamp(half + 0.5 - d, 0.0, 1.0));
    }
  return cov;
}

inline Tensor blob_coverage(const SyntheticSpec& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double N = double(s.size);
  const double frac = s.blob.lo + (s.blob.hi - s.blob.lo) * u(rng);
  const double ratio = 0.5 + u(rng);  // a / b
  const double b = std::sqrt(frac * N * N / (M_PI * ratio)), a = ratio * b;
  const double ang = u(rng) * M_PI, c = std::cos(ang), sn = std::sin(ang);
  const double cx = N * (0.25 + 0.5 * u(rng)), cy = N * (0.25 + 0.5 * u(rng));
  Tensor cov(Shape{s.size, s.size});
  for (std::size_t y = 0; y < s.size; ++y)
    for (std::size_t x = 0; x < s.size; ++x) {
      const double px = double(x) + 0.5 - cx, py = double(y) + 0.5 - cy;
      const double u1 = (px * c + py * sn) / a, v1 = (-px * sn + py * c) / b;
      const double r = std::sqrt(u1 * u1 + v1 * v1);
      // about one pixel of soft edge
      cov[y * s.size + x] = float(std::clamp((1.0 - r) * std::min(a, b) + 0.5, 0.0, 1.0));
    }
  return cov;
}

inline std::vector<Site> missing_sites(const SyntheticSpec& s, const Style& st, std::mt19937_64& rng) {
  auto inside = [&](int i, int j, int di, int dj) {
    const double x = st.phase_x + i * s.period, y = st.phase_y + j * s.period;
    return x - st.radius >= 0 && y - st.radius >= 0 && x + di * s.period + st.radius <= double(s.size) &&
           y + dj * s.period + st.radius <= double(s.size);
  };
  // anchor sites whose 3x2 neighbourhood stays mostly inside the image; small
  // images fall back to any fully visible site
  std::vector<Site> anchors, single;
  for (int j = 0; j < site_range(s); ++j)
    for (int i = 0; i < site_range(s); ++i) {
      if (inside(i, j, 1, 1)) anchors.push_back({i, j});
      if (inside(i, j, 0, 0)) single.push_back({i, j});
    }
  if (anchors.empty()) anchors = single;
  if (anchors.empty()) throw std::invalid_argument("synthetic lattice too coarse for missing-component anomalies");
  const Site a = anchors[std::uniform_int_distribution<std::size_t>(0, anchors.size() - 1)(rng)];
  const int n = std::uniform_int_distribution<int>(3, 6)(rng);
  static constexpr Site offsets[] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 0}, {2, 1}};
  std::vector<Site> out;
  for (int k = 0; k < n; ++k) out.push_back({a.i + offsets[k].i, a.j + offsets[k].j});
  return out;
}

inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(split), std::uint32_t(index)};
  return std::mt19937_64(seq);
}

}  // namespace synth

inline Sample synthetic_nominal(const SyntheticSpec& spec, std::uint64_t split, std::uint64_t index) {
  auto rng = synth::sample_rng(spec.seed, split, index);
  const auto st = synth::draw_style(spec, rng);
  const auto noise = synth::draw_noise(spec, rng);
  Sample s;
  s.image = synth::render(spec, st, noise);
  s.mask = Tensor(Shape{spec.size, spec.size});
  return s;
}

// kind: "scratch", "blob" or "missing".
inline Sample synthetic_anomaly(const SyntheticSpec& spec, const std::string& kind, std::uint64_t index) {
  const std::uint64_t split = kind == "scratch" ? 10 : kind == "blob" ? 11 : kind == "missing" ? 12 : 0;
  if (!split) throw std::invalid_argument("unknown synthetic anomaly kind '" + kind + "'");
  const AreaRange range = kind == "scratch" ? spec.scratch : kind == "blob" ? spec.blob : spec.missing;
  auto rng = synth::sample_rng(spec.seed, split, index);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto st = synth::draw_style(spec, rng);
    const auto noise = synth::draw_noise(spec, rng);
    const Tensor source = synth::render(spec, st, noise);
    Tensor img;
    if (kind == "missing") {
      img = synth::render(spec, st, noise, synth::missing_sites(spec, st, rng));
    } else {
      img = source;
      const auto anomaly_noise = synth::draw_noise(spec, rng);
      if (kind == "scratch")
        synth::paint(img, synth::scratch_coverage(spec, rng), {0.92f, 0.95f, 0.98f}, anomaly_noise);
      else
        synth::paint(img, synth::blob_coverage(spec, rng), {0.10f, 0.16f, 0.55f}, anomaly_noise);
    }
    Tensor mask = synth::diff_mask(source, img);
    const double a = synth::area_fraction(mask);
    if (a < range.lo || a > range.hi || a == 0) continue;
    Sample s;
    s.image = std::move(img);
    s.mask = std::move(mask);
    s.label = 1;
    s.defect = kind;
    s.source = source;
    return s;
  }
  throw std::runtime_error("could not draw a '" + kind + "' anomaly inside its area range");
}

inline const std::vector<std::string>& synthetic_kinds() {
  static const std::vector<std::string> k{"scratch", "blob", "missing"};
  return k;
}

inline DatasetLayout generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  DatasetLayout d;
  d.category = spec.category;
  auto name = [](const std::string& dir, std::size_t i) {
    char b[16];
    std::snprintf(b, sizeof b, "%03zu.png", i);
    return dir + "/" + b;
  };
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    d.train.push_back(synthetic_nominal(spec, 1, i));
    d.train.back().name = name("train/good", i);
  }
  for (std::size_t i = 0; i < spec.n_validation; ++i) {
    d.validation.push_back(synthetic_nominal(spec, 2, i));
    d.validation.back().name = name("validation/good", i);
  }
  for (std::size_t i = 0; i < spec.n_test_good; ++i) {
    d.test.push_back(synthetic_nominal(spec, 3, i));
    d.test.back().name = name("test/good", i);
  }
  for (const auto& kind : synthetic_kinds())
    for (std::size_t i = 0; i < spec.n_per_kind; ++i) {
      d.test.push_back(synthetic_anomaly(spec, kind, i));
      d.test.back().name = name("test/" + kind, i);
    }
  return d;
}

}  // namespace dicad
