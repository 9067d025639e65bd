#pragma once

// Image-level AUROC, pooled pixel-level AUROC and the per-region overlap
// (PRO) curve integrated up to an FPR limit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/anomaly_map.hpp"
#include "dicad/tensor.hpp"

namespace dicad {

// Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked
// correctly, ties counted one half.
template <class S>
double auroc(std::span<const S> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // 2 * (correct pairs) + (tied pairs), kept integral so the result is exact.
  unsigned __int128 twice = 0;
  std::uint64_t neg_below = 0, npos = 0, nneg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? p : n) += 1;
      ++j;
    }
    twice += (unsigned __int128)(2 * neg_below + n) * p;
    neg_below += n;
    npos += p;
    nneg += n;
    i = j;
  }
  if (npos == 0 || nneg == 0) throw std::invalid_argument("auroc needs both positive and negative samples");
  return double(twice) / (2.0 * double(npos) * double(nneg));
}

inline double pixel_auroc(std::span<const Tensor> maps, std::span<const Tensor> masks) {
  if (maps.size() != masks.size()) throw std::invalid_argument("pixel_auroc: map and mask counts differ");
  std::vector<float> scores;
  std::vector<int> labels;
  bool any_positive = false;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    maps[i].require_same_shape(masks[i], "pixel_auroc");
    for (std::size_t p = 0; p < maps[i].size(); ++p) {
      scores.push_back(maps[i][p]);
      labels.push_back(masks[i][p] > 0.5f ? 1 : 0);
      any_positive = any_positive || labels.back();
    }
  }
  if (!any_positive) throw std::invalid_argument("pixel_auroc: no anomalous pixels in the whole set");
  return auroc<float>(scores, labels);
}

// Connected components of a binary HW mask with 8-connectivity. Returns
// labels (0 = background, 1..count) and the component count.
inline std::pair<std::vector<int>, int> label_regions(const Tensor& mask) {
  const std::size_t H = mask.dim(mask.rank() - 2), W = mask.dim(mask.rank() - 1);
  std::vector<int> lab(H * W, 0);
  int count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < H * W; ++s) {
    if (mask[s] <= 0.5f || lab[s]) continue;
    lab[s] = ++count;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const long py = long(p / W), px = long(p % W);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long y = py + dy, x = px + dx;
          if (y < 0 || x < 0 || y >= long(H) || x >= long(W)) continue;
          const std::size_t q = std::size_t(y) * W + std::size_t(x);
          if (mask[q] > 0.5f && !lab[q]) {
            lab[q] = count;
            stack.push_back(q);
          }
        }
    }
  }
  return {std::move(lab), count};
}

struct CurvePoint {
  double fpr = 0, overlap = 0;
};

// Trapezoid area under a piecewise linear curve (sorted by fpr) on
// [0, limit], normalized by limit.
inline double normalized_area(std::span<const CurvePoint> curve, double limit) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (a.fpr >= limit) break;
    if (b.fpr <= limit) {
      area += (b.fpr - a.fpr) * (a.overlap + b.overlap) / 2;
    } else {
      const double w = (limit - a.fpr) / (b.fpr - a.fpr);
      const double y = a.overlap + w * (b.overlap - a.overlap);
      area += (limit - a.fpr) * (a.overlap + y) / 2;
    }
  }
  return area / limit;
}

// PRO curve over every distinct score threshold (prediction: score >= t),
// starting at (0, 0).
inline std::vector<CurvePoint> pro_curve(std::span<const Tensor> maps, std::span<const Tensor> masks) {
  if (maps.size() != masks.size()) throw std::invalid_argument("pro: map and mask counts differ");
  struct Pixel {
    float score;
    int region;  // -1 nominal, otherwise global region id
  };
  std::vector<Pixel> px;
  std::vector<double> region_size;
  std::size_t nominal = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    maps[i].require_same_shape(masks[i], "pro");
    const auto [lab, count] = label_regions(masks[i]);
    const int offset = int(region_size.size());
    region_size.resize(region_size.size() + std::size_t(count), 0.0);
    for (std::size_t p = 0; p < lab.size(); ++p) {
      const int r = lab[p] ? offset + lab[p] - 1 : -1;
      if (r >= 0)
        region_size[std::size_t(r)] += 1;
      else
        ++nominal;
      px.push_back({maps[i][p], r});
    }
  }
  if (region_size.empty()) throw std::invalid_argument("pro: no anomalous regions in the whole set");
  if (nominal == 0) throw std::invalid_argument("pro: no nominal pixels to measure false positives");
  std::sort(px.begin(), px.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
  const double regions = double(region_size.size());
  std::vector<CurvePoint> curve{{0.0, 0.0}};
  double overlap_sum = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < px.size();) {
    std::size_t j = i;
    for (; j < px.size() && px[j].score == px[i].score; ++j) {
      if (px[j].region < 0)
        ++fp;
      else
        overlap_sum += 1.0 / region_size[std::size_t(px[j].region)];
    }
    curve.push_back({double(fp) / double(nominal), overlap_sum / regions});
    i = j;
  }
  return curve;
}

inline double pro(std::span<const Tensor> maps, std::span<const Tensor> masks, double fpr_limit = 0.3) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw std::invalid_argument("pro: fpr limit must lie in (0,1]");
  const auto curve = pro_curve(maps, masks);
  return normalized_area(curve, fpr_limit);
}

// ---------------------------------------------------------------------------

struct CategoryReport {
  std::string category;
  double i_auroc = 0, p_auroc = 0, pro = 0;
  std::size_t n_images = 0, n_anomalous = 0, n_pixels = 0, n_regions = 0;

  bool operator==(const CategoryReport&) const = default;
  nlohmann::json to_json() const {
    return {{"category", category}, {"i_auroc", i_auroc},         {"p_auroc", p_auroc},
            {"pro", pro},           {"n_images", n_images},       {"n_anomalous", n_anomalous},
            {"n_pixels", n_pixels}, {"n_regions", n_regions}};
  }
  static CategoryReport from_json(const nlohmann::json& j) {
    CategoryReport r;
    r.category = j.at("category");
    r.i_auroc = j.at("i_auroc");
    r.p_auroc = j.at("p_auroc");
    r.pro = j.at("pro");
    r.n_images = j.at("n_images");
    r.n_anomalous = j.at("n_anomalous");
    r.n_pixels = j.at("n_pixels");
    r.n_regions = j.at("n_regions");
    return r;
  }
};

struct EvalReport {
  std::vector<CategoryReport> categories;

  bool operator==(const EvalReport&) const = default;

  // Unweighted mean over categories.
  CategoryReport average() const {
    CategoryReport a;
    a.category = "average";
    if (categories.empty()) return a;
    for (const auto& c : categories) {
      a.i_auroc += c.i_auroc;
      a.p_auroc += c.p_auroc;
      a.pro += c.pro;
      a.n_images += c.n_images;
      a.n_anomalous += c.n_anomalous;
      a.n_pixels += c.n_pixels;
      a.n_regions += c.n_regions;
    }
    const double n = double(categories.size());
    a.i_auroc /= n;
    a.p_auroc /= n;
    a.pro /= n;
    return a;
  }

  // One JSON record per line, categories first, then the average.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& c : categories) out += c.to_json().dump() + "\n";
    auto avg = average().to_json();
    avg["average"] = true;
    out += avg.dump() + "\n";
    return out;
  }
  static EvalReport from_jsonl(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.value("average", false)) continue;
      r.categories.push_back(CategoryReport::from_json(j));
    }
    return r;
  }

  // "(I-AUROC,PRO)" per category in percent, plus P-AUROC.
  std::string to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << std::left << std::setw(20) << "category" << std::setw(16) << "(I-AUROC,PRO)" << "P-AUROC\n";
    auto row = [&](const CategoryReport& c) {
      std::ostringstream t;
      t << std::fixed << std::setprecision(1) << '(' << 100 * c.i_auroc << ',' << 100 * c.pro << ')';
      os << std::left << std::setw(20) << c.category << std::setw(16) << t.str() << 100 * c.p_auroc << "\n";
    };
    for (const auto& c : categories) row(c);
    row(average());
    return os.str();
  }
};

// Computes all metrics for one category. labels: 1 anomalous, 0 nominal;
// masks are HW binary maps (all-zero for nominal images).
inline CategoryReport evaluate_category(const std::string& name, std::span<const AnomalyResult> results,
                                        std::span<const int> labels, std::span<const Tensor> masks,
                                        double fpr_limit = 0.3) {
  if (results.size() != labels.size() || results.size() != masks.size())
    throw std::invalid_argument("evaluate_category: results, labels and masks differ in count");
  std::vector<float> scores;
  std::vector<Tensor> maps;
  for (const auto& r : results) {
    scores.push_back(r.image_score);
    maps.push_back(r.a_map);
  }
  CategoryReport rep;
  rep.category = name;
  rep.i_auroc = auroc<float>(scores, labels);
  rep.p_auroc = pixel_auroc(maps, masks);
  rep.pro = pro(maps, masks, fpr_limit);
  rep.n_images = results.size();
  rep.n_anomalous = std::size_t(std::count(labels.begin(), labels.end(), 1));
  for (const auto& m : masks) {
    rep.n_pixels += m.size();
    rep.n_regions += std::size_t(label_regions(m).second);
  }
  return rep;
}

}  // namespace dicad
