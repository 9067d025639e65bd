#pragma once

// Slow, obviously-correct reference implementations used to cross-check
// the library. Nothing here shares code with include/.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <set>
#include <vector>

namespace oracle {

// Counts correctly ordered (positive, negative) pairs; ties count one half.
inline double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double good = 0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) good += 1;
      else if (scores[i] == scores[j]) good += 0.5;
    }
  }
  return good / double(pairs);
}

// 8-connected components by repeated label propagation until stable.
inline std::vector<int> components(const std::vector<int>& mask, int H, int W) {
  std::vector<int> lab(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) lab[i] = mask[i] ? int(i) + 1 : 0;
  for (bool changed = true; changed;) {
    changed = false;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int& l = lab[std::size_t(y * W + x)];
        if (!l) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
            const int o = lab[std::size_t(yy * W + xx)];
            if (o && o < l) {
              l = o;
              changed = true;
            }
          }
      }
  }
  return lab;
}

struct Image {
  int H, W;
  std::vector<double> score;
  std::vector<int> mask;
};

// PRO by enumerating every distinct score as a threshold (score >= thr),
// building the curve from (0,0) and integrating up to `limit`.
inline double pro_exhaustive(const std::vector<Image>& images, double limit) {
  std::set<double> values;
  for (const auto& im : images) values.insert(im.score.begin(), im.score.end());
  struct Region {
    std::size_t img;
    std::vector<std::size_t> px;
  };
  std::vector<Region> regions;
  double nominal = 0;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto lab = components(images[k].mask, images[k].H, images[k].W);
    std::set<int> ids(lab.begin(), lab.end());
    ids.erase(0);
    for (int id : ids) {
      Region r{k, {}};
      for (std::size_t p = 0; p < lab.size(); ++p)
        if (lab[p] == id) r.px.push_back(p);
      regions.push_back(r);
    }
    for (int m : images[k].mask) nominal += m ? 0 : 1;
  }
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    const double thr = *it;
    double fp = 0;
    for (const auto& im : images)
      for (std::size_t p = 0; p < im.score.size(); ++p)
        if (!im.mask[p] && im.score[p] >= thr) fp += 1;
    double ov = 0;
    for (const auto& r : regions) {
      double hit = 0;
      for (auto p : r.px) hit += images[r.img].score[p] >= thr ? 1 : 0;
      ov += hit / double(r.px.size());
    }
    curve.push_back({fp / nominal, ov / double(regions.size())});
  }
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    auto [x0, y0] = curve[i - 1];
    auto [x1, y1] = curve[i];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += (x1 - x0) * (y0 + y1) / 2;
  }
  return area / limit;
}

// Mean L1 distance to the k nearest rows, by full sort of all distances.
inline double knn_mean(const std::vector<float>& q, const std::vector<std::vector<float>>& rows, std::size_t k,
                       bool drop_one_zero) {
  std::vector<double> d;
  for (const auto& r : rows) {
    double s = 0;
    for (std::size_t i = 0; i < q.size(); ++i) s += std::fabs(double(q[i]) - double(r[i]));
    d.push_back(s);
  }
  std::sort(d.begin(), d.end());
  if (drop_one_zero && !d.empty() && d.front() == 0.0) d.erase(d.begin());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += d[i];
  return s / double(k);
}

// Bin by scanning intervals [e_i, e_{i+1}), last bin closed, clamped.
inline int bin_scan(double v, const std::vector<double>& edges) {
  const int B = int(edges.size()) - 1;
  if (v < edges[0]) return 1;
  for (int i = 0; i < B; ++i)
    if (v >= edges[std::size_t(i)] && v < edges[std::size_t(i + 1)]) return i + 1;
  return B;
}

}  // namespace oracle
