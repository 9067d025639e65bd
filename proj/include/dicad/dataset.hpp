#pragma once

// MVTec-style dataset trees:
//   <root>/<category>/train/good/*.png
//   <root>/<category>/validation/good/*.png           (optional)
//   <root>/<category>/test/<defect>/*.png
//   <root>/<category>/ground_truth/<defect>/<stem>_mask.png

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicad/image_io.hpp"
#include "dicad/imaging.hpp"

namespace dicad {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  std::string name;        // relative path inside the category
  Tensor image;            // CHW in [0,1]
  int label = 0;           // 1 anomalous
  std::string defect = "good";
  Tensor mask;             // HW binary, zeros for nominal images
  std::optional<Tensor> source;  // pre-anomaly image (synthetic data only)
};

struct DatasetLayout {
  std::filesystem::path root;
  std::string category;
  std::vector<Sample> train, validation, test;

  std::vector<Tensor> train_images() const {
    std::vector<Tensor> v;
    for (const auto& s : train) v.push_back(s.image);
    return v;
  }
  std::vector<Tensor> validation_images() const {
    std::vector<Tensor> v;
    for (const auto& s : validation) v.push_back(s.image);
    return v;
  }
};

struct LoadOptions {
  std::size_t resolution = 256;  // 0 keeps native size
  double validation_fraction = 0.1;  // held out from train when no validation/ split exists
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
  const auto e = lower_ext(p);
  return e == ".png" || e == ".jpg" || e == ".jpeg" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

inline std::vector<std::filesystem::path> sorted_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) return files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

inline Tensor fit_image(Tensor img, std::size_t res) {
  return res ? resize_bilinear(img, res, res) : img;
}

inline Tensor fit_mask(const Tensor& mask, std::size_t res) {
  if (!res) return mask;
  return resize_nearest(mask.reshaped({1, mask.dim(0), mask.dim(1)}), res, res).reshaped({res, res});
}

}  // namespace detail

inline DatasetLayout load_dataset(const std::filesystem::path& root, const std::string& category,
                                  const LoadOptions& opt = {}) {
  const auto base = root / category;
  if (!std::filesystem::is_directory(base)) throw DatasetError("category directory not found: " + base.string());
  DatasetLayout d;
  d.root = root;
  d.category = category;

  auto load_nominal = [&](const std::filesystem::path& dir, std::vector<Sample>& into) {
    for (const auto& f : detail::sorted_images(dir)) {
      Sample s;
      s.name = std::filesystem::relative(f, base).generic_string();
      s.image = detail::fit_image(read_image(f), opt.resolution);
      s.mask = Tensor(Shape{s.image.dim(1), s.image.dim(2)});
      into.push_back(std::move(s));
    }
  };
  load_nominal(base / "train" / "good", d.train);
  if (d.train.empty()) throw DatasetError("empty train split: " + (base / "train" / "good").string());
  load_nominal(base / "validation" / "good", d.validation);
  if (d.validation.empty() && opt.validation_fraction > 0) {
    const std::size_t n = std::max<std::size_t>(
        1, std::size_t(std::lround(opt.validation_fraction * double(d.train.size()))));
    if (n >= d.train.size()) throw DatasetError("train split too small to hold out a validation set");
    d.validation.assign(std::make_move_iterator(d.train.end() - long(n)), std::make_move_iterator(d.train.end()));
    d.train.resize(d.train.size() - n);
  }

  const auto test_dir = base / "test";
  if (!std::filesystem::is_directory(test_dir)) throw DatasetError("test split not found: " + test_dir.string());
  std::vector<std::filesystem::path> defects;
  for (const auto& e : std::filesystem::directory_iterator(test_dir))
    if (e.is_directory()) defects.push_back(e.path());
  std::sort(defects.begin(), defects.end());
  for (const auto& ddir : defects) {
    const std::string defect = ddir.filename().string();
    for (const auto& f : detail::sorted_images(ddir)) {
      Sample s;
      s.name = std::filesystem::relative(f, base).generic_string();
      s.defect = defect;
      Tensor img = read_image(f);
      if (defect == "good") {
        s.mask = Tensor(Shape{img.dim(1), img.dim(2)});
      } else {
        s.label = 1;
        const auto mpath = base / "ground_truth" / defect / (f.stem().string() + "_mask.png");
        if (!std::filesystem::exists(mpath))
          throw DatasetError("missing mask for anomalous image " + f.string() + " (expected " + mpath.string() + ")");
        s.mask = read_mask(mpath);
        if (s.mask.dim(0) != img.dim(1) || s.mask.dim(1) != img.dim(2))
          throw DatasetError("mask size mismatch for " + f.string() + ": image " + std::to_string(img.dim(2)) + "x" +
                             std::to_string(img.dim(1)) + ", mask " + std::to_string(s.mask.dim(1)) + "x" +
                             std::to_string(s.mask.dim(0)));
      }
      s.image = detail::fit_image(std::move(img), opt.resolution);
      s.mask = detail::fit_mask(s.mask, opt.resolution);
      d.test.push_back(std::move(s));
    }
  }
  if (d.test.empty()) throw DatasetError("empty test split: " + test_dir.string());
  return d;
}

// Writes a layout as an MVTec-style tree under root/category.
inline void write_dataset(const DatasetLayout& d, const std::filesystem::path& root) {
  const auto base = root / d.category;
  for (std::size_t i = 0; i < d.train.size(); ++i) write_image(base / d.train[i].name, d.train[i].image);
  for (std::size_t i = 0; i < d.validation.size(); ++i) write_image(base / d.validation[i].name, d.validation[i].image);
  for (const auto& s : d.test) {
    write_image(base / s.name, s.image);
    if (s.label) {
      const std::filesystem::path rel(s.name);
      write_image(base / "ground_truth" / s.defect / (rel.stem().string() + "_mask.png"), s.mask);
      if (s.source) write_image(base / "source" / s.defect / (rel.stem().string() + "_source.png"), *s.source);
    }
  }
}

// Converts a VisA category (split CSV with columns object,split,label,image,mask)
// into the MVTec-style tree. Returns the number of images written.
inline std::size_t convert_visa(const std::filesystem::path& visa_root, const std::filesystem::path& split_csv,
                                const std::filesystem::path& out_root) {
  std::ifstream is(split_csv);
  if (!is) throw DatasetError("cannot open split file " + split_csv.string());
  std::string line;
  if (!std::getline(is, line)) throw DatasetError("empty split file " + split_csv.string());
  std::map<std::string, int> counters;
  std::size_t written = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> col;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) col.push_back(cell);
    if (col.size() < 4) throw DatasetError("malformed split row: " + line);
    const std::string& object = col[0];
    const std::string& split = col[1];
    const bool anomalous = col[2] == "anomaly";
    const std::string defect = anomalous ? "bad" : "good";
    const std::string sub = split == "train" ? "train" : "test";
    if (sub == "train" && anomalous) throw DatasetError("anomalous image listed in train split: " + col[3]);
    const int id = counters[object + "/" + sub + "/" + defect]++;
    char stem[16];
    std::snprintf(stem, sizeof stem, "%03d", id);
    const auto dst = out_root / object / sub / defect / (std::string(stem) + ".png");
    write_image(dst, read_image(visa_root / col[3]));
    if (anomalous) {
      if (col.size() < 5 || col[4].empty()) throw DatasetError("anomalous image without mask: " + col[3]);
      const Tensor m = read_mask(visa_root / col[4]);
      write_image(out_root / object / "ground_truth" / defect / (std::string(stem) + "_mask.png"), m);
    }
    ++written;
  }
  return written;
}

}  // namespace dicad
