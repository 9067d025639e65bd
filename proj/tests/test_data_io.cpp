#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dicad/dataset.hpp"
#include "dicad/synthetic.hpp"

using namespace dicad;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dicad_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SyntheticSpec small_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.size = 64;
  s.seed = seed;
  s.n_train = 12;
  s.n_validation = 3;
  s.n_test_good = 4;
  s.n_per_kind = 5;
  return s;
}

Tensor random_image(std::size_t C, std::size_t H, std::size_t W, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(Shape{C, H, W});
  for (auto& v : t.vec()) v = float(rng() % 256) / 255.0f;
  return t;
}

}  // namespace

TEST(Synthetic, DeterministicForSeed) {
  const auto a = generate_synthetic(small_spec()), b = generate_synthetic(small_spec());
  ASSERT_EQ(a.test.size(), b.test.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].image, b.train[i].image);
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    EXPECT_EQ(a.test[i].name, b.test[i].name);
    EXPECT_EQ(a.test[i].image, b.test[i].image);
    EXPECT_EQ(a.test[i].mask, b.test[i].mask);
  }
  const auto c = generate_synthetic(small_spec(4));
  EXPECT_NE(a.train[0].image, c.train[0].image);
}

TEST(Synthetic, CountsAndSplits) {
  const auto d = generate_synthetic(small_spec());
  EXPECT_EQ(d.train.size(), 12u);
  EXPECT_EQ(d.validation.size(), 3u);
  EXPECT_EQ(d.test.size(), 4u + 3 * 5u);
  for (const auto& s : d.train) {
    EXPECT_EQ(s.label, 0);
    EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
    EXPECT_EQ(max_value(s.mask), 0.0f);
  }
}

TEST(Synthetic, MaskIsExactlyTheModifiedPixels) {
  const auto spec = small_spec();
  for (const auto& kind : synthetic_kinds())
    for (std::uint64_t i = 0; i < 6; ++i) {
      const auto s = synthetic_anomaly(spec, kind, i);
      ASSERT_TRUE(s.source.has_value());
      const std::size_t hw = 64 * 64;
      std::size_t diff = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        bool changed = false;
        for (std::size_t c = 0; c < 3; ++c) changed = changed || s.image[c * hw + p] != (*s.source)[c * hw + p];
        EXPECT_EQ(s.mask[p], changed ? 1.0f : 0.0f) << kind << " " << i << " px " << p;
        diff += changed;
      }
      const double frac = double(diff) / double(hw);
      const AreaRange r = kind == "scratch" ? spec.scratch : kind == "blob" ? spec.blob : spec.missing;
      EXPECT_GE(frac, r.lo) << kind;
      EXPECT_LE(frac, r.hi) << kind;
    }
}

TEST(Synthetic, MissingIsTheLargestKind) {
  const auto spec = small_spec();
  auto mean_area = [&](const std::string& k) {
    double a = 0;
    for (std::uint64_t i = 0; i < 10; ++i) a += sum(synthetic_anomaly(spec, k, i).mask);
    return a / 10;
  };
  EXPECT_GT(mean_area("missing"), mean_area("blob"));
  EXPECT_GT(mean_area("blob"), mean_area("scratch"));
}

TEST(Synthetic, SpecValidation) {
  auto s = small_spec();
  s.blob = {0, 0};
  EXPECT_THROW(generate_synthetic(s), std::invalid_argument);
  s = small_spec();
  s.missing = {0.2, 0.1};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.n_train = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_THROW(synthetic_anomaly(small_spec(), "crack", 0), std::invalid_argument);
}

TEST(Dataset, WriteThenLoadRoundTrip) {
  const auto root = fresh("roundtrip");
  const auto d = generate_synthetic(small_spec());
  write_dataset(d, root);
  LoadOptions opt;
  opt.resolution = 0;
  const auto back = load_dataset(root, d.category, opt);
  EXPECT_EQ(back.train.size(), d.train.size());
  EXPECT_EQ(back.validation.size(), d.validation.size());
  ASSERT_EQ(back.test.size(), d.test.size());
  // Test defects load in directory order; match by name.
  for (const auto& s : back.test) {
    const auto it = std::find_if(d.test.begin(), d.test.end(), [&](const Sample& o) { return o.name == s.name; });
    ASSERT_NE(it, d.test.end()) << s.name;
    EXPECT_EQ(s.image, it->image) << s.name;  // generator output is already 8-bit quantized
    EXPECT_EQ(s.mask, it->mask);
    EXPECT_EQ(s.label, it->label);
    EXPECT_EQ(s.defect, it->defect);
  }
  for (std::size_t i = 1; i < back.test.size(); ++i)
    EXPECT_LE(back.test[i - 1].defect, back.test[i].defect);
  EXPECT_TRUE(fs::exists(root / d.category / "source" / "blob" / "000_source.png"));

  const auto again = load_dataset(root, d.category, opt);
  for (std::size_t i = 0; i < again.test.size(); ++i) EXPECT_EQ(again.test[i].name, back.test[i].name);
  for (const auto& s : again.train) EXPECT_EQ(s.label, 0);
}

TEST(Dataset, ResizesImagesAndKeepsMasksBinary) {
  const auto root = fresh("resize");
  const auto d = generate_synthetic(small_spec());
  write_dataset(d, root);
  LoadOptions opt;
  opt.resolution = 32;
  const auto r = load_dataset(root, d.category, opt);
  for (const auto& s : r.test) {
    EXPECT_EQ(s.image.shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(s.mask.shape(), (Shape{32, 32}));
    for (float v : s.mask.vec()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  }
}

TEST(Dataset, HoldsOutValidationWhenAbsent) {
  const auto root = fresh("holdout");
  auto d = generate_synthetic(small_spec());
  d.validation.clear();
  write_dataset(d, root);
  LoadOptions opt;
  opt.resolution = 0;
  opt.validation_fraction = 0.25;
  const auto r = load_dataset(root, d.category, opt);
  EXPECT_EQ(r.validation.size(), 3u);
  EXPECT_EQ(r.train.size(), 9u);
  EXPECT_EQ(r.validation.back().name, d.train.back().name);
}

TEST(Dataset, Errors) {
  const auto root = fresh("errors");
  const auto d = generate_synthetic(small_spec());
  write_dataset(d, root);
  const auto base = root / d.category;
  LoadOptions opt;
  opt.resolution = 0;

  const auto mask = base / "ground_truth" / "scratch" / "002_mask.png";
  fs::rename(mask, base / "moved.png");
  try {
    load_dataset(root, d.category, opt);
    FAIL();
  } catch (const DatasetError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("test/scratch/002.png"), std::string::npos) << msg;
    EXPECT_NE(msg.find("002_mask.png"), std::string::npos) << msg;
  }
  write_image(mask, Tensor(Shape{32, 32}));
  try {
    load_dataset(root, d.category, opt);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos) << e.what();
  }
  fs::rename(base / "moved.png", mask);
  EXPECT_NO_THROW(load_dataset(root, d.category, opt));

  fs::remove_all(base / "train" / "good");
  fs::create_directories(base / "train" / "good");
  try {
    load_dataset(root, d.category, opt);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("empty train split"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(root, "absent", opt), DatasetError);
}

TEST(ImageIo, RoundTripLossless) {
  const auto dir = fresh("image");
  const Tensor rgb = random_image(3, 17, 23, 1);
  for (const char* ext : {".png", ".ppm"}) {
    write_image(dir / (std::string("rgb") + ext), rgb);
    EXPECT_EQ(read_image(dir / (std::string("rgb") + ext)), rgb) << ext;
  }
  const Tensor gray = random_image(1, 9, 5, 2);
  write_image(dir / "g.png", gray);
  const Tensor back = read_image(dir / "g.png");
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < gray.size(); ++i) EXPECT_EQ(back[c * gray.size() + i], gray[i]);

  const Tensor m = random_image(1, 12, 12, 3).reshaped({12, 12});
  write_float_map(dir / "m.map", m);
  EXPECT_EQ(read_float_map(dir / "m.map"), m);
}

TEST(ImageIo, NonImageIsTypedError) {
  const auto dir = fresh("nonimage");
  std::ofstream(dir / "notes.txt") << "hello";
  std::ofstream(dir / "fake.png") << "not a png at all";
  EXPECT_THROW(read_image(dir / "notes.txt"), ImageError);
  EXPECT_THROW(read_image(dir / "fake.png"), ImageError);
  EXPECT_THROW(read_image(dir / "missing.png"), ImageError);
  EXPECT_THROW(write_image(dir / "x.bmp", Tensor(Shape{3, 2, 2})), ImageError);
  EXPECT_THROW(read_float_map(dir / "notes.txt"), FormatError);
}

TEST(ImageIo, MaskThresholdIdempotent) {
  const auto dir = fresh("mask");
  Tensor g(Shape{1, 4, 4});
  const float vals[] = {0, 0.2f, 0.49f, 0.498f, 0.5f, 0.51f, 0.7f, 1, 0, 1, 0.3f, 0.9f, 0.45f, 0.55f, 0.1f, 0.6f};
  for (std::size_t i = 0; i < 16; ++i) g[i] = vals[i];
  write_image(dir / "m0.png", g);
  const Tensor m1 = read_mask(dir / "m0.png");
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m1[i], std::lround(vals[i] * 255) > 127 ? 1.0f : 0.0f) << i;
  write_image(dir / "m1.png", m1);
  EXPECT_EQ(read_mask(dir / "m1.png"), m1);
}

TEST(Visa, ConvertsSplitCsv) {
  const auto src = fresh("visa_src"), out = fresh("visa_out");
  fs::create_directories(src / "candle" / "Images" / "Normal");
  fs::create_directories(src / "candle" / "Images" / "Anomaly");
  fs::create_directories(src / "candle" / "Masks" / "Anomaly");
  std::ofstream csv(src / "split.csv");
  csv << "object,split,label,image,mask\n";
  for (int i = 0; i < 3; ++i) {
    const auto name = "candle/Images/Normal/n" + std::to_string(i) + ".png";
    write_image(src / name, random_image(3, 16, 16, std::uint64_t(10 + i)));
    csv << "candle," << (i < 2 ? "train" : "test") << ",normal," << name << ",\n";
  }
  Tensor mask(Shape{16, 16});
  mask[5] = 1;
  write_image(src / "candle/Images/Anomaly/a0.png", random_image(3, 16, 16, 20));
  write_image(src / "candle/Masks/Anomaly/a0.png", mask);
  csv << "candle,test,anomaly,candle/Images/Anomaly/a0.png,candle/Masks/Anomaly/a0.png\r\n";
  csv.close();

  EXPECT_EQ(convert_visa(src, src / "split.csv", out), 4u);
  EXPECT_TRUE(fs::exists(out / "candle" / "train" / "good" / "001.png"));
  EXPECT_TRUE(fs::exists(out / "candle" / "test" / "good" / "000.png"));
  EXPECT_EQ(read_mask(out / "candle" / "ground_truth" / "bad" / "000_mask.png"), mask);
  LoadOptions opt;
  opt.resolution = 0;
  opt.validation_fraction = 0.5;
  const auto d = load_dataset(out, "candle", opt);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_EQ(d.test[0].defect, "bad");

  std::ofstream bad(src / "bad.csv");
  bad << "object,split,label,image,mask\ncandle,train,anomaly,candle/Images/Anomaly/a0.png,x\n";
  bad.close();
  EXPECT_THROW(convert_visa(src, src / "bad.csv", fresh("visa_bad")), DatasetError);
}
