#pragma once

// Run-directory stages behind the CLI. Every stage reads the resolved
// config, loads its upstream artifacts from the run directory (failing with
// the exact missing path) and writes its outputs atomically.
//
//   config.json           resolved config snapshot
//   codec.ckpt            latent codec
//   denoiser.ckpt         trained denoiser
//   backbone.ckpt         feature extractor
//   backbone_adapted.ckpt domain-adapted feature extractor (finetune)
//   index.bin             DIC index + bins for backbone.ckpt
//   index_adapted.bin     DIC index + bins for backbone_adapted.ckpt
//   maps/, results.jsonl, report.jsonl, report.txt, ablation_*.txt, bench.*

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dicad/anomaly_map.hpp"
#include "dicad/codec.hpp"
#include "dicad/config.hpp"
#include "dicad/dataset.hpp"
#include "dicad/dic.hpp"
#include "dicad/domain_adapt.hpp"
#include "dicad/eval_metrics.hpp"
#include "dicad/feature_extractor.hpp"
#include "dicad/image_io.hpp"
#include "dicad/reconstruction.hpp"
#include "dicad/synthetic.hpp"
#include "dicad/training.hpp"

namespace dicad {

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& p, const std::string& hint)
      : std::runtime_error("missing artifact " + p.string() + " (run `" + hint + "` first)"), path(p) {}
  std::filesystem::path path;
};

using Log = std::function<void(const std::string&)>;

inline Log stderr_log() {
  return [](const std::string& m) { std::cerr << m << std::endl; };
}

struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path codec() const { return dir / "codec.ckpt"; }
  std::filesystem::path denoiser() const { return dir / "denoiser.ckpt"; }
  std::filesystem::path backbone() const { return dir / "backbone.ckpt"; }
  std::filesystem::path adapted() const { return dir / "backbone_adapted.ckpt"; }
  std::filesystem::path index(bool adapted = false) const { return dir / (adapted ? "index_adapted.bin" : "index.bin"); }
  std::filesystem::path maps() const { return dir / "maps"; }

  void require(const std::filesystem::path& p, const std::string& producer) const {
    if (!std::filesystem::exists(p)) throw MissingArtifact(p, producer);
  }
};

// Run directory: explicit path, else $DICAD_RUN_ROOT/<name>, else runs/<name>.
inline std::filesystem::path resolve_run_dir(const std::string& explicit_dir, const std::string& name = "default") {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* root = std::getenv("DICAD_RUN_ROOT"); root && *root) return std::filesystem::path(root) / name;
  return std::filesystem::path("runs") / name;
}

inline DatasetLayout load_data(const RunConfig& cfg) {
  const auto& d = cfg["data"];
  const std::size_t res = d.at("resolution");
  if (d.at("synthetic").get<bool>()) {
    DatasetLayout ds = generate_synthetic(cfg.synthetic());
    if (res && res != ds.train[0].image.dim(1)) {
      auto fit = [&](std::vector<Sample>& v) {
        for (auto& s : v) {
          s.image = detail::fit_image(s.image, res);
          s.mask = detail::fit_mask(s.mask, res);
        }
      };
      fit(ds.train);
      fit(ds.validation);
      fit(ds.test);
    }
    return ds;
  }
  const std::string root = d.at("root");
  if (root.empty()) throw ConfigError("data.root is empty and data.synthetic is false");
  return load_dataset(root, d.at("category"), {res, d.at("validation_fraction")});
}

// ---------------------------------------------------------------------------
// Training-side stages

inline std::unique_ptr<LatentCodec> codec_from_config(const RunConfig& cfg) {
  const auto& c = cfg["codec"];
  const std::string kind = c.at("kind");
  if (kind == "autoencoder")
    return std::make_unique<AutoencoderCodec>(
        AutoencoderConfig{c.at("factor"), c.at("latent_channels"), c.at("width"), cfg.seed()});
  return make_codec(kind, c.at("factor"));
}

inline TrainHistory stage_train_codec(const RunConfig& cfg, const DatasetLayout& data, const RunPaths& paths,
                                      const Log& log = stderr_log()) {
  auto codec = codec_from_config(cfg);
  TrainHistory hist;
  if (auto* ae = dynamic_cast<AutoencoderCodec*>(codec.get())) {
    const auto images = data.train_images();
    hist = train_codec(*ae, images, cfg.codec_train(), [&](int e, double l) {
      log("codec epoch " + std::to_string(e) + " loss " + std::to_string(l));
    });
  }
  codec->save(paths.codec());
  return hist;
}

// Loads codec.ckpt; parameter-free codecs are created (and saved) on demand.
inline std::unique_ptr<LatentCodec> ensure_codec(const RunConfig& cfg, const RunPaths& paths) {
  if (std::filesystem::exists(paths.codec())) return load_codec(paths.codec());
  if (cfg["codec"].at("kind") == "autoencoder") throw MissingArtifact(paths.codec(), "train-codec");
  auto codec = codec_from_config(cfg);
  codec->save(paths.codec());
  return codec;
}

inline TrainHistory stage_train(const RunConfig& cfg, const DatasetLayout& data, const RunPaths& paths,
                                const Log& log = stderr_log()) {
  const auto codec = ensure_codec(cfg, paths);
  const auto schedule = cfg.schedule();
  UNetDenoiser<float> model(cfg.unet(codec->latent_channels()));
  const auto images = data.train_images();
  std::vector<Tensor> latents;
  for (const auto& x : images) latents.push_back(codec->encode_image(x));
  const auto hist = train_denoiser<float>(model, images, *codec, schedule, cfg.train(), [&](int e, double l) {
    log("epoch " + std::to_string(e) + " loss " + std::to_string(l));
  });
  save_denoiser(paths.denoiser(), model, schedule, cfg.train(), *codec, latent_statistics(latents), hist);
  return hist;
}

inline FeatureExtractor stage_backbone(const RunConfig& cfg, const RunPaths& paths) {
  const std::string weights = cfg["backbone"].at("weights");
  FeatureExtractor phi = weights.empty() ? FeatureExtractor(cfg.backbone()) : load_backbone(weights);
  phi.save(paths.backbone(), {{"source", weights.empty() ? "random-init" : weights}});
  return phi;
}

inline FeatureExtractor ensure_backbone(const RunConfig& cfg, const RunPaths& paths) {
  if (std::filesystem::exists(paths.backbone())) return load_backbone(paths.backbone());
  return stage_backbone(cfg, paths);
}

struct DicState {
  FeatureIndex index;
  BinTable bins;
};

inline DicState build_dic(const FeatureExtractor& phi, std::span<const Tensor> train_images, const DicConfig& d) {
  DicState s;
  s.index = build_feature_index(train_images, phi, d.block, d.k);
  const auto means = training_mean_distances(s.index);
  s.bins = build_bins(means, d.num_bins, d.t_max, d.min_bin);
  return s;
}

inline DicState stage_build_index(const RunConfig& cfg, const DatasetLayout& data, const RunPaths& paths,
                                  bool adapted = false) {
  const FeatureExtractor phi = adapted ? (paths.require(paths.adapted(), "finetune"), load_backbone(paths.adapted()))
                                       : ensure_backbone(cfg, paths);
  const auto images = data.train_images();
  DicState s = build_dic(phi, images, cfg.dic());
  save_index(paths.index(adapted), s.index, s.bins);
  return s;
}

// ---------------------------------------------------------------------------
// Inference engine

struct ImageOutcome {
  std::string name, defect;
  int label = 0;
  Tensor mask;
  AnomalyResult result;
  Tensor x_hat;
  std::optional<DicDecision> dic;
};

struct Calibration {
  float latent_max = 1.0f, feature_max = 1.0f;
  nlohmann::json to_json() const { return {{"latent_max", latent_max}, {"feature_max", feature_max}}; }
};

// Runs fn(i) for i in [0, n) on `workers` threads; results must be written
// to per-index slots so output order never depends on scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lk(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

class Engine {
 public:
  Engine(const RunConfig& cfg, std::unique_ptr<LatentCodec> codec, DenoiserCheckpoint den, FeatureExtractor phi,
         DicState dic)
      : cfg_(cfg), codec_(std::move(codec)), den_(std::move(den)), phi_(std::move(phi)), dic_(std::move(dic)) {
    rcfg_ = cfg_.reconstruction();
    mcfg_ = cfg_.map();
    if (den_.codec != codec_->describe())
      throw std::runtime_error("denoiser was trained with codec " + den_.codec.dump() + ", run has " +
                               codec_->describe().dump());
    if (dic_.index.block != rcfg_.dic.block)
      throw std::runtime_error("index was built on block " + std::to_string(dic_.index.block) + ", config asks for " +
                               std::to_string(rcfg_.dic.block));
    if (dic_.bins.t_max != rcfg_.dic.t_max) throw std::runtime_error("index bins use a different T_max than the config");
  }

  // Loads everything from a run directory. The adapted extractor (and its
  // index, unless dic.rebuild_after_adapt is off) is used when present.
  static Engine load(const RunConfig& cfg, const RunPaths& paths, std::optional<bool> adapted = std::nullopt) {
    if (cfg["codec"].at("kind") == "autoencoder") paths.require(paths.codec(), "train-codec");
    paths.require(paths.denoiser(), "train");
    paths.require(paths.codec(), "train");
    paths.require(paths.backbone(), "init-backbone");
    const bool use_adapted = adapted.value_or(std::filesystem::exists(paths.adapted()));
    if (use_adapted) paths.require(paths.adapted(), "finetune");
    const bool rebuild = cfg["dic"].at("rebuild_after_adapt").get<bool>();
    const auto index_path = paths.index(use_adapted && rebuild);
    paths.require(index_path, use_adapted && rebuild ? "finetune" : "build-index");
    auto [index, bins] = load_index(index_path);
    return Engine(cfg, load_codec(paths.codec()), load_denoiser(paths.denoiser()),
                  load_backbone(use_adapted ? paths.adapted() : paths.backbone()), {std::move(index), std::move(bins)});
  }

  const RunConfig& config() const { return cfg_; }
  const FeatureExtractor& extractor() const { return phi_; }
  const DicState& dic() const { return dic_; }
  const LatentCodec& codec() const { return *codec_; }
  const Denoiser<float>& denoiser() const { return *den_.model; }
  const NoiseSchedule& schedule() const { return den_.schedule; }
  ReconstructionConfig& reconstruction_config() { return rcfg_; }
  AnomalyMapConfig& map_config() { return mcfg_; }

  // Swaps the feature extractor; rebuilds the DIC index from train_images
  // unless the config keeps the old one.
  void set_extractor(FeatureExtractor phi, std::span<const Tensor> train_images) {
    phi_ = std::move(phi);
    if (cfg_["dic"].at("rebuild_after_adapt").get<bool>()) dic_ = build_dic(phi_, train_images, rcfg_.dic);
  }

  ReconstructionModels models() const {
    return {den_.model.get(), codec_.get(), &phi_, &den_.schedule, &dic_.index, &dic_.bins};
  }

  ReconstructionResult reconstruct(const Tensor& x, std::uint64_t noise_seed, std::optional<int> static_t) const {
    ReconstructionConfig rc = rcfg_;
    rc.noise_seed = noise_seed;
    return static_t ? reconstruct_static(x, *static_t, models(), rc) : dicad::reconstruct(x, models(), rc);
  }

  // Raw (unnormalized) feature and latent maps of an image and its reconstruction.
  std::pair<Tensor, Tensor> raw_maps(const Tensor& x, const ReconstructionResult& r) const {
    return {feature_map(x, r.x_hat, phi_, mcfg_.blocks), latent_map(r.z0, r.z_hat, x.dim(1), x.dim(2))};
  }

  // Maxima of the raw maps over nominal calibration images.
  Calibration calibrate(std::span<const Tensor> nominal, std::optional<int> static_t = std::nullopt) const {
    if (nominal.empty()) throw std::invalid_argument("calibration needs nominal validation images");
    std::vector<std::pair<float, float>> mx(nominal.size());
    parallel_for(nominal.size(), workers(), [&](std::size_t i) {
      const auto r = reconstruct(nominal[i], cfg_.seed() + 7919 * (i + 1), static_t);
      const auto [f, l] = raw_maps(nominal[i], r);
      mx[i] = {max_value(l), max_value(f)};
    });
    Calibration c{0.0f, 0.0f};
    for (auto [l, f] : mx) {
      c.latent_max = std::max(c.latent_max, l);
      c.feature_max = std::max(c.feature_max, f);
    }
    c.latent_max = std::max(c.latent_max, 1e-12f);
    c.feature_max = std::max(c.feature_max, 1e-12f);
    return c;
  }

  ImageOutcome run_one(const Sample& s, std::size_t i, const Calibration& cal, std::optional<int> static_t) const {
    ImageOutcome o;
    o.name = s.name;
    o.defect = s.defect;
    o.label = s.label;
    o.mask = s.mask;
    const auto r = reconstruct(s.image, cfg_.seed() + 104729 * (i + 1), static_t);
    const auto [f, l] = raw_maps(s.image, r);
    AnomalyMapConfig mc = mcfg_;
    mc.latent_scale = cal.latent_max;
    mc.feature_scale = cal.feature_max;
    o.result = fuse(f, l, mc);
    o.result.t_hat = r.t_hat;
    o.x_hat = r.x_hat;
    o.dic = r.dic;
    return o;
  }

  std::vector<ImageOutcome> run(std::span<const Sample> samples, const Calibration& cal,
                                std::optional<int> static_t = std::nullopt) const {
    std::vector<ImageOutcome> out(samples.size());
    parallel_for(samples.size(), workers(), [&](std::size_t i) { out[i] = run_one(samples[i], i, cal, static_t); });
    return out;
  }

 private:
  int workers() const { return cfg_["run"].at("workers"); }

  RunConfig cfg_;
  std::unique_ptr<LatentCodec> codec_;
  DenoiserCheckpoint den_;
  FeatureExtractor phi_;
  DicState dic_;
  ReconstructionConfig rcfg_;
  AnomalyMapConfig mcfg_;
};

// Metrics over the outcomes whose defect is "good" or listed in `defects`
// (all defects when empty).
inline CategoryReport report_for(const std::string& name, std::span<const ImageOutcome> outcomes,
                                 double fpr_limit, const std::vector<std::string>& defects = {}) {
  std::vector<AnomalyResult> res;
  std::vector<int> labels;
  std::vector<Tensor> masks;
  for (const auto& o : outcomes) {
    const bool keep = !o.label || defects.empty() || std::find(defects.begin(), defects.end(), o.defect) != defects.end();
    if (!keep) continue;
    res.push_back(o.result);
    labels.push_back(o.label);
    masks.push_back(o.mask);
  }
  return evaluate_category(name, res, labels, masks, fpr_limit);
}

inline std::string stem_of(const std::string& name) {
  std::filesystem::path p(name);
  return (p.parent_path() / p.stem()).generic_string();
}

// Heatmap (per-image min-max, 8-bit) plus raw float map for every outcome.
inline void write_maps(const std::filesystem::path& dir, std::span<const ImageOutcome> outcomes) {
  for (const auto& o : outcomes) {
    const std::string stem = stem_of(o.name);
    Tensor viz = o.result.a_map;
    const float lo = min_value(viz), hi = max_value(viz);
    for (auto& v : viz.vec()) v = hi > lo ? (v - lo) / (hi - lo) : 0.0f;
    write_image(dir / (stem + ".png"), viz);
    write_float_map(dir / (stem + ".map"), o.result.a_map);
  }
}

inline std::string results_jsonl(std::span<const ImageOutcome> outcomes) {
  std::string out;
  for (const auto& o : outcomes) {
    nlohmann::json j{{"name", o.name}, {"defect", o.defect}, {"label", o.label}, {"t_hat", o.result.t_hat},
                     {"score", o.result.image_score}};
    if (o.dic) {
      j["mean_distance"] = o.dic->mean_distance;
      j["bin"] = o.dic->bin;
    }
    if (!o.result.warnings.empty()) j["warnings"] = o.result.warnings;
    out += j.dump() + "\n";
  }
  return out;
}

struct Evaluation {
  Calibration calibration;
  std::vector<ImageOutcome> outcomes;
  EvalReport report;
};

inline Evaluation evaluate_engine(const Engine& engine, const DatasetLayout& data,
                                  std::optional<int> static_t = std::nullopt) {
  Evaluation ev;
  const auto val = data.validation_images();
  ev.calibration = engine.calibrate(val, static_t);
  ev.outcomes = engine.run(data.test, ev.calibration, static_t);
  ev.report.categories.push_back(
      report_for(data.category, ev.outcomes, engine.config()["eval"].at("pro_fpr_limit")));
  return ev;
}

inline Evaluation stage_evaluate(const RunConfig& cfg, const DatasetLayout& data, const RunPaths& paths,
                                 bool write_artifacts = true) {
  const Engine engine = Engine::load(cfg, paths);
  Evaluation ev = evaluate_engine(engine, data);
  if (write_artifacts) {
    write_maps(paths.maps(), ev.outcomes);
    io::write_text_atomic(paths.dir / "results.jsonl", results_jsonl(ev.outcomes));
    io::write_text_atomic(paths.dir / "calibration.json", ev.calibration.to_json().dump(2) + "\n");
    io::write_text_atomic(paths.dir / "report.jsonl", ev.report.to_jsonl());
    io::write_text_atomic(paths.dir / "report.txt", ev.report.to_table());
  }
  return ev;
}

// Domain adaptation of the run's extractor on (train image, frozen DIC
// reconstruction) pairs. Writes backbone_adapted.ckpt and, when configured,
// index_adapted.bin.
inline DomainAdaptResult stage_finetune(const RunConfig& cfg, const DatasetLayout& data, const RunPaths& paths,
                                        const Log& log = stderr_log()) {
  const Engine engine = Engine::load(cfg, paths, false);
  const auto images = data.train_images();
  std::vector<Tensor> recons(images.size());
  parallel_for(images.size(), cfg["run"].at("workers"), [&](std::size_t i) {
    recons[i] = engine.reconstruct(images[i], cfg.seed() + 15485863 * (i + 1), std::nullopt).x_hat;
  });
  auto out = finetune_extractor(engine.extractor(), images, {}, cfg.adapt(), std::move(recons));
  for (std::size_t e = 0; e < out.epoch_loss.size(); ++e)
    log("adapt epoch " + std::to_string(e + 1) + " loss " + std::to_string(out.epoch_loss[e]));
  out.phi.save(paths.adapted(), {{"source", "finetune"}, {"gamma", cfg.adapt().gamma}});
  if (cfg["dic"].at("rebuild_after_adapt").get<bool>()) {
    const DicState s = build_dic(out.phi, images, cfg.dic());
    save_index(paths.index(true), s.index, s.bins);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
  std::string label;
  CategoryReport all, large;
};

inline std::string ablation_table(const std::string& title, std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << title << "\n" << std::fixed << std::setprecision(1);
  os << std::left << std::setw(14) << "setting" << std::setw(16) << "(I-AUROC,PRO)" << std::setw(10) << "P-AUROC"
     << "PRO(missing)\n";
  for (const auto& r : rows) {
    std::ostringstream t;
    t << std::fixed << std::setprecision(1) << '(' << 100 * r.all.i_auroc << ',' << 100 * r.all.pro << ')';
    os << std::left << std::setw(14) << r.label << std::setw(16) << t.str() << std::setw(10) << 100 * r.all.p_auroc
       << 100 * r.large.pro << "\n";
  }
  return os.str();
}

inline std::string ablation_jsonl(std::span<const AblationRow> rows) {
  std::string out;
  for (const auto& r : rows)
    out += nlohmann::json{{"setting", r.label}, {"all", r.all.to_json()}, {"large", r.large.to_json()}}.dump() + "\n";
  return out;
}

inline const std::vector<std::string>& large_defects() {
  static const std::vector<std::string> d{"missing"};
  return d;
}

inline AblationRow ablation_row(const std::string& label, const Engine& engine, const DatasetLayout& data,
                                std::optional<int> static_t) {
  const auto ev = evaluate_engine(engine, data, static_t);
  const double lim = engine.config()["eval"].at("pro_fpr_limit");
  AblationRow row{label, ev.report.categories[0], {}};
  bool has_large = false;
  for (const auto& o : ev.outcomes) has_large = has_large || (o.label && o.defect == large_defects()[0]);
  row.large = has_large ? report_for("large", ev.outcomes, lim, large_defects()) : CategoryReport{"large"};
  return row;
}

// Static steps at 25/50/75/100% of T_max followed by the dynamic row.
inline std::vector<AblationRow> ablate_static_vs_dic(const Engine& engine, const DatasetLayout& data,
                                                     const Log& log = stderr_log()) {
  std::vector<AblationRow> rows;
  const int t_max = engine.dic().bins.t_max;
  for (int q = 1; q <= 4; ++q) {
    const int t = std::max(1, q * t_max / 4);
    rows.push_back(ablation_row(std::to_string(25 * q) + "%(" + std::to_string(t) + ")", engine, data, t));
    log("static " + std::to_string(t) + " done");
  }
  rows.push_back(ablation_row("DIC", engine, data, std::nullopt));
  return rows;
}

inline std::vector<AblationRow> ablate_omega(Engine& engine, const DatasetLayout& data, std::span<const double> omegas,
                                             const Log& log = stderr_log()) {
  std::vector<AblationRow> rows;
  const float keep = engine.reconstruction_config().omega;
  for (double w : omegas) {
    if (w < 0 || w > 1) throw std::invalid_argument("omega values must lie in [0,1]");
    engine.reconstruction_config().omega = float(w);
    std::ostringstream l;
    l << "omega=" << w;
    rows.push_back(ablation_row(l.str(), engine, data, std::nullopt));
    log(l.str() + " done");
  }
  engine.reconstruction_config().omega = keep;
  return rows;
}

// Downscaling (omega 0 vs 1) crossed with domain adaptation (off vs on).
inline std::vector<AblationRow> ablate_ds_da(Engine& engine, const DatasetLayout& data, const FeatureExtractor& base,
                                             const FeatureExtractor& adapted, const Log& log = stderr_log()) {
  std::vector<AblationRow> rows;
  const auto train = data.train_images();
  const float keep = engine.reconstruction_config().omega;
  for (int da = 0; da <= 1; ++da) {
    engine.set_extractor(da ? adapted : base, train);
    for (int ds = 0; ds <= 1; ++ds) {
      engine.reconstruction_config().omega = ds ? 0.0f : 1.0f;
      const std::string label = std::string(ds ? "DS" : "-") + "/" + (da ? "DA" : "-");
      rows.push_back(ablation_row(label, engine, data, std::nullopt));
      log(label + " done");
    }
  }
  engine.reconstruction_config().omega = keep;
  return rows;
}

// ---------------------------------------------------------------------------
// Timing

struct BenchReport {
  std::size_t batch = 0;
  double total_seconds = 0, seconds_per_image = 0, fps = 0;
  std::vector<int> t_hat;
  std::vector<float> scores;

  nlohmann::json to_json() const {
    return {{"batch", batch}, {"total_seconds", total_seconds}, {"seconds_per_image", seconds_per_image},
            {"fps", fps},     {"t_hat", t_hat},                 {"scores", scores}};
  }
  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "FPS" << "Inference Time (s)\n" << std::fixed << std::setprecision(3)
       << std::setw(10) << fps << seconds_per_image << "\n";
    return os.str();
  }
};

// End-to-end per-image latency (reconstruction and scoring) over a fixed
// batch of test images, run sequentially.
inline BenchReport bench(const Engine& engine, const DatasetLayout& data, const Calibration& cal, std::size_t batch = 30) {
  if (data.test.empty()) throw std::invalid_argument("bench needs test images");
  BenchReport r;
  r.batch = batch;
  engine.run_one(data.test[0], 0, cal, std::nullopt);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < batch; ++i) {
    const auto o = engine.run_one(data.test[i % data.test.size()], i, cal, std::nullopt);
    r.t_hat.push_back(o.result.t_hat);
    r.scores.push_back(o.result.image_score);
  }
  r.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.seconds_per_image = r.total_seconds / double(batch);
  r.fps = r.seconds_per_image > 0 ? 1.0 / r.seconds_per_image : 0.0;
  return r;
}

}  // namespace dicad
