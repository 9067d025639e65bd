#pragma once

// Run configuration: one nested JSON document holding every knob. Defaults
// follow the reference setup; `toy_preset` is the desk-scale synthetic run.
// Unknown keys are rejected so a typo never silently keeps a default.

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dicad/anomaly_map.hpp"
#include "dicad/checkpoint.hpp"
#include "dicad/denoiser.hpp"
#include "dicad/diffusion_math.hpp"
#include "dicad/dic.hpp"
#include "dicad/domain_adapt.hpp"
#include "dicad/feature_extractor.hpp"
#include "dicad/reconstruction.hpp"
#include "dicad/synthetic.hpp"
#include "dicad/training.hpp"

namespace dicad {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline nlohmann::json default_config() {
  using nlohmann::json;
  return json{
      {"seed", 0},
      {"data",
       {{"root", ""}, {"category", "synthetic"}, {"resolution", 256}, {"validation_fraction", 0.1}, {"synthetic", false}}},
      {"synthetic", SyntheticSpec{}.to_json()},
      {"schedule", {{"beta_start", 0.0015}, {"beta_end", 0.0195}, {"steps", 1000}}},
      {"codec",
       {{"kind", "autoencoder"},
        {"factor", 8},
        {"latent_channels", 4},
        {"width", 32},
        {"epochs", 100},
        {"learning_rate", 1e-3},
        {"batch_size", 8}}},
      {"unet", {{"base_channels", 64}, {"levels", 3}, {"time_dim", 64}}},
      {"train", {{"epochs", 300}, {"learning_rate", 1e-4}, {"weight_decay", 0.01}, {"batch_size", 8}, {"clip_norm", 1.0}, {"ema_decay", 0.0}}},
      {"backbone", {{"widths", {16, 32, 64, 64}}, {"weights", ""}}},
      {"dic",
       {{"k", 20},
        {"block", 2},
        {"num_bins", 10},
        {"t_max", 80},
        {"min_bin", 2},
        {"round_multiple", 10},
        {"rounding_order", "floor_then_round"},
        {"rebuild_after_adapt", true}}},
      {"sampler", {{"eta", 8.0}, {"sigma", 0.0}, {"omega", 0.0}, {"steps", 10}}},
      {"map",
       {{"lambda", 0.85}, {"sigma", 4.0}, {"blocks", {2, 3}}, {"score_from_smoothed", true}, {"normalization", "calibration"}}},
      {"adapt", {{"gamma", 1}, {"blocks", {2, 3}}, {"learning_rate", 1e-4}, {"weight_decay", 0.01}, {"batch_size", 8}}},
      {"eval", {{"pro_fpr_limit", 0.3}, {"threshold_fpr", 0.01}}},
      {"run", {{"workers", 1}, {"trace", false}}},
  };
}

// Desk-scale synthetic run: 64x64 images, 16x16 latents, 50 epochs.
inline nlohmann::json toy_preset() {
  auto j = default_config();
  j["data"]["synthetic"] = true;
  j["data"]["resolution"] = 64;
  j["codec"]["kind"] = "unshuffle";
  j["codec"]["factor"] = 4;
  j["unet"] = {{"base_channels", 96}, {"levels", 2}, {"time_dim", 32}};
  j["train"]["epochs"] = 50;
  j["train"]["learning_rate"] = 1e-3;
  j["train"]["batch_size"] = 4;
  j["train"]["ema_decay"] = 0.995;
  // sigma is in pixels; scale with the resolution
  j["map"]["sigma"] = 1.0;
  return j;
}

namespace detail {

inline void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& dst = base[it.key()];
    if (dst.is_object()) {
      if (!it->is_object()) throw ConfigError("config key '" + key + "' must be a section");
      merge_checked(dst, *it, key);
    } else {
      const bool num_ok = dst.is_number() && it->is_number();
      if (!num_ok && dst.type() != it->type() && !(dst.is_array() && it->is_array()))
        throw ConfigError("config key '" + key + "' has type " + it->type_name() + ", expected " + dst.type_name());
      dst = *it;
    }
  }
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() : doc_(default_config()) {}
  explicit RunConfig(nlohmann::json doc) : doc_(default_config()) { merge(doc); }

  static RunConfig preset(const std::string& name) {
    if (name == "default") return RunConfig{};
    if (name == "toy") return RunConfig(toy_preset());
    throw ConfigError("unknown preset '" + name + "'");
  }

  static RunConfig load(const std::filesystem::path& path, const std::string& base_preset = "default") {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    RunConfig c = preset(base_preset);
    try {
      c.merge(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return c;
  }

  void merge(const nlohmann::json& patch) { detail::merge_checked(doc_, patch, ""); }

  // "a.b.c=value"; value parsed as JSON, bare words taken as strings.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    nlohmann::json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
    merge(patch);
  }

  const nlohmann::json& json() const noexcept { return doc_; }
  const nlohmann::json& operator[](const char* k) const { return doc_.at(k); }
  std::uint64_t seed() const { return doc_.at("seed"); }

  std::string snapshot() const { return doc_.dump(2) + "\n"; }
  void save(const std::filesystem::path& path) const { io::write_text_atomic(path, snapshot()); }

  // Cross-field checks, run before any compute.
  void validate() const {
    const auto& s = doc_.at("schedule");
    const int T = s.at("steps");
    if (T < 1) throw ConfigError("schedule.steps must be >= 1");
    const double b0 = s.at("beta_start"), b1 = s.at("beta_end");
    if (!(b0 > 0 && b0 <= b1 && b1 < 1)) throw ConfigError("schedule endpoints must satisfy 0 < beta_start <= beta_end < 1");
    const auto& d = doc_.at("dic");
    const int t_max = d.at("t_max"), nb = d.at("num_bins"), mb = d.at("min_bin"), k = d.at("k");
    if (t_max < 1 || t_max > T) throw ConfigError("dic.t_max must lie in [1, schedule.steps]");
    if (nb < 1) throw ConfigError("dic.num_bins must be >= 1");
    if (mb < 1 || mb > nb) throw ConfigError("dic.min_bin must lie in [1, dic.num_bins]");
    if (k < 1) throw ConfigError("dic.k must be >= 1");
    if (int(d.at("round_multiple")) < 1) throw ConfigError("dic.round_multiple must be >= 1");
    const std::string order = d.at("rounding_order");
    if (order != "floor_then_round" && order != "round_then_floor")
      throw ConfigError("dic.rounding_order must be floor_then_round or round_then_floor");
    const int J = int(doc_.at("backbone").at("widths").size());
    auto check_block = [&](int b, const char* what) {
      if (b < 1 || b > J)
        throw ConfigError(std::string(what) + " block " + std::to_string(b) + " outside extractor range [1, " +
                          std::to_string(J) + "]");
    };
    check_block(d.at("block"), "dic");
    for (int b : doc_.at("map").at("blocks")) check_block(b, "map");
    for (int b : doc_.at("adapt").at("blocks")) check_block(b, "adapt");
    if (doc_.at("map").at("blocks").empty()) throw ConfigError("map.blocks must be non-empty");
    const auto& sm = doc_.at("sampler");
    if (int(sm.at("steps")) < 1) throw ConfigError("sampler.steps must be >= 1");
    if (double(sm.at("eta")) < 0 || double(sm.at("sigma")) < 0) throw ConfigError("sampler.eta and sampler.sigma must be >= 0");
    const double om = sm.at("omega");
    if (om < 0 || om > 1) throw ConfigError("sampler.omega must lie in [0,1]");
    const double lam = doc_.at("map").at("lambda");
    if (lam < 0 || lam > 1) throw ConfigError("map.lambda must lie in [0,1]");
    if (double(doc_.at("map").at("sigma")) < 0) throw ConfigError("map.sigma must be >= 0");
    const std::string norm = doc_.at("map").at("normalization");
    if (norm != "min_max" && norm != "calibration") throw ConfigError("map.normalization must be min_max or calibration");
    if (int(doc_.at("adapt").at("gamma")) < 0) throw ConfigError("adapt.gamma must be >= 0");
    const double lim = doc_.at("eval").at("pro_fpr_limit");
    if (!(lim > 0 && lim <= 1)) throw ConfigError("eval.pro_fpr_limit must lie in (0,1]");
    const auto& c = doc_.at("codec");
    const std::string kind = c.at("kind");
    if (kind != "identity" && kind != "pool" && kind != "unshuffle" && kind != "autoencoder")
      throw ConfigError("codec.kind must be identity, pool, unshuffle or autoencoder");
    const int factor = c.at("factor"), res = doc_.at("data").at("resolution");
    if (kind != "identity" && (factor < 1 || (res > 0 && res % factor)))
      throw ConfigError("data.resolution must be divisible by codec.factor");
    if (int(doc_.at("run").at("workers")) < 1) throw ConfigError("run.workers must be >= 1");
    for (const char* sec : {"train", "adapt"}) {
      const auto& t = doc_.at(sec);
      if (!(double(t.at("learning_rate")) > 0) || int(t.at("batch_size")) < 1)
        throw ConfigError(std::string(sec) + ": learning_rate and batch_size must be positive");
    }
    if (int(doc_.at("train").at("epochs")) < 1) throw ConfigError("train.epochs must be >= 1");
    if (const double d = doc_.at("train").at("ema_decay"); !(d >= 0 && d < 1))
      throw ConfigError("train.ema_decay must lie in [0,1)");
  }

  // Typed views ------------------------------------------------------------

  NoiseSchedule schedule() const {
    const auto& s = doc_.at("schedule");
    return NoiseSchedule::linear(s.at("beta_start"), s.at("beta_end"), s.at("steps"));
  }

  TrainConfig train() const {
    const auto& t = doc_.at("train");
    TrainConfig c;
    c.epochs = t.at("epochs");
    c.learning_rate = t.at("learning_rate");
    c.weight_decay = t.at("weight_decay");
    c.batch_size = t.at("batch_size");
    c.clip_norm = t.at("clip_norm");
    c.ema_decay = t.at("ema_decay");
    c.seed = seed();
    return c;
  }

  TrainConfig codec_train() const {
    const auto& t = doc_.at("codec");
    TrainConfig c;
    c.epochs = t.at("epochs");
    c.learning_rate = t.at("learning_rate");
    c.batch_size = t.at("batch_size");
    c.weight_decay = 0.0;
    c.seed = seed();
    return c;
  }

  UNetConfig unet(std::size_t latent_channels) const {
    const auto& u = doc_.at("unet");
    UNetConfig c;
    c.in_channels = latent_channels;
    c.base_channels = u.at("base_channels");
    c.levels = u.at("levels");
    c.time_dim = u.at("time_dim");
    c.seed = seed();
    return c;
  }

  BackboneConfig backbone() const {
    BackboneConfig c;
    c.widths = doc_.at("backbone").at("widths").get<std::vector<std::size_t>>();
    c.seed = seed();
    return c;
  }

  DicConfig dic() const {
    const auto& d = doc_.at("dic");
    DicConfig c;
    c.k = d.at("k");
    c.block = d.at("block");
    c.num_bins = d.at("num_bins");
    c.t_max = d.at("t_max");
    c.min_bin = d.at("min_bin");
    c.round_multiple = d.at("round_multiple");
    c.order = d.at("rounding_order") == "round_then_floor" ? RoundingOrder::round_then_floor
                                                          : RoundingOrder::floor_then_round;
    return c;
  }

  ReconstructionConfig reconstruction() const {
    const auto& s = doc_.at("sampler");
    ReconstructionConfig c;
    c.guidance.eta = s.at("eta");
    c.guidance.sigma = s.at("sigma");
    c.omega = s.at("omega");
    c.sampling_steps = s.at("steps");
    c.keep_trace = doc_.at("run").at("trace");
    c.noise_seed = seed();
    c.dic = dic();
    return c;
  }

  AnomalyMapConfig map() const {
    const auto& m = doc_.at("map");
    AnomalyMapConfig c;
    c.lambda = m.at("lambda");
    c.smoothing_sigma = m.at("sigma");
    c.blocks = m.at("blocks").get<std::vector<int>>();
    c.score_from_smoothed = m.at("score_from_smoothed");
    c.normalization = m.at("normalization") == "min_max" ? MapNormalization::min_max : MapNormalization::calibration;
    return c;
  }

  DomainAdaptConfig adapt() const {
    const auto& a = doc_.at("adapt");
    DomainAdaptConfig c;
    c.gamma = a.at("gamma");
    c.blocks = a.at("blocks").get<std::vector<int>>();
    c.learning_rate = a.at("learning_rate");
    c.weight_decay = a.at("weight_decay");
    c.batch_size = a.at("batch_size");
    c.seed = seed();
    return c;
  }

  SyntheticSpec synthetic() const {
    const auto& s = doc_.at("synthetic");
    SyntheticSpec p;
    p.size = s.at("size");
    p.seed = s.at("seed");
    p.category = s.at("category");
    p.period = s.at("period");
    p.radius = s.at("radius");
    p.noise = s.at("noise");
    p.n_train = s.at("n_train");
    p.n_validation = s.at("n_validation");
    p.n_test_good = s.at("n_test_good");
    p.n_per_kind = s.at("n_per_kind");
    auto ar = [&](const char* k) { return AreaRange{s.at(k).at(0), s.at(k).at(1)}; };
    p.scratch = ar("scratch");
    p.blob = ar("blob");
    p.missing = ar("missing");
    return p;
  }

 private:
  nlohmann::json doc_;
};

}  // namespace dicad
