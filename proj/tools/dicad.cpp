// dicad: command-line front end for training, indexing, inference,
// evaluation, ablations and timing of the anomaly-detection pipeline.
//
// Every command resolves a config (run-dir snapshot, else preset, then
// --config file, then --set overrides), validates it, writes the snapshot
// to the run directory and runs. Failures print a single line
//   error:<kind>: <message>
// on stderr and exit nonzero.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dicad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dicad;

namespace {

struct Common {
  std::string config_file;
  std::string preset;
  std::vector<std::string> overrides;
  std::string run_dir;
  std::string run_name = "default";
  int workers = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "JSON config file (merged over the preset)");
  cmd->add_option("--preset", c.preset, "base preset: default | toy");
  cmd->add_option("--set", c.overrides, "override, e.g. --set sampler.eta=0")->take_all();
  cmd->add_option("--run-dir", c.run_dir, "run directory (default $DICAD_RUN_ROOT/<name> or runs/<name>)");
  cmd->add_option("--run-name", c.run_name, "run name under the run root");
  cmd->add_option("-j,--workers", c.workers, "worker threads for per-image stages");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

struct Context {
  RunConfig cfg;
  RunPaths paths;
  Log log;
};

Context resolve(const Common& c, bool write_snapshot = true) {
  Context ctx;
  ctx.paths.dir = resolve_run_dir(c.run_dir, c.run_name);
  const bool have_snapshot = fs::exists(ctx.paths.config());
  if (!c.preset.empty() || !have_snapshot)
    ctx.cfg = RunConfig::preset(c.preset.empty() ? "default" : c.preset);
  else
    ctx.cfg = RunConfig::load(ctx.paths.config());
  if (!c.config_file.empty()) {
    std::ifstream is(c.config_file);
    if (!is) throw ConfigError("cannot open config file " + c.config_file);
    try {
      ctx.cfg.merge(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(c.config_file + ": " + e.what());
    }
  }
  for (const auto& o : c.overrides) ctx.cfg.set(o);
  if (c.workers > 0) ctx.cfg.set("run.workers=" + std::to_string(c.workers));
  ctx.cfg.validate();
  if (write_snapshot) {
    fs::create_directories(ctx.paths.dir);
    ctx.cfg.save(ctx.paths.config());
  }
  ctx.log = c.quiet ? Log([](const std::string&) {}) : stderr_log();
  return ctx;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("cannot parse '" + item + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

void write_ablation(const RunPaths& paths, const std::string& mode, const std::string& title,
                    const std::vector<AblationRow>& rows) {
  const std::string table = ablation_table(title, rows);
  io::write_text_atomic(paths.dir / ("ablation_" + mode + ".txt"), table);
  io::write_text_atomic(paths.dir / ("ablation_" + mode + ".jsonl"), ablation_jsonl(rows));
  std::cout << table;
}

int fail(const std::string& kind, const std::string& msg) {
  std::string line = msg;
  for (auto& ch : line)
    if (ch == '\n') ch = ' ';
  std::cerr << "error:" << kind << ": " << line << std::endl;
  return kind == "config" ? 2 : kind == "missing-artifact" ? 3 : kind == "data" ? 4 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic implicit conditioning anomaly detection"};
  app.require_subcommand(1);

  Common common;
  std::string out_dir, visa_root, split_csv, mode = "static-vs-dic", values = "0,0.5,1";
  std::vector<std::string> image_paths;
  bool adapted_index = false;
  std::size_t batch = 30;

  auto* gen = app.add_subcommand("gen-synthetic", "write the synthetic dataset as an MVTec-style tree");
  add_common(gen, common);
  gen->add_option("-o,--out", out_dir, "dataset root")->required();

  auto* visa = app.add_subcommand("convert-visa", "convert a VisA split CSV into an MVTec-style tree");
  visa->add_option("--visa-root", visa_root, "VisA root directory")->required();
  visa->add_option("--split-csv", split_csv, "split CSV (object,split,label,image,mask)")->required();
  visa->add_option("-o,--out", out_dir, "output root")->required();

  auto* tcodec = app.add_subcommand("train-codec", "train (or instantiate) the latent codec");
  add_common(tcodec, common);
  auto* train = app.add_subcommand("train", "train the latent denoiser");
  add_common(train, common);
  auto* initbb = app.add_subcommand("init-backbone", "write the feature extractor checkpoint");
  add_common(initbb, common);
  auto* index = app.add_subcommand("build-index", "build the DIC feature index and bins");
  add_common(index, common);
  index->add_flag("--adapted", adapted_index, "index the domain-adapted extractor");
  auto* ft = app.add_subcommand("finetune", "domain-adapt the feature extractor");
  add_common(ft, common);
  auto* infer = app.add_subcommand("infer", "anomaly maps for images (default: the test split)");
  add_common(infer, common);
  infer->add_option("images", image_paths, "image files");
  auto* eval = app.add_subcommand("evaluate", "metrics on the test split");
  add_common(eval, common);
  auto* abl = app.add_subcommand("ablate", "ablation tables");
  add_common(abl, common);
  abl->add_option("--mode", mode, "static-vs-dic | omega | ds-da")
      ->check(CLI::IsMember({"static-vs-dic", "omega", "ds-da"}));
  abl->add_option("--values", values, "comma-separated omega values");
  auto* bn = app.add_subcommand("bench", "per-image latency and FPS");
  add_common(bn, common);
  bn->add_option("--batch", batch, "number of images timed")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*visa) {
      const auto n = convert_visa(visa_root, split_csv, out_dir);
      std::cout << "converted " << n << " images into " << out_dir << "\n";
      return 0;
    }
    if (*gen) {
      auto ctx = resolve(common, false);
      const auto spec = ctx.cfg.synthetic();
      const auto ds = generate_synthetic(spec);
      write_dataset(ds, out_dir);
      io::write_text_atomic(fs::path(out_dir) / spec.category / "spec.json", spec.to_json().dump(2) + "\n");
      std::cout << "wrote " << ds.train.size() << " train, " << ds.validation.size() << " validation, "
                << ds.test.size() << " test images to " << (fs::path(out_dir) / spec.category).string() << "\n";
      return 0;
    }

    auto ctx = resolve(common);
    const auto& cfg = ctx.cfg;
    const auto& paths = ctx.paths;

    if (*tcodec) {
      const auto data = load_data(cfg);
      const auto h = stage_train_codec(cfg, data, paths, ctx.log);
      std::cout << "codec written to " << paths.codec().string();
      if (!h.epoch_loss.empty()) std::cout << " (final loss " << h.epoch_loss.back() << ")";
      std::cout << "\n";
    } else if (*train) {
      const auto data = load_data(cfg);
      const auto h = stage_train(cfg, data, paths, ctx.log);
      std::cout << "denoiser written to " << paths.denoiser().string() << " (loss " << h.epoch_loss.front() << " -> "
                << h.epoch_loss.back() << ")\n";
    } else if (*initbb) {
      const auto phi = stage_backbone(cfg, paths);
      std::cout << "backbone written to " << paths.backbone().string() << " (" << phi.num_blocks() << " blocks)\n";
    } else if (*index) {
      const auto data = load_data(cfg);
      const auto s = stage_build_index(cfg, data, paths, adapted_index);
      std::cout << "index written to " << paths.index(adapted_index).string() << " (N=" << s.index.size()
                << ", dim=" << s.index.dim << ", edges " << s.bins.edges.front() << ".." << s.bins.edges.back()
                << ")\n";
    } else if (*ft) {
      const auto data = load_data(cfg);
      const auto r = stage_finetune(cfg, data, paths, ctx.log);
      std::cout << "adapted backbone written to " << paths.adapted().string() << "\n";
      for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
        std::cout << "epoch " << e + 1 << " loss " << r.epoch_loss[e] << "\n";
    } else if (*infer) {
      const Engine engine = Engine::load(cfg, paths);
      Calibration cal;
      const auto cal_path = paths.dir / "calibration.json";
      if (fs::exists(cal_path)) {
        std::ifstream is(cal_path);
        const auto j = nlohmann::json::parse(is);
        cal.latent_max = j.at("latent_max");
        cal.feature_max = j.at("feature_max");
      }
      std::vector<Sample> samples;
      if (image_paths.empty()) {
        const auto data = load_data(cfg);
        if (!fs::exists(cal_path)) cal = engine.calibrate(data.validation_images());
        samples = data.test;
      } else {
        if (!fs::exists(cal_path)) cal = engine.calibrate(load_data(cfg).validation_images());
        const std::size_t res = cfg["data"].at("resolution");
        for (const auto& p : image_paths) {
          Sample s;
          s.name = fs::path(p).filename().string();
          s.image = detail::fit_image(read_image(p), res);
          s.mask = Tensor(Shape{s.image.dim(1), s.image.dim(2)});
          samples.push_back(std::move(s));
        }
      }
      const auto outcomes = engine.run(samples, cal);
      write_maps(paths.maps(), outcomes);
      const std::string lines = results_jsonl(outcomes);
      io::write_text_atomic(paths.dir / "results.jsonl", lines);
      std::cout << lines;
    } else if (*eval) {
      const auto data = load_data(cfg);
      const auto ev = stage_evaluate(cfg, data, paths);
      std::cout << ev.report.to_table();
    } else if (*abl) {
      const auto data = load_data(cfg);
      if (mode == "static-vs-dic") {
        const Engine engine = Engine::load(cfg, paths);
        write_ablation(paths, "static-vs-dic", "static vs dynamic conditioning",
                       ablate_static_vs_dic(engine, data, ctx.log));
      } else if (mode == "omega") {
        Engine engine = Engine::load(cfg, paths);
        const auto ws = parse_list(values);
        write_ablation(paths, "omega", "noise fraction omega", ablate_omega(engine, data, ws, ctx.log));
      } else {
        paths.require(paths.adapted(), "finetune");
        Engine engine = Engine::load(cfg, paths, false);
        const auto base = load_backbone(paths.backbone());
        const auto adapted = load_backbone(paths.adapted());
        write_ablation(paths, "ds-da", "downscaling (DS) and domain adaptation (DA)",
                       ablate_ds_da(engine, data, base, adapted, ctx.log));
      }
    } else if (*bn) {
      const auto data = load_data(cfg);
      const Engine engine = Engine::load(cfg, paths);
      const auto cal = engine.calibrate(data.validation_images());
      const auto r = bench(engine, data, cal, batch);
      io::write_text_atomic(paths.dir / "bench.json", r.to_json().dump(2) + "\n");
      io::write_text_atomic(paths.dir / "bench.txt", r.to_table());
      std::cout << r.to_table();
    }
    return 0;
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const MissingArtifact& e) {
    return fail("missing-artifact", e.what());
  } catch (const DatasetError& e) {
    return fail("data", e.what());
  } catch (const ImageError& e) {
    return fail("data", e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const TrainingError& e) {
    return fail("training", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("config", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
}
