// unit-atlas: datagen, train, and the capture -> atlas -> ablate/probe ->
// report pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "unit_atlas/dataset.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/model_io.hpp"
#include "unit_atlas/parallel.hpp"
#include "unit_atlas/pipeline.hpp"
#include "unit_atlas/run_config.hpp"
#include "unit_atlas/trainer.hpp"

using namespace uatlas;
using nlohmann::json;

namespace {

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto x = text.find_first_of("xX", pos);
    const std::string part = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      shape.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ValidationError("bad shape '" + text + "' (expected CxHxW)");
    }
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  if (shape.size() != 3) throw ValidationError("bad shape '" + text + "' (expected CxHxW)");
  return shape;
}

// Flag overrides layered on top of an optional config file.
struct PipelineFlags {
  std::string config;
  std::optional<std::string> model, dataset, out, grid, magnitude_mode;
  std::vector<std::string> targets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, subsample, probe_iters;
  std::optional<double> probe_lr, probe_l2;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run config");
    app->add_option("--model", model, "Model directory");
    app->add_option("--dataset", dataset, "Dataset directory");
    app->add_option("--out", out, "Output directory");
    app->add_option("--target-class", targets, "Target class name or index (repeatable)");
    app->add_option("--grid", grid, "Grid dims SxM");
    app->add_option("--seed", seed, "Seed for comparison subsampling and probe split");
    app->add_option("--workers", workers, "Worker threads (falls back to UNIT_ATLAS_WORKERS)");
    app->add_option("--magnitude-mode", magnitude_mode, "rotated | global_mean");
    app->add_option("--comparison-subsample", subsample, "Number of comparison classes (0 = all)");
    app->add_option("--probe-lr", probe_lr, "Probe learning rate");
    app->add_option("--probe-iters", probe_iters, "Probe iterations");
    app->add_option("--probe-l2", probe_l2, "Probe L2 coefficient");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : RunConfig::from_file(config);
    if (model) c.model = *model;
    if (dataset) c.dataset = *dataset;
    if (out) c.out = *out;
    if (!targets.empty()) c.target_classes = targets;
    if (grid) std::tie(c.strips, c.bands) = parse_grid(*grid);
    if (seed) c.seed = *seed;
    if (workers) c.workers = *workers;
    if (magnitude_mode) {
      try {
        c.magnitude_mode = magnitude_mode_from_string(*magnitude_mode);
      } catch (const ValidationError& e) {
        throw ConfigError("magnitude_mode", e.what());
      }
    }
    if (subsample) c.comparison_subsample = *subsample;
    if (probe_lr) c.probe.learning_rate = *probe_lr;
    if (probe_iters) c.probe.iterations = *probe_iters;
    if (probe_l2) c.probe.l2 = *probe_l2;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unit-atlas: equal-count activation-space grids, per-cell probes and ablations"};
  app.require_subcommand(1);

  DatasetSpec dspec;
  std::string dshape = "3x32x32", dout;
  std::size_t dworkers = 0;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic image-class dataset");
  datagen->add_option("--out", dout, "Dataset directory")->required();
  datagen->add_option("--classes", dspec.n_classes, "Number of classes");
  datagen->add_option("--per-class", dspec.per_class, "Images per class");
  datagen->add_option("--shape", dshape, "Image shape CxHxW");
  datagen->add_option("--noise", dspec.noise, "Noise level");
  datagen->add_option("--seed", dspec.seed, "Seed");
  datagen->add_option("--workers", dworkers, "Worker threads");

  TrainConfig tconfig;
  std::string tdataset, tout, tarch = "desk";
  auto* train = app.add_subcommand("train", "Train a desk-scale CNN");
  train->add_option("--dataset", tdataset, "Dataset directory")->required();
  train->add_option("--out", tout, "Model directory")->required();
  train->add_option("--arch", tarch, "desk | desk_residual");
  train->add_option("--lr", tconfig.learning_rate, "Learning rate");
  train->add_option("--epochs", tconfig.epochs, "Epochs");
  train->add_option("--batch-size", tconfig.batch_size, "Minibatch size");
  train->add_option("--l2", tconfig.l2, "L2 coefficient");
  train->add_option("--momentum", tconfig.momentum, "Momentum");
  train->add_option("--seed", tconfig.seed, "Seed");
  train->add_option("--split", tconfig.train_fraction, "Train fraction");

  struct Stage {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
  };
  const std::vector<Stage> stage_defs = {
      {"capture", "Capture per-unit activations", &stage_capture},
      {"atlas", "Build selectivity x magnitude grids", &stage_atlas},
      {"ablate", "Per-cell ablation rank deficits", &stage_ablate},
      {"probe", "Per-cell linear probe accuracies", &stage_probe},
      {"report", "CSV and SVG grid reports", &stage_report},
  };
  std::vector<std::pair<CLI::App*, PipelineFlags>> stage_apps(stage_defs.size());
  for (std::size_t i = 0; i < stage_defs.size(); ++i) {
    stage_apps[i].first = app.add_subcommand(stage_defs[i].name, stage_defs[i].help);
  }
  for (auto& [sub, flags] : stage_apps) flags.attach(sub);
  PipelineFlags run_flags;
  auto* run = app.add_subcommand("run", "Full pipeline");
  run_flags.attach(run);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*datagen) {
      dspec.image_shape = parse_shape(dshape);
      const Dataset ds = generate_dataset(dspec, resolve_workers(dworkers));
      save_dataset(ds, dout);
      std::cout << "wrote " << ds.size() << " images (" << ds.n_classes() << " classes) to " << dout << "\n";
      return 0;
    }
    if (*train) {
      const Dataset ds = load_dataset(tdataset);
      const TrainResult result = train_model(architecture_from_string(tarch), ds, tconfig);
      save_model(result.model, tout);
      json log;
      log["architecture"] = tarch;
      log["config"] = {{"learning_rate", tconfig.learning_rate}, {"epochs", tconfig.epochs},
                       {"batch_size", tconfig.batch_size},       {"l2", tconfig.l2},
                       {"momentum", tconfig.momentum},           {"seed", tconfig.seed},
                       {"train_fraction", tconfig.train_fraction}};
      log["epochs"] = json::array();
      for (const auto& e : result.log) {
        log["epochs"].push_back({{"epoch", e.epoch},
                                 {"train_loss", e.train_loss},
                                 {"eval_accuracy", e.eval_accuracy ? json(*e.eval_accuracy) : json(nullptr)}});
        std::cout << "epoch " << e.epoch << " loss " << e.train_loss;
        if (e.eval_accuracy) std::cout << " eval_acc " << *e.eval_accuracy;
        std::cout << "\n";
      }
      log["final_eval_accuracy"] = result.final_eval_accuracy ? json(*result.final_eval_accuracy) : json(nullptr);
      std::ofstream(std::filesystem::path(tout) / "train_log.json") << log.dump(2) << "\n";
      return 0;
    }
    if (*run) {
      const RunConfig config = run_flags.resolve();
      pipeline_run(config);
      std::cout << "pipeline complete: " << config.out << "\n";
      return 0;
    }
    for (std::size_t i = 0; i < stage_defs.size(); ++i) {
      if (*stage_apps[i].first) {
        const RunConfig config = stage_apps[i].second.resolve();
        stage_defs[i].fn(config);
        std::cout << stage_defs[i].name << " done: " << config.out << "\n";
        return 0;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
