#include "unit_atlas/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <tuple>

#include "unit_atlas/activations.hpp"
#include "unit_atlas/atlas.hpp"
#include "unit_atlas/cells.hpp"
#include "unit_atlas/checksum.hpp"
#include "unit_atlas/dataset.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/model_io.hpp"
#include "unit_atlas/parallel.hpp"
#include "unit_atlas/report.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using CellKey = std::tuple<std::size_t, std::string, std::size_t, std::size_t>;

CellKey key_of(const CellResult& r) { return {r.target_class, r.layer, r.strip, r.band}; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' (run the earlier stage first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

std::vector<std::size_t> resolve_targets(const RunConfig& config, const std::vector<std::string>& class_names) {
  std::vector<std::size_t> targets;
  if (config.target_classes.empty()) {
    for (std::size_t c = 0; c < class_names.size(); ++c) targets.push_back(c);
    return targets;
  }
  Dataset names_only;
  names_only.class_names = class_names;
  for (const auto& t : config.target_classes) {
    try {
      const std::size_t c = names_only.class_index(t);
      if (std::find(targets.begin(), targets.end(), c) == targets.end()) targets.push_back(c);
    } catch (const ValidationError&) {
      throw ConfigError("target_classes", "unknown class '" + t + "'");
    }
  }
  return targets;
}

json run_metadata(const RunConfig& config, const Dataset& dataset) {
  json meta;
  meta["tool"] = "unit-atlas";
  meta["format_version"] = 1;
  meta["config"] = config.to_json();
  meta["model_checksum"] = model_checksum(config.model);
  meta["dataset_checksum"] = dataset_checksum(dataset);
  meta["class_names"] = dataset.class_names;
  meta["score_definitions"] = {
      {"mean_rank_deficit", "mean over target-class images of (ablated rank - baseline rank), rank 1 = most likely"},
      {"probe_accuracy", "held-out target-class recall of a multiclass softmax probe on the cell's units"}};
  return meta;
}

// Runs the requested halves of the per-cell analysis and merges them into
// results.json, keeping whatever the other half already wrote.
void run_cells(const RunConfig& config, bool ablation, bool probe) {
  config.validate(true);
  const fs::path out(config.out);
  const ModelGraph model = load_model(config.model);
  const Dataset dataset = load_dataset(config.dataset);
  const ActivationMatrix acts = load_activations(out);
  const auto atlases = load_atlases(out / "atlas.json");
  const std::size_t workers = resolve_workers(config.workers);

  BaselineRanks baseline;
  if (ablation) {
    const std::string mck = model_checksum(config.model);
    const std::string dck = dataset_checksum(dataset);
    if (auto cached = load_baseline(out / "baseline.json", mck, dck)) {
      baseline = std::move(*cached);
    } else {
      baseline = compute_baseline(model, dataset, workers);
      baseline.model_checksum = mck;
      save_baseline(baseline, out / "baseline.json");
    }
  }

  std::map<CellKey, CellResult> previous;
  if (fs::exists(out / "results.json")) {
    for (auto& r : results_from_json(read_json(out / "results.json"))) previous.emplace(key_of(r), std::move(r));
  }

  CellRunOptions options;
  options.probe = config.probe;
  options.seed = config.seed;
  options.run_ablation = ablation;
  options.run_probe = probe;
  options.all_class_deficit = config.all_class_deficit;
  options.workers = workers;

  std::vector<CellResult> merged;
  for (const auto& atlas : atlases) {
    for (auto& r : run_all_cells(model, dataset, acts, atlas, baseline, options)) {
      auto it = previous.find(key_of(r));
      if (it != previous.end()) {
        const CellResult& old = it->second;
        if (!ablation) {
          r.mean_rank_deficit = old.mean_rank_deficit;
          r.mean_rank_deficit_all_classes = old.mean_rank_deficit_all_classes;
          r.n_images_ablated = old.n_images_ablated;
        }
        if (!probe) {
          r.probe_accuracy = old.probe_accuracy;
          r.n_images_probed = old.n_images_probed;
          r.probe = old.probe;
        }
        for (const auto& w : old.warnings) {
          const bool from_other = (!ablation && w.rfind("ablation", 0) == 0) || (!probe && w.rfind("probe", 0) == 0) ||
                                  (!ablation && w.rfind("empty cell", 0) == 0);
          if (from_other && std::find(r.warnings.begin(), r.warnings.end(), w) == r.warnings.end()) r.warnings.push_back(w);
        }
      }
      merged.push_back(std::move(r));
    }
  }
  write_json(out / "results.json", results_to_json(merged, dataset.class_names, run_metadata(config, dataset)));
}

struct StageRecord {
  std::string name;
  std::vector<std::string> outputs;
};

json manifest_entry(const fs::path& out, const StageRecord& stage) {
  json j;
  j["stage"] = stage.name;
  j["outputs"] = json::object();
  for (const auto& file : stage.outputs) {
    const fs::path p = out / file;
    if (fs::is_directory(p)) {
      std::size_t count = 0;
      for (const auto& e : fs::recursive_directory_iterator(p)) count += e.is_regular_file() ? 1 : 0;
      j["outputs"][file] = {{"files", count}};
    } else {
      j["outputs"][file] = sha256_file(p);
    }
  }
  return j;
}

}  // namespace

void stage_capture(const RunConfig& config) {
  config.validate(true);
  const ModelGraph model = load_model(config.model);
  const Dataset dataset = load_dataset(config.dataset);
  const auto acts = capture_activations(model, dataset, {}, resolve_workers(config.workers));
  save_activations(acts, config.out);
}

void stage_atlas(const RunConfig& config) {
  config.validate(false);
  const ActivationMatrix acts = load_activations(config.out);
  AtlasOptions options;
  options.strips = config.strips;
  options.bands = config.bands;
  options.magnitude_mode = config.magnitude_mode;
  options.comparison_subsample = config.comparison_subsample;
  options.seed = config.seed;
  std::vector<GridAtlas> atlases;
  for (auto target : resolve_targets(config, acts.class_names)) atlases.push_back(build_atlas(acts, target, options));
  save_atlases(atlases, acts.class_names, fs::path(config.out) / "atlas.json");
}

void stage_ablate(const RunConfig& config) { run_cells(config, true, false); }

void stage_probe(const RunConfig& config) { run_cells(config, false, true); }

void stage_report(const RunConfig& config) {
  config.validate(false);
  const fs::path out(config.out);
  const json root = read_json(out / "results.json");
  const auto results = results_from_json(root);
  std::vector<std::string> names;
  if (root.contains("metadata") && root["metadata"].contains("class_names")) {
    names = root["metadata"]["class_names"].get<std::vector<std::string>>();
  }
  std::size_t strips = config.strips, bands = config.bands;
  if (fs::exists(out / "atlas.json")) {
    const auto atlases = load_atlases(out / "atlas.json");
    if (!atlases.empty()) strips = atlases.front().strips, bands = atlases.front().bands;
  }
  if (fs::exists(out / "svg")) fs::remove_all(out / "svg");
  emit_grid_report(results, names, strips, bands, out);
}

fs::path pipeline_run(const RunConfig& config) {
  config.validate(true);
  const fs::path out(config.out);
  fs::create_directories(out);
  const std::vector<std::pair<StageRecord, void (*)(const RunConfig&)>> stages = {
      {{"capture", {"activations.bin", "units.json", "images.json"}}, &stage_capture},
      {{"atlas", {"atlas.json"}}, &stage_atlas},
      {{"ablate", {"baseline.json", "results.json"}}, &stage_ablate},
      {{"probe", {"results.json"}}, &stage_probe},
      {{"report", {"report.csv", "svg"}}, &stage_report},
  };
  json manifest;
  manifest["status"] = "running";
  manifest["completed_stage"] = nullptr;
  manifest["workers"] = resolve_workers(config.workers);
  manifest["stages"] = json::array();
  write_json(out / "MANIFEST.json", manifest);
  for (const auto& [record, run] : stages) {
    try {
      run(config);
    } catch (const std::exception& e) {
      manifest["status"] = "failed";
      manifest["failed_stage"] = record.name;
      manifest["error"] = e.what();
      write_json(out / "MANIFEST.json", manifest);
      throw;
    }
    manifest["stages"].push_back(manifest_entry(out, record));
    manifest["completed_stage"] = record.name;
    write_json(out / "MANIFEST.json", manifest);
  }
  manifest["status"] = "complete";
  write_json(out / "MANIFEST.json", manifest);
  return out;
}

}  // namespace uatlas
