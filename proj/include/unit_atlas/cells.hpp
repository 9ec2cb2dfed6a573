#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unit_atlas/atlas.hpp"
#include "unit_atlas/dataset.hpp"
#include "unit_atlas/model_graph.hpp"
#include "unit_atlas/probe.hpp"

namespace uatlas {

struct RankRecord {
  std::size_t image_id = 0;
  std::size_t baseline_rank = 1;
  std::size_t ablated_rank = 1;
  long deficit = 0;  // ablated - baseline
};

// Unablated rank of the correct class for every dataset row.
struct BaselineRanks {
  std::string model_checksum;
  std::string dataset_checksum;
  std::vector<std::size_t> ranks;
};

BaselineRanks compute_baseline(const ModelGraph& model, const Dataset& dataset, std::size_t workers = 1);

// baseline.json keyed by both checksums; load returns nullopt when the file
// is missing or was produced for different inputs.
void save_baseline(const BaselineRanks& baseline, const std::filesystem::path& path);
std::optional<BaselineRanks> load_baseline(const std::filesystem::path& path, const std::string& model_checksum,
                                           const std::string& dataset_checksum);

AblationMask cell_mask(const std::string& layer, const std::vector<std::size_t>& units);

struct CellDeficit {
  double mean_rank_deficit = 0.0;
  std::vector<RankRecord> records;
  std::optional<std::string> warning;
};

// Ablates every unit of the cell and scores the given rows against their
// baseline ranks. An empty cell scores 0 with a warning.
CellDeficit cell_rank_deficit(const ModelGraph& model, const Dataset& dataset, const std::string& layer,
                              const std::vector<std::size_t>& units, std::span<const std::size_t> rows,
                              const BaselineRanks& baseline, std::size_t workers = 1);

struct CellResult {
  std::size_t target_class = 0;
  std::string layer;
  std::size_t strip = 0;
  std::size_t band = 0;
  std::size_t n_units = 0;
  std::optional<double> mean_rank_deficit;
  std::optional<double> mean_rank_deficit_all_classes;
  std::optional<double> probe_accuracy;
  std::size_t n_images_ablated = 0;
  std::size_t n_images_probed = 0;
  std::optional<ProbeModel> probe;
  std::vector<std::string> warnings;
};

struct CellRunOptions {
  ProbeConfig probe;
  std::uint64_t seed = 0;  // probe split
  bool run_ablation = true;
  bool run_probe = true;
  bool all_class_deficit = false;
  std::size_t workers = 1;
};

// One result per (layer, strip, band) of the atlas, ordered that way. Per-cell
// failures are recorded as warnings and the run continues.
std::vector<CellResult> run_all_cells(const ModelGraph& model, const Dataset& dataset, const ActivationMatrix& acts,
                                      const GridAtlas& atlas, const BaselineRanks& baseline,
                                      const CellRunOptions& options);

}  // namespace uatlas
