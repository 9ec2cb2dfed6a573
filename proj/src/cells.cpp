#include "unit_atlas/cells.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "unit_atlas/errors.hpp"
#include "unit_atlas/forward.hpp"
#include "unit_atlas/parallel.hpp"
#include "unit_atlas/rank.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t rank_of(const ModelGraph& model, const Dataset& dataset, std::size_t row, const AblationMask& mask) {
  const auto result = forward(model, dataset.image(row), mask);
  const auto probs = output_probabilities(model, result.logits);
  return class_rank(probs, dataset.labels[row]);
}

}  // namespace

BaselineRanks compute_baseline(const ModelGraph& model, const Dataset& dataset, std::size_t workers) {
  dataset.validate();
  if (model.n_outputs() != dataset.n_classes()) {
    throw ValidationError("model outputs " + std::to_string(model.n_outputs()) + " classes, dataset has " +
                          std::to_string(dataset.n_classes()));
  }
  BaselineRanks baseline;
  baseline.dataset_checksum = dataset_checksum(dataset);
  baseline.ranks.assign(dataset.size(), 0);
  const AblationMask none;
  parallel_for(dataset.size(), workers, [&](std::size_t i) { baseline.ranks[i] = rank_of(model, dataset, i, none); });
  return baseline;
}

void save_baseline(const BaselineRanks& baseline, const fs::path& path) {
  json j;
  j["model_checksum"] = baseline.model_checksum;
  j["dataset_checksum"] = baseline.dataset_checksum;
  j["ranks"] = baseline.ranks;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

std::optional<BaselineRanks> load_baseline(const fs::path& path, const std::string& model_checksum,
                                           const std::string& dataset_checksum) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    BaselineRanks b;
    b.model_checksum = j.at("model_checksum").get<std::string>();
    b.dataset_checksum = j.at("dataset_checksum").get<std::string>();
    if (b.model_checksum != model_checksum || b.dataset_checksum != dataset_checksum) return std::nullopt;
    b.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    return b;
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

AblationMask cell_mask(const std::string& layer, const std::vector<std::size_t>& units) {
  AblationMask mask;
  for (auto u : units) mask.add(layer, u);
  return mask;
}

CellDeficit cell_rank_deficit(const ModelGraph& model, const Dataset& dataset, const std::string& layer,
                              const std::vector<std::size_t>& units, std::span<const std::size_t> rows,
                              const BaselineRanks& baseline, std::size_t workers) {
  if (baseline.ranks.size() != dataset.size()) {
    throw ValidationError("baseline ranks missing: have " + std::to_string(baseline.ranks.size()) + " for " +
                          std::to_string(dataset.size()) + " images");
  }
  CellDeficit out;
  if (rows.empty()) throw ValidationError("no images to score for cell in layer '" + layer + "'");
  const AblationMask mask = cell_mask(layer, units);
  model.validate_mask(mask);
  if (units.empty()) out.warning = "empty cell in layer '" + layer + "'";

  const std::size_t n_classes = model.n_outputs();
  out.records.resize(rows.size());
  parallel_for(rows.size(), workers, [&](std::size_t k) {
    const std::size_t row = rows[k];
    const std::size_t base = baseline.ranks[row];
    if (base < 1 || base > n_classes) throw ValidationError("baseline rank out of range for image " + std::to_string(row));
    const std::size_t ablated = units.empty() ? base : rank_of(model, dataset, row, mask);
    out.records[k] = {row, base, ablated, static_cast<long>(ablated) - static_cast<long>(base)};
  });
  long total = 0;
  for (const auto& r : out.records) total += r.deficit;
  out.mean_rank_deficit = static_cast<double>(total) / static_cast<double>(rows.size());
  return out;
}

std::vector<CellResult> run_all_cells(const ModelGraph& model, const Dataset& dataset, const ActivationMatrix& acts,
                                      const GridAtlas& atlas, const BaselineRanks& baseline,
                                      const CellRunOptions& options) {
  const std::size_t target = atlas.target;
  if (target >= dataset.n_classes()) throw ValidationError("atlas target class out of range for dataset");
  if (acts.n_images() != dataset.size()) throw ValidationError("activation matrix and dataset differ in size");

  const auto target_rows = dataset.rows_of_class(target);
  std::vector<std::size_t> all_rows(dataset.size());
  for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = i;

  std::vector<std::size_t> labels(acts.n_images());
  for (std::size_t r = 0; r < acts.n_images(); ++r) labels[r] = acts.rows[r].label;
  Split split;
  if (options.run_probe) {
    std::vector<std::uint16_t> labels16(labels.begin(), labels.end());
    split = stratified_split(labels16, dataset.n_classes(), options.probe.train_fraction, options.seed, "probe-split");
  }

  std::vector<CellResult> results;
  for (const auto& grid : atlas.layers) {
    for (std::size_t s = 0; s < atlas.strips; ++s) {
      for (std::size_t b = 0; b < atlas.bands; ++b) {
        CellResult r;
        r.target_class = target;
        r.layer = grid.layer;
        r.strip = s;
        r.band = b;
        r.n_units = grid.cell(s, b, atlas.bands).size();
        results.push_back(std::move(r));
      }
    }
  }

  // Cells run one after another; images within a cell use the worker pool.
  for (auto& r : results) {
    const auto& units = atlas.layer(r.layer).cell(r.strip, r.band, atlas.bands);
    if (options.run_ablation) {
      try {
        auto deficit = cell_rank_deficit(model, dataset, r.layer, units, target_rows, baseline, options.workers);
        r.mean_rank_deficit = deficit.mean_rank_deficit;
        r.n_images_ablated = deficit.records.size();
        if (deficit.warning) r.warnings.push_back(*deficit.warning);
        if (options.all_class_deficit) {
          r.mean_rank_deficit_all_classes =
              cell_rank_deficit(model, dataset, r.layer, units, all_rows, baseline, options.workers).mean_rank_deficit;
        }
      } catch (const Error& e) {
        r.warnings.push_back(std::string("ablation failed: ") + e.what());
      }
    }
    if (options.run_probe) {
      try {
        const auto x = cell_features(acts, r.layer, units);
        const std::string cell_id =
            r.layer + "/" + std::to_string(r.strip) + "/" + std::to_string(r.band);
        auto probe = fit_linear_probe(x, labels, split.train, dataset.n_classes(), options.probe, options.seed, cell_id);
        r.probe_accuracy = evaluate_probe(probe, x, labels, split.eval, target);
        for (auto row : split.eval) r.n_images_probed += labels[row] == target ? 1 : 0;
        if (probe.degenerate) r.warnings.push_back("probe degenerate: every feature constant on the train split");
        r.probe = std::move(probe);
      } catch (const Error& e) {
        r.warnings.push_back(std::string("probe failed: ") + e.what());
      }
    }
  }
  return results;
}

}  // namespace uatlas
