#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "unit_atlas/dataset.hpp"
#include "unit_atlas/model_graph.hpp"

namespace uatlas {

struct ImageRow {
  std::size_t image_id = 0;
  std::size_t label = 0;

  friend bool operator==(const ImageRow&, const ImageRow&) = default;
};

struct LayerColumns {
  std::string layer;
  std::size_t first = 0;
  std::size_t count = 0;

  friend bool operator==(const LayerColumns&, const LayerColumns&) = default;
};

// One scalar per (image, unit). Columns are grouped by maskable layer in
// model order, units ascending within a layer.
struct ActivationMatrix {
  std::vector<float> values;  // [n_images x n_units] row-major
  std::vector<UnitId> columns;
  std::vector<ImageRow> rows;
  std::vector<LayerColumns> layers;
  std::vector<std::string> class_names;

  std::size_t n_images() const noexcept { return rows.size(); }
  std::size_t n_units() const noexcept { return columns.size(); }
  float at(std::size_t row, std::size_t col) const { return values[row * columns.size() + col]; }
  std::size_t column_of(const UnitId& unit) const;
  const LayerColumns& layer(const std::string& id) const;

  friend bool operator==(const ActivationMatrix&, const ActivationMatrix&) = default;
};

// Per-unit scalars of a capture-layer output: the spatial mean of each
// channel for [ch, y, x] maps, the value itself for vectors.
std::vector<float> unit_scalars(const Tensor& captured);

// Forwards every image with `mask` and records each maskable unit's scalar
// at its capture layer.
ActivationMatrix capture_activations(const ModelGraph& model, const Dataset& dataset, const AblationMask& mask = {},
                                     std::size_t workers = 1);

// activations.bin (f32 LE, row-major) plus units.json and images.json.
void save_activations(const ActivationMatrix& acts, const std::filesystem::path& dir);
ActivationMatrix load_activations(const std::filesystem::path& dir);

}  // namespace uatlas
