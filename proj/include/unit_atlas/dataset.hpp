#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unit_atlas/tensor.hpp"

namespace uatlas {

// Labelled u8 images stored [n, ch, y, x] row-major. Pixels map to network
// inputs as value / 255.
struct Dataset {
  Shape image_shape;  // [ch, y, x]
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint16_t> labels;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }
  std::size_t image_bytes() const { return shape_product(image_shape); }
  Tensor image(std::size_t i) const;
  std::vector<std::size_t> class_counts() const;
  std::vector<std::size_t> rows_of_class(std::size_t label) const;
  // Resolves a class given by name or decimal index.
  std::size_t class_index(const std::string& name_or_index) const;

  // Throws ValidationError unless labels, pixels and shape agree.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSpec {
  std::size_t n_classes = 8;
  std::size_t per_class = 100;
  Shape image_shape{3, 32, 32};
  // Scales every source of per-image variation: pixel noise, grating phase,
  // pattern jitter and contrast. At 0 all images of a class are identical.
  double noise = 0.5;
  std::uint64_t seed = 1;
};

// Class k renders an oriented grating (class-specific orientation and
// frequency) plus a blob at a class-specific position. Images are laid out
// class-major and each image draws from its own counter stream, so the
// output is independent of `workers`.
Dataset generate_dataset(const DatasetSpec& spec, std::size_t workers = 1);

// Directory with index.json, images.bin (u8) and labels.bin (u16 LE).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// SHA-256 over images.bin followed by labels.bin as serialized.
std::string dataset_checksum(const Dataset& dataset);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

// Per class, a seeded shuffle of that class's rows; the first
// round(fraction * n_c) (clamped to [1, n_c - 1] when n_c >= 2) go to train.
// Both lists are returned in ascending row order.
Split stratified_split(const std::vector<std::uint16_t>& labels, std::size_t n_classes, double train_fraction,
                       std::uint64_t seed, std::string_view stream);

}  // namespace uatlas
