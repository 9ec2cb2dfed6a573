#pragma once

#include <filesystem>
#include <string>

#include "unit_atlas/model_graph.hpp"

namespace uatlas {

inline constexpr int kModelFormatVersion = 1;

// Writes manifest.json, weights.bin (f32 LE, tensors in manifest order) and
// checksum.txt (hex SHA-256 of weights.bin).
void save_model(const ModelGraph& model, const std::filesystem::path& dir);

// Loads and verifies a model directory. Raises VersionError, SizeMismatchError
// (manifest tensors do not tile the declared blob), TruncationError (blob
// shorter than declared), ChecksumError or ModelValidationError.
ModelGraph load_model(const std::filesystem::path& dir);

// Checksum recorded for a saved model.
std::string model_checksum(const std::filesystem::path& dir);

// Raw little-endian weight bytes in manifest order.
std::string weights_blob(const ModelGraph& model);

}  // namespace uatlas
