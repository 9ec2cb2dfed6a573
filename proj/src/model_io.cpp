#include "unit_atlas/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "unit_atlas/checksum.hpp"
#include "unit_atlas/errors.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TensorEntry {
  std::string name;
  Shape dims;
  std::size_t offset = 0;
};

std::vector<std::string> tensor_order(const std::vector<LayerSpec>& layers) {
  std::vector<std::string> names;
  for (const auto& layer : layers) {
    for (const auto& role : param_roles(layer.kind)) names.push_back(param_name(layer.id, role));
  }
  return names;
}

json layer_to_json(const LayerSpec& layer) {
  json j;
  j["id"] = layer.id;
  j["kind"] = to_string(layer.kind);
  j["inputs"] = layer.inputs;
  switch (layer.kind) {
    case LayerKind::conv2d:
      j["units"] = layer.units;
      j["kernel"] = layer.kernel;
      j["stride"] = layer.stride;
      j["padding"] = layer.padding;
      break;
    case LayerKind::dense:
      j["units"] = layer.units;
      break;
    case LayerKind::maxpool2d:
      j["kernel"] = layer.kernel;
      j["stride"] = layer.stride;
      break;
    case LayerKind::batchnorm:
      j["epsilon"] = layer.epsilon;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec layer;
  layer.id = j.at("id").get<std::string>();
  layer.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  layer.inputs = j.at("inputs").get<std::vector<std::string>>();
  layer.units = j.value("units", std::size_t{0});
  layer.kernel = j.value("kernel", std::size_t{0});
  layer.stride = j.value("stride", std::size_t{1});
  layer.padding = j.value("padding", std::size_t{0});
  layer.epsilon = j.value("epsilon", 1e-5f);
  return layer;
}

void append_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

std::string weights_blob(const ModelGraph& model) {
  std::string blob;
  for (const auto& name : tensor_order(model.layers())) {
    for (float v : model.param(name).data()) append_le(blob, v);
  }
  return blob;
}

void save_model(const ModelGraph& model, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format_version"] = kModelFormatVersion;
  manifest["input_shape"] = model.input_shape();
  manifest["layers"] = json::array();
  for (const auto& layer : model.layers()) manifest["layers"].push_back(layer_to_json(layer));
  manifest["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& name : tensor_order(model.layers())) {
    const Tensor& t = model.param(name);
    manifest["tensors"].push_back({{"name", name}, {"dims", t.shape()}, {"offset", offset}});
    offset += 4 * t.size();
  }
  manifest["weights_bytes"] = offset;

  const std::string blob = weights_blob(model);
  write_file(dir / "weights.bin", blob);
  write_file(dir / "checksum.txt", sha256_hex(blob) + "\n");
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ModelGraph load_model(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ModelValidationError("malformed manifest.json: " + std::string(e.what()));
  }

  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::vector<TensorEntry> entries;
  std::size_t declared = 0;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw VersionError("model format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
    }
    input_shape = manifest.at("input_shape").get<Shape>();
    for (const auto& j : manifest.at("layers")) layers.push_back(layer_from_json(j));
    for (const auto& j : manifest.at("tensors")) {
      entries.push_back({j.at("name").get<std::string>(), j.at("dims").get<Shape>(), j.at("offset").get<std::size_t>()});
    }
    declared = manifest.at("weights_bytes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ModelValidationError("malformed manifest.json: " + std::string(e.what()));
  }

  // Tensor descriptors must tile the declared blob exactly, in order.
  std::size_t cursor = 0;
  for (const auto& e : entries) {
    if (e.offset != cursor) {
      throw SizeMismatchError("tensor '" + e.name + "' starts at byte " + std::to_string(e.offset) + ", expected " +
                              std::to_string(cursor));
    }
    cursor += 4 * shape_product(e.dims);
  }
  if (cursor != declared) {
    throw SizeMismatchError("manifest tensors cover " + std::to_string(cursor) + " bytes but weights_bytes is " +
                            std::to_string(declared));
  }

  const std::string blob = read_file(dir / "weights.bin");
  if (blob.size() < declared) {
    throw TruncationError("weights.bin holds " + std::to_string(blob.size()) + " bytes, manifest declares " +
                          std::to_string(declared));
  }
  if (blob.size() > declared) {
    throw SizeMismatchError("weights.bin holds " + std::to_string(blob.size()) + " bytes, manifest declares " +
                            std::to_string(declared));
  }
  const std::string expected = trim(read_file(dir / "checksum.txt"));
  const std::string actual = sha256_hex(blob);
  if (expected != actual) throw ChecksumError("weights.bin checksum " + actual + " does not match " + expected);

  const auto order = tensor_order(layers);
  if (order.size() != entries.size()) throw ModelValidationError("manifest tensor list does not match its layers");
  ParamMap params;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.name != order[i]) {
      throw ModelValidationError("manifest tensor " + std::to_string(i) + " is '" + e.name + "', expected '" +
                                 order[i] + "'");
    }
    std::vector<float> values(shape_product(e.dims));
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = read_le(blob.data() + e.offset + 4 * k);
    params.emplace(e.name, Tensor(e.dims, std::move(values)));
  }
  return ModelGraph(std::move(input_shape), std::move(layers), std::move(params));
}

std::string model_checksum(const fs::path& dir) { return trim(read_file(dir / "checksum.txt")); }

}  // namespace uatlas
