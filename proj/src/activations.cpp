#include "unit_atlas/activations.hpp"

#include <set>
#include <bit>
#include <fstream>

#include <nlohmann/json.hpp>

#include "unit_atlas/errors.hpp"
#include "unit_atlas/forward.hpp"
#include "unit_atlas/parallel.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t ActivationMatrix::column_of(const UnitId& unit) const {
  const auto& cols = layer(unit.layer);
  if (unit.index >= cols.count) {
    throw ValidationError("unit " + std::to_string(unit.index) + " out of range for layer '" + unit.layer + "'");
  }
  return cols.first + unit.index;
}

const LayerColumns& ActivationMatrix::layer(const std::string& id) const {
  for (const auto& l : layers) {
    if (l.layer == id) return l;
  }
  throw ValidationError("activation matrix has no layer '" + id + "'");
}

std::vector<float> unit_scalars(const Tensor& captured) {
  if (captured.rank() == 1) return captured.values();
  const std::size_t ch = captured.dim(0);
  const std::size_t per = captured.size() / ch;
  std::vector<float> out(ch);
  const auto data = captured.data();
  for (std::size_t c = 0; c < ch; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += data[c * per + i];
    out[c] = static_cast<float>(sum / static_cast<double>(per));
  }
  return out;
}

ActivationMatrix capture_activations(const ModelGraph& model, const Dataset& dataset, const AblationMask& mask,
                                     std::size_t workers) {
  dataset.validate();
  if (dataset.image_shape != model.input_shape()) {
    throw ValidationError("dataset images " + shape_to_string(dataset.image_shape) + " do not match model input " +
                          shape_to_string(model.input_shape()));
  }
  model.validate_mask(mask);

  ActivationMatrix acts;
  acts.class_names = dataset.class_names;
  std::set<std::string> taps;
  for (const auto& id : model.maskable_layers()) {
    const std::size_t n = model.unit_count(id);
    acts.layers.push_back({id, acts.columns.size(), n});
    for (std::size_t u = 0; u < n; ++u) acts.columns.push_back({id, u});
    taps.insert(model.capture_layer(id));
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) acts.rows.push_back({i, dataset.labels[i]});

  const std::size_t width = acts.columns.size();
  acts.values.assign(dataset.size() * width, 0.0f);
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    const auto result = forward(model, dataset.image(i), mask, taps);
    float* row = acts.values.data() + i * width;
    for (const auto& cols : acts.layers) {
      const auto scalars = unit_scalars(result.tapped.at(model.capture_layer(cols.layer)));
      std::copy(scalars.begin(), scalars.end(), row + cols.first);
    }
  });
  return acts;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void save_activations(const ActivationMatrix& acts, const fs::path& dir) {
  fs::create_directories(dir);
  std::string blob;
  blob.reserve(acts.values.size() * 4);
  for (float v : acts.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
  write_file(dir / "activations.bin", blob);

  json units;
  units["n_units"] = acts.n_units();
  units["layers"] = json::array();
  for (const auto& l : acts.layers) units["layers"].push_back({{"layer", l.layer}, {"first", l.first}, {"count", l.count}});
  units["columns"] = json::array();
  for (const auto& u : acts.columns) units["columns"].push_back({{"layer", u.layer}, {"index", u.index}});
  write_file(dir / "units.json", units.dump(2) + "\n");

  json images;
  images["n_images"] = acts.n_images();
  images["class_names"] = acts.class_names;
  images["rows"] = json::array();
  for (const auto& r : acts.rows) images["rows"].push_back({{"image_id", r.image_id}, {"label", r.label}});
  write_file(dir / "images.json", images.dump(2) + "\n");
}

ActivationMatrix load_activations(const fs::path& dir) {
  ActivationMatrix acts;
  try {
    const json units = json::parse(read_file(dir / "units.json"));
    for (const auto& l : units.at("layers")) {
      acts.layers.push_back({l.at("layer").get<std::string>(), l.at("first").get<std::size_t>(),
                             l.at("count").get<std::size_t>()});
    }
    for (const auto& c : units.at("columns")) {
      acts.columns.push_back({c.at("layer").get<std::string>(), c.at("index").get<std::size_t>()});
    }
    const json images = json::parse(read_file(dir / "images.json"));
    acts.class_names = images.at("class_names").get<std::vector<std::string>>();
    for (const auto& r : images.at("rows")) {
      acts.rows.push_back({r.at("image_id").get<std::size_t>(), r.at("label").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed activation sidecar: " + std::string(e.what()));
  }
  const std::string blob = read_file(dir / "activations.bin");
  const std::size_t expected = 4 * acts.n_images() * acts.n_units();
  if (blob.size() < expected) throw TruncationError("activations.bin is truncated");
  if (blob.size() > expected) throw SizeMismatchError("activations.bin is larger than its sidecars declare");
  acts.values.resize(acts.n_images() * acts.n_units());
  for (std::size_t i = 0; i < acts.values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + b])) << (8 * b);
    acts.values[i] = std::bit_cast<float>(bits);
  }
  return acts;
}

}  // namespace uatlas
