#include "unit_atlas/dataset.hpp"

#include <cctype>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "unit_atlas/checksum.hpp"
#include "unit_atlas/errors.hpp"
#include "unit_atlas/parallel.hpp"
#include "unit_atlas/rng.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor Dataset::image(std::size_t i) const {
  const std::size_t n = image_bytes();
  std::vector<float> values(n);
  const std::uint8_t* src = pixels.data() + i * n;
  for (std::size_t k = 0; k < n; ++k) values[k] = static_cast<float>(src[k]) / 255.0f;
  return Tensor(image_shape, std::move(values));
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes(), 0);
  for (auto l : labels) {
    if (l < counts.size()) ++counts[l];
  }
  return counts;
}

std::vector<std::size_t> Dataset::rows_of_class(std::size_t label) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) rows.push_back(i);
  }
  return rows;
}

std::size_t Dataset::class_index(const std::string& name_or_index) const {
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (class_names[c] == name_or_index) return c;
  }
  if (!name_or_index.empty() && std::all_of(name_or_index.begin(), name_or_index.end(), ::isdigit)) {
    const auto c = std::stoul(name_or_index);
    if (c < n_classes()) return c;
  }
  throw ValidationError("unknown class '" + name_or_index + "'");
}

void Dataset::validate() const {
  if (image_shape.size() != 3 || shape_product(image_shape) == 0) {
    throw ValidationError("dataset image shape must be [ch,y,x] with positive dims");
  }
  if (labels.empty()) throw ValidationError("dataset has no images");
  if (n_classes() < 1) throw ValidationError("dataset has no classes");
  if (pixels.size() != labels.size() * image_bytes()) {
    throw ValidationError("dataset pixel blob holds " + std::to_string(pixels.size()) + " bytes, expected " +
                          std::to_string(labels.size() * image_bytes()));
  }
  for (auto l : labels) {
    if (l >= n_classes()) throw ValidationError("label " + std::to_string(l) + " >= class count");
  }
}

namespace {

void render_image(const DatasetSpec& spec, std::size_t label, std::size_t image_index, std::uint8_t* out) {
  const std::size_t ch = spec.image_shape[0], h = spec.image_shape[1], w = spec.image_shape[2];
  const double eta = spec.noise;
  const double pi = std::numbers::pi;
  const double classes = static_cast<double>(spec.n_classes);
  const double k = static_cast<double>(label);
  const double side = static_cast<double>(std::min(h, w));

  RngStream rng(CounterRng(spec.seed, static_cast<std::uint64_t>(image_index)));
  const double phase = 2.0 * pi * std::min(1.0, 2.0 * eta) * rng.next_uniform();
  const double contrast = 1.0 - 0.5 * std::min(1.0, eta) * rng.next_uniform();
  const double blob_gain = 1.0 - 0.5 * std::min(1.0, eta) * rng.next_uniform();
  const double jitter = eta * side / 8.0;
  const double jx = rng.next_uniform(-jitter, jitter);
  const double jy = rng.next_uniform(-jitter, jitter);
  std::vector<double> gains(ch);
  for (auto& g : gains) g = 1.0 - 0.2 * std::min(1.0, eta) * rng.next_uniform();

  const double theta = pi * k / classes;
  const double cycles = (label % 2 == 0 ? 2.5 : 4.5);
  const double fx = 2.0 * pi * cycles * std::cos(theta) / static_cast<double>(w);
  const double fy = 2.0 * pi * cycles * std::sin(theta) / static_cast<double>(h);
  const double angle = 2.0 * pi * (k + 0.5) / classes;
  const double cx = 0.5 * static_cast<double>(w) + 0.28 * side * std::cos(angle) + jx;
  const double cy = 0.5 * static_cast<double>(h) + 0.28 * side * std::sin(angle) + jy;
  const double sigma2 = 2.0 * std::pow(0.11 * side, 2);
  const double pixel_noise = 0.5 * eta;

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double grating = std::cos(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      const double blob = std::exp(-(dx * dx + dy * dy) / sigma2);
      const double base = 0.45 + 0.22 * contrast * grating + 0.33 * blob_gain * blob;
      for (std::size_t c = 0; c < ch; ++c) {
        const std::uint64_t slot = (c * h + y) * w + x;
        double v = gains[c] * base;
        if (pixel_noise > 0.0) v += pixel_noise * (2.0 * rng.next_uniform() - 1.0);
        v = std::clamp(v, 0.0, 1.0);
        out[slot] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
}

void write_file(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string labels_bytes(const std::vector<std::uint16_t>& labels) {
  std::string bytes(labels.size() * 2, '\0');
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bytes[2 * i] = static_cast<char>(labels[i] & 0xff);
    bytes[2 * i + 1] = static_cast<char>(labels[i] >> 8);
  }
  return bytes;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec, std::size_t workers) {
  if (spec.n_classes < 2) throw ValidationError("generate_dataset needs at least 2 classes");
  if (spec.n_classes > 65535) throw ValidationError("too many classes for u16 labels");
  if (spec.per_class < 2) throw ValidationError("generate_dataset needs at least 2 images per class");
  if (spec.image_shape.size() != 3 || spec.image_shape[0] == 0) {
    throw ValidationError("image shape must be [ch,y,x]");
  }
  if (spec.image_shape[1] < 8 || spec.image_shape[2] < 8) {
    throw ValidationError("image shape " + shape_to_string(spec.image_shape) + " too small for patterns (< 8x8)");
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ValidationError("noise level must be >= 0");

  Dataset ds;
  ds.image_shape = spec.image_shape;
  for (std::size_t c = 0; c < spec.n_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  const std::size_t n = spec.n_classes * spec.per_class;
  const std::size_t bytes = shape_product(spec.image_shape);
  ds.labels.resize(n);
  ds.pixels.resize(n * bytes);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::uint16_t>(i / spec.per_class);
  parallel_for(n, workers, [&](std::size_t i) {
    render_image(spec, ds.labels[i], i, ds.pixels.data() + i * bytes);
  });
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir);
  json index;
  index["format_version"] = 1;
  index["shape"] = dataset.image_shape;
  index["n_images"] = dataset.size();
  index["classes"] = dataset.class_names;
  index["counts"] = dataset.class_counts();
  const std::string text = index.dump(2) + "\n";
  write_file(dir / "index.json", text.data(), text.size());
  write_file(dir / "images.bin", dataset.pixels.data(), dataset.pixels.size());
  const std::string labels = labels_bytes(dataset.labels);
  write_file(dir / "labels.bin", labels.data(), labels.size());
}

Dataset load_dataset(const fs::path& dir) {
  json index;
  try {
    index = json::parse(read_file(dir / "index.json"));
  } catch (const json::exception& e) {
    throw ValidationError("malformed dataset index: " + std::string(e.what()));
  }
  Dataset ds;
  std::size_t n = 0;
  try {
    if (index.at("format_version").get<int>() != 1) throw VersionError("unsupported dataset format version");
    ds.image_shape = index.at("shape").get<Shape>();
    ds.class_names = index.at("classes").get<std::vector<std::string>>();
    n = index.at("n_images").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed dataset index: " + std::string(e.what()));
  }
  const std::string images = read_file(dir / "images.bin");
  const std::string labels = read_file(dir / "labels.bin");
  if (images.size() != n * shape_product(ds.image_shape)) {
    if (images.size() < n * shape_product(ds.image_shape)) throw TruncationError("images.bin is truncated");
    throw SizeMismatchError("images.bin is larger than declared");
  }
  if (labels.size() != 2 * n) throw TruncationError("labels.bin does not hold " + std::to_string(n) + " labels");
  ds.pixels.assign(images.begin(), images.end());
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<std::uint16_t>(static_cast<unsigned char>(labels[2 * i]) |
                                              (static_cast<unsigned char>(labels[2 * i + 1]) << 8));
  }
  ds.validate();
  return ds;
}

std::string dataset_checksum(const Dataset& dataset) {
  std::string bytes(dataset.pixels.begin(), dataset.pixels.end());
  bytes += labels_bytes(dataset.labels);
  return sha256_hex(bytes);
}

Split stratified_split(const std::vector<std::uint16_t>& labels, std::size_t n_classes, double train_fraction,
                       std::uint64_t seed, std::string_view stream) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train fraction must lie strictly between 0 and 1");
  }
  Split split;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) rows.push_back(i);
    }
    if (rows.empty()) continue;
    RngStream rng(CounterRng(seed, std::string(stream) + "/" + std::to_string(c)));
    shuffle(rows.begin(), rows.end(), rng);
    std::size_t n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    else n_train = 1;
    split.train.insert(split.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.eval.insert(split.eval.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.eval.begin(), split.eval.end());
  return split;
}

}  // namespace uatlas
