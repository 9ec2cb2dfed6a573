#include "unit_atlas/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "unit_atlas/errors.hpp"

namespace uatlas {

using nlohmann::json;

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument("no separator");
    std::size_t used_s = 0, used_m = 0;
    const std::string s_text = text.substr(0, x), m_text = text.substr(x + 1);
    const long s = std::stol(s_text, &used_s);
    const long m = std::stol(m_text, &used_m);
    if (used_s != s_text.size() || used_m != m_text.size() || s < 1 || m < 1) throw std::invalid_argument("range");
    return {static_cast<std::size_t>(s), static_cast<std::size_t>(m)};
  } catch (const std::exception&) {
    throw ConfigError("grid", "expected SxM with S, M >= 1, got '" + text + "'");
  }
}

namespace {

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("wrong type: ") + e.what());
  }
}

std::size_t get_count(const json& j, const std::string& key) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(key, "expected a non-negative integer");
  return j.get<std::size_t>();
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      c.model = get_as<std::string>(value, key);
    } else if (key == "dataset") {
      c.dataset = get_as<std::string>(value, key);
    } else if (key == "out") {
      c.out = get_as<std::string>(value, key);
    } else if (key == "target_classes") {
      const json list = value.is_array() ? value : json::array({value});
      for (const auto& t : list) {
        if (t.is_string()) c.target_classes.push_back(t.get<std::string>());
        else if (t.is_number_integer() && t.get<long long>() >= 0) c.target_classes.push_back(std::to_string(t.get<long long>()));
        else throw ConfigError(key, "entries must be class names or indices");
      }
    } else if (key == "grid") {
      if (value.is_string()) {
        std::tie(c.strips, c.bands) = parse_grid(value.get<std::string>());
      } else if (value.is_array() && value.size() == 2) {
        c.strips = get_count(value[0], key);
        c.bands = get_count(value[1], key);
      } else {
        throw ConfigError(key, "expected \"SxM\" or [S, M]");
      }
    } else if (key == "magnitude_mode") {
      try {
        c.magnitude_mode = magnitude_mode_from_string(get_as<std::string>(value, key));
      } catch (const ValidationError& e) {
        throw ConfigError(key, e.what());
      }
    } else if (key == "comparison_subsample") {
      c.comparison_subsample = get_count(value, key);
    } else if (key == "probe") {
      if (!value.is_object()) throw ConfigError(key, "expected an object");
      for (const auto& [pkey, pvalue] : value.items()) {
        const std::string full = "probe." + pkey;
        if (pkey == "learning_rate") c.probe.learning_rate = get_as<double>(pvalue, full);
        else if (pkey == "iterations") c.probe.iterations = get_count(pvalue, full);
        else if (pkey == "l2") c.probe.l2 = get_as<double>(pvalue, full);
        else if (pkey == "train_fraction") c.probe.train_fraction = get_as<double>(pvalue, full);
        else throw ConfigError(full, "unknown key");
      }
    } else if (key == "seed") {
      c.seed = get_count(value, key);
    } else if (key == "workers") {
      c.workers = get_count(value, key);
    } else if (key == "all_class_deficit") {
      c.all_class_deficit = get_as<bool>(value, key);
    } else {
      throw ConfigError(key, "unknown key");
    }
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("", "config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["model"] = model;
  j["dataset"] = dataset;
  j["target_classes"] = target_classes;
  j["grid"] = {strips, bands};
  j["magnitude_mode"] = to_string(magnitude_mode);
  j["comparison_subsample"] = comparison_subsample;
  j["probe"] = {{"learning_rate", probe.learning_rate},
                {"iterations", probe.iterations},
                {"l2", probe.l2},
                {"train_fraction", probe.train_fraction}};
  j["seed"] = seed;
  j["all_class_deficit"] = all_class_deficit;
  return j;
}

void RunConfig::validate(bool check_paths) const {
  if (strips < 1 || bands < 1) throw ConfigError("grid", "dimensions must be >= 1");
  try {
    probe.validate();
  } catch (const ValidationError& e) {
    throw ConfigError("probe", e.what());
  }
  if (out.empty()) throw ConfigError("out", "an output directory is required");
  if (check_paths) {
    if (model.empty() || !std::filesystem::is_directory(model)) throw ConfigError("model", "no model directory at '" + model + "'");
    if (dataset.empty() || !std::filesystem::is_directory(dataset)) {
      throw ConfigError("dataset", "no dataset directory at '" + dataset + "'");
    }
  }
}

}  // namespace uatlas
