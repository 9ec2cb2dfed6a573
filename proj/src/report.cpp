#include "unit_atlas/report.hpp"

#include <cctype>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "unit_atlas/errors.hpp"

namespace uatlas {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Metric metric) { return metric == Metric::probe ? "probe" : "deficit"; }

std::optional<double> metric_value(const CellResult& result, Metric metric) {
  return metric == Metric::probe ? result.probe_accuracy : result.mean_rank_deficit;
}

namespace {

constexpr std::array<Metric, 2> kMetrics{Metric::deficit, Metric::probe};

std::string class_label(std::size_t target, const std::vector<std::string>& names) {
  return target < names.size() ? names[target] : std::to_string(target);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Viridis sampled at five stops, linearly interpolated.
std::string color_for(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                               {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x",
                static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

std::string short_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

json results_to_json(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                     const json& metadata) {
  json root;
  root["metadata"] = metadata;
  root["cells"] = json::array();
  for (const auto& r : results) {
    json c;
    c["target_class"] = r.target_class;
    c["class_name"] = class_label(r.target_class, class_names);
    c["layer"] = r.layer;
    c["strip"] = r.strip;
    c["band"] = r.band;
    c["n_units"] = r.n_units;
    c["mean_rank_deficit"] = optional_json(r.mean_rank_deficit);
    if (r.mean_rank_deficit_all_classes) c["mean_rank_deficit_all_classes"] = *r.mean_rank_deficit_all_classes;
    c["probe_accuracy"] = optional_json(r.probe_accuracy);
    c["n_images_ablated"] = r.n_images_ablated;
    c["n_images_probed"] = r.n_images_probed;
    if (r.probe) {
      const auto& p = *r.probe;
      c["probe"] = {{"iterations", p.iterations},   {"final_loss", p.final_loss},
                    {"learning_rate", p.learning_rate}, {"lr_fallbacks", p.lr_fallbacks},
                    {"dropped_columns", p.dropped},  {"degenerate", p.degenerate},
                    {"n_train", p.n_train},          {"seed", p.seed}};
    } else {
      c["probe"] = nullptr;
    }
    c["warnings"] = r.warnings;
    root["cells"].push_back(std::move(c));
  }
  return root;
}

std::vector<CellResult> results_from_json(const json& j) {
  std::vector<CellResult> results;
  try {
    for (const auto& c : j.at("cells")) {
      CellResult r;
      r.target_class = c.at("target_class").get<std::size_t>();
      r.layer = c.at("layer").get<std::string>();
      r.strip = c.at("strip").get<std::size_t>();
      r.band = c.at("band").get<std::size_t>();
      r.n_units = c.at("n_units").get<std::size_t>();
      r.mean_rank_deficit = optional_from(c, "mean_rank_deficit");
      r.mean_rank_deficit_all_classes = optional_from(c, "mean_rank_deficit_all_classes");
      r.probe_accuracy = optional_from(c, "probe_accuracy");
      r.n_images_ablated = c.at("n_images_ablated").get<std::size_t>();
      r.n_images_probed = c.at("n_images_probed").get<std::size_t>();
      if (c.contains("probe") && !c.at("probe").is_null()) {
        const auto& p = c.at("probe");
        ProbeModel m;
        m.iterations = p.at("iterations").get<std::size_t>();
        m.final_loss = p.at("final_loss").get<double>();
        m.learning_rate = p.at("learning_rate").get<double>();
        m.lr_fallbacks = p.at("lr_fallbacks").get<std::size_t>();
        m.dropped = p.at("dropped_columns").get<std::vector<std::size_t>>();
        m.degenerate = p.at("degenerate").get<bool>();
        m.n_train = p.at("n_train").get<std::size_t>();
        m.seed = p.at("seed").get<std::uint64_t>();
        r.probe = std::move(m);
      }
      r.warnings = c.at("warnings").get<std::vector<std::string>>();
      results.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed results: " + std::string(e.what()));
  }
  return results;
}

std::string report_csv(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                       std::size_t, std::size_t) {
  std::string out = "class,layer,strip,band,metric,value\n";
  for (const auto& r : results) {
    for (Metric m : kMetrics) {
      const auto v = metric_value(r, m);
      out += csv_field(class_label(r.target_class, class_names)) + "," + csv_field(r.layer) + "," +
             std::to_string(r.strip) + "," + std::to_string(r.band) + "," + to_string(m) + "," +
             (v ? format_double(*v) : "null") + "\n";
    }
  }
  return out;
}

std::vector<CsvRow> parse_report_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "class,layer,strip,band,metric,value") {
    throw ValidationError("report CSV header is missing or unexpected");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw ValidationError("report CSV row has " + std::to_string(f.size()) + " fields");
    CsvRow row{f[0], f[1], std::stoul(f[2]), std::stoul(f[3]), f[4], std::nullopt};
    if (f[5] != "null") row.value = std::strtod(f[5].c_str(), nullptr);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_svg(const GridPicture& pic) {
  constexpr int cell = 56, left = 70, top = 40, legend_w = 18;
  const int grid_w = static_cast<int>(pic.bands) * cell;
  const int grid_h = static_cast<int>(pic.strips) * cell;
  const int width = left + grid_w + 90;
  const int height = top + grid_h + 50;
  const bool degenerate = !(pic.hi > pic.lo);

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" style=\"fill:#ffffff\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" style=\"font-family:sans-serif;font-size:13px\">" << svg_escape(pic.title)
     << "</text>\n";
  for (std::size_t s = 0; s < pic.strips; ++s) {
    const int y = top + static_cast<int>(pic.strips - 1 - s) * cell;
    for (std::size_t b = 0; b < pic.bands; ++b) {
      const int x = left + static_cast<int>(b) * cell;
      const auto& v = pic.values[s * pic.bands + b];
      if (v) {
        const double t = degenerate ? 0.5 : (*v - pic.lo) / (pic.hi - pic.lo);
        os << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
           << "\" style=\"fill:" << color_for(t) << ";stroke:#ffffff\"><title>strip " << s << " band " << b << ": "
           << format_double(*v) << "</title></rect>\n";
        os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
           << "\" style=\"font-family:sans-serif;font-size:10px;text-anchor:middle;fill:"
           << (t > 0.6 ? "#000000" : "#ffffff") << "\">" << short_value(*v) << "</text>\n";
      } else {
        os << "<rect class=\"cell null\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\""
           << cell << "\" style=\"fill:#d0d0d0;stroke:#ffffff\"><title>strip " << s << " band " << b
           << ": null</title></rect>\n";
        os << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
           << "\" style=\"font-family:sans-serif;font-size:10px;text-anchor:middle\">null</text>\n";
      }
    }
  }
  os << "<text x=\"" << left + grid_w / 2 << "\" y=\"" << top + grid_h + 20
     << "\" style=\"font-family:sans-serif;font-size:11px;text-anchor:middle\">magnitude &#8594;</text>\n";
  os << "<text x=\"" << left - 12 << "\" y=\"" << top + grid_h / 2 << "\" transform=\"rotate(-90 " << left - 12 << ' '
     << top + grid_h / 2 << ")\" style=\"font-family:sans-serif;font-size:11px;text-anchor:middle\">selectivity &#8594;</text>\n";

  const int lx = left + grid_w + 14;
  constexpr int steps = 16;
  for (int i = 0; i < steps; ++i) {
    const double t = degenerate ? 0.5 : static_cast<double>(steps - 1 - i) / (steps - 1);
    os << "<rect class=\"legend\" x=\"" << lx << "\" y=\"" << top + i * grid_h / steps << "\" width=\"" << legend_w
       << "\" height=\"" << grid_h / steps + 1 << "\" style=\"fill:" << color_for(t) << "\"/>\n";
  }
  const std::string hi = degenerate ? short_value(pic.lo) + " (degenerate range)" : short_value(pic.hi);
  os << "<text x=\"" << lx + legend_w + 4 << "\" y=\"" << top + 10 << "\" style=\"font-family:sans-serif;font-size:10px\">"
     << hi << "</text>\n";
  if (!degenerate) {
    os << "<text x=\"" << lx + legend_w + 4 << "\" y=\"" << top + grid_h
       << "\" style=\"font-family:sans-serif;font-size:10px\">" << short_value(pic.lo) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

ReportSummary emit_grid_report(const std::vector<CellResult>& results, const std::vector<std::string>& class_names,
                               std::size_t strips, std::size_t bands, const fs::path& out_dir) {
  if (strips == 0 || bands == 0) throw ValidationError("grid dimensions must be >= 1");
  ReportSummary summary;
  const fs::path csv_path = out_dir / "report.csv";
  write_text(csv_path, report_csv(results, class_names, strips, bands));
  summary.files.push_back(csv_path);

  std::vector<std::size_t> classes;
  std::vector<std::string> layers;
  for (const auto& r : results) {
    if (std::find(classes.begin(), classes.end(), r.target_class) == classes.end()) classes.push_back(r.target_class);
    if (std::find(layers.begin(), layers.end(), r.layer) == layers.end()) layers.push_back(r.layer);
  }

  using Grid = std::vector<std::optional<double>>;
  const std::size_t n_cells = strips * bands;
  for (Metric metric : kMetrics) {
    const std::string mname = to_string(metric);
    // (class, layer) -> grid
    std::map<std::pair<std::size_t, std::string>, Grid> grids;
    for (const auto& r : results) {
      auto& g = grids[{r.target_class, r.layer}];
      if (g.empty()) g.assign(n_cells, std::nullopt);
      if (r.strip >= strips || r.band >= bands) {
        summary.warnings.push_back("cell outside the " + std::to_string(strips) + "x" + std::to_string(bands) +
                                   " grid ignored");
        continue;
      }
      g[r.strip * bands + r.band] = metric_value(r, metric);
    }

    auto average = [&](const std::vector<const Grid*>& parts) {
      Grid avg(n_cells, std::nullopt);
      for (std::size_t i = 0; i < n_cells; ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const Grid* g : parts) {
          if ((*g)[i]) sum += *(*g)[i], ++n;
        }
        if (n) avg[i] = sum / static_cast<double>(n);
      }
      return avg;
    };
    auto range_of = [](const std::vector<const Grid*>& parts) {
      double lo = 0.0, hi = 0.0;
      bool any = false;
      for (const Grid* g : parts) {
        for (const auto& v : *g) {
          if (!v) continue;
          lo = any ? std::min(lo, *v) : *v;
          hi = any ? std::max(hi, *v) : *v;
          any = true;
        }
      }
      return std::pair{lo, hi};
    };
    auto emit = [&](const std::string& file, const std::string& title, const Grid& values, std::pair<double, double> range) {
      GridPicture pic{title, strips, bands, values, range.first, range.second};
      const fs::path path = out_dir / "svg" / mname / file;
      write_text(path, render_svg(pic));
      summary.files.push_back(path);
    };

    for (auto c : classes) {
      std::vector<const Grid*> per_class;
      for (const auto& layer : layers) {
        auto it = grids.find({c, layer});
        if (it == grids.end()) continue;
        per_class.push_back(&it->second);
        const auto missing = std::count(it->second.begin(), it->second.end(), std::nullopt);
        if (missing > 0) {
          summary.warnings.push_back(mname + " grid " + class_label(c, class_names) + "/" + layer + " has " +
                                     std::to_string(missing) + " null cells");
        }
      }
      const auto range = range_of(per_class);
      for (const auto& layer : layers) {
        auto it = grids.find({c, layer});
        if (it == grids.end()) continue;
        emit(sanitize(class_label(c, class_names)) + "__" + sanitize(layer) + ".svg",
             mname + ": " + class_label(c, class_names) + " / " + layer, it->second, range);
      }
      emit(sanitize(class_label(c, class_names)) + "__avg_layers.svg",
           mname + ": " + class_label(c, class_names) + " / average over layers", average(per_class), range);
    }

    std::vector<Grid> layer_avgs;
    layer_avgs.reserve(layers.size());
    for (const auto& layer : layers) {
      std::vector<const Grid*> parts;
      for (auto c : classes) {
        auto it = grids.find({c, layer});
        if (it != grids.end()) parts.push_back(&it->second);
      }
      layer_avgs.push_back(average(parts));
    }
    std::vector<const Grid*> avg_ptrs;
    for (const auto& g : layer_avgs) avg_ptrs.push_back(&g);
    const auto avg_range = range_of(avg_ptrs);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      emit("avg_classes__" + sanitize(layers[i]) + ".svg", mname + ": average over classes / " + layers[i],
           layer_avgs[i], avg_range);
    }
  }
  return summary;
}

}  // namespace uatlas
