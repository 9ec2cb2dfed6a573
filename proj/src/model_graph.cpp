#include "unit_atlas/model_graph.hpp"

#include <algorithm>

#include "unit_atlas/errors.hpp"

namespace uatlas {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::residual_add: return "residual_add";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax: return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  static const std::map<std::string, LayerKind> kinds = {
      {"conv2d", LayerKind::conv2d},       {"dense", LayerKind::dense},
      {"relu", LayerKind::relu},           {"maxpool2d", LayerKind::maxpool2d},
      {"batchnorm", LayerKind::batchnorm}, {"residual_add", LayerKind::residual_add},
      {"flatten", LayerKind::flatten},     {"softmax", LayerKind::softmax}};
  auto it = kinds.find(name);
  if (it == kinds.end()) throw ModelValidationError("unknown layer kind '" + name + "'");
  return it->second;
}

std::vector<std::string> param_roles(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d:
    case LayerKind::dense: return {"weight", "bias"};
    case LayerKind::batchnorm: return {"gamma", "beta", "mean", "var"};
    default: return {};
  }
}

std::string param_name(const std::string& layer_id, const std::string& role) { return layer_id + "." + role; }

std::vector<std::size_t> AblationMask::units_of(const std::string& layer) const {
  std::vector<std::size_t> out;
  for (auto it = entries.lower_bound(UnitId{layer, 0}); it != entries.end() && it->layer == layer; ++it) {
    out.push_back(it->index);
  }
  return out;
}

ModelGraph::ModelGraph(Shape input_shape, std::vector<LayerSpec> layers, ParamMap params)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), params_(std::move(params)) {
  validate();
}

namespace {

void expect_param(const ParamMap& params, const LayerSpec& layer, const std::string& role, const Shape& shape) {
  auto it = params.find(param_name(layer.id, role));
  if (it == params.end()) {
    throw ModelValidationError("layer '" + layer.id + "' is missing parameter '" + role + "'");
  }
  if (it->second.shape() != shape) {
    throw DimensionError(layer.id, "parameter '" + role + "' has shape " + shape_to_string(it->second.shape()) +
                                       ", expected " + shape_to_string(shape));
  }
  if (!it->second.all_finite()) {
    throw ModelValidationError("layer '" + layer.id + "' parameter '" + role + "' has non-finite values");
  }
}

}  // namespace

void ModelGraph::validate() {
  if (input_shape_.empty() || shape_product(input_shape_) == 0) {
    throw ModelValidationError("model input shape must be non-empty with positive dims");
  }
  if (layers_.empty()) throw ModelValidationError("model has no layers");

  std::size_t expected_params = 0;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& layer = layers_[li];
    if (layer.id.empty() || layer.id == kInputId) {
      throw ModelValidationError("invalid layer id '" + layer.id + "'");
    }
    if (index_.count(layer.id)) throw ModelValidationError("duplicate layer id '" + layer.id + "'");

    const std::size_t arity = layer.kind == LayerKind::residual_add ? 2 : 1;
    if (layer.inputs.size() != arity) {
      throw ModelValidationError("layer '" + layer.id + "' (" + to_string(layer.kind) + ") needs " +
                                 std::to_string(arity) + " inputs, has " + std::to_string(layer.inputs.size()));
    }
    std::vector<Shape> in_shapes;
    for (const auto& in : layer.inputs) {
      if (in == kInputId) {
        in_shapes.push_back(input_shape_);
        continue;
      }
      auto it = index_.find(in);
      if (it == index_.end()) {
        throw ModelValidationError("layer '" + layer.id + "' consumes unknown or later layer '" + in + "'");
      }
      in_shapes.push_back(shapes_[it->second]);
    }
    const Shape& in = in_shapes.front();

    Shape out;
    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (in.size() != 3) throw DimensionError(layer.id, "conv2d input must be [ch,y,x], got " + shape_to_string(in));
        if (layer.units == 0 || layer.kernel == 0 || layer.stride == 0) {
          throw ModelValidationError("layer '" + layer.id + "' needs positive units, kernel and stride");
        }
        const std::size_t py = in[1] + 2 * layer.padding, px = in[2] + 2 * layer.padding;
        if (layer.kernel > py || layer.kernel > px) throw DimensionError(layer.id, "kernel larger than padded input");
        expect_param(params_, layer, "weight", {layer.units, in[0], layer.kernel, layer.kernel});
        expect_param(params_, layer, "bias", {layer.units});
        out = {layer.units, (py - layer.kernel) / layer.stride + 1, (px - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::dense: {
        if (in.size() != 1) throw DimensionError(layer.id, "dense input must be a vector, got " + shape_to_string(in));
        if (layer.units == 0) throw ModelValidationError("layer '" + layer.id + "' needs positive units");
        expect_param(params_, layer, "weight", {layer.units, in[0]});
        expect_param(params_, layer, "bias", {layer.units});
        out = {layer.units};
        break;
      }
      case LayerKind::relu:
        out = in;
        break;
      case LayerKind::maxpool2d: {
        if (in.size() != 3) throw DimensionError(layer.id, "maxpool2d input must be [ch,y,x], got " + shape_to_string(in));
        if (layer.kernel == 0 || layer.stride == 0) throw ModelValidationError("layer '" + layer.id + "' needs positive window and stride");
        if (layer.kernel > in[1] || layer.kernel > in[2]) throw DimensionError(layer.id, "pool window larger than input");
        out = {in[0], (in[1] - layer.kernel) / layer.stride + 1, (in[2] - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::batchnorm: {
        for (const char* role : {"gamma", "beta", "mean", "var"}) expect_param(params_, layer, role, {in[0]});
        for (float v : params_.at(param_name(layer.id, "var")).data()) {
          if (!(v >= 0.0f) || !(static_cast<double>(v) + layer.epsilon > 0.0)) {
            throw ModelValidationError("layer '" + layer.id + "' has invalid variance");
          }
        }
        out = in;
        break;
      }
      case LayerKind::residual_add:
        if (in_shapes[0] != in_shapes[1]) {
          throw DimensionError(layer.id, "residual_add inputs differ: " + shape_to_string(in_shapes[0]) + " vs " +
                                             shape_to_string(in_shapes[1]));
        }
        out = in;
        break;
      case LayerKind::flatten:
        out = {shape_product(in)};
        break;
      case LayerKind::softmax:
        if (in.size() != 1) throw DimensionError(layer.id, "softmax input must be a vector");
        out = in;
        break;
    }
    expected_params += param_roles(layer.kind).size();
    index_[layer.id] = li;
    shapes_.push_back(std::move(out));
  }
  if (shapes_.back().size() != 1) {
    throw ModelValidationError("output layer '" + layers_.back().id + "' must produce a vector");
  }
  if (params_.size() != expected_params) {
    throw ModelValidationError("model carries parameters that belong to no layer");
  }

  for (const auto& layer : layers_) {
    if (layer.kind != LayerKind::conv2d && layer.kind != LayerKind::dense) continue;
    maskable_.push_back(layer.id);
    std::string capture = layer.id;
    std::string cursor = layer.id;
    for (;;) {
      auto next = consumers(cursor);
      if (next.size() != 1) break;
      const auto& nl = layers_[index_.at(next.front())];
      if (nl.kind == LayerKind::batchnorm) {
        cursor = capture = nl.id;
        continue;
      }
      if (nl.kind == LayerKind::relu) capture = nl.id;
      break;
    }
    capture_of_[layer.id] = capture;
    captured_by_[capture] = layer.id;
  }
}

const Tensor& ModelGraph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ModelValidationError("no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelGraph::layer_index(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ModelValidationError("no layer '" + id + "'");
  return it->second;
}

const Shape& ModelGraph::output_shape(const std::string& id) const { return shapes_[layer_index(id)]; }

std::size_t ModelGraph::n_outputs() const { return shapes_.back()[0]; }

bool ModelGraph::is_maskable(const std::string& id) const { return capture_of_.count(id) != 0; }

std::size_t ModelGraph::unit_count(const std::string& maskable_id) const {
  if (!is_maskable(maskable_id)) throw ValidationError("layer '" + maskable_id + "' is not maskable");
  return layers_[layer_index(maskable_id)].units;
}

const std::string& ModelGraph::capture_layer(const std::string& maskable_id) const {
  auto it = capture_of_.find(maskable_id);
  if (it == capture_of_.end()) throw ValidationError("layer '" + maskable_id + "' is not maskable");
  return it->second;
}

std::optional<std::string> ModelGraph::captured_unit_layer(const std::string& layer_id) const {
  auto it = captured_by_.find(layer_id);
  if (it == captured_by_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> ModelGraph::consumers(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& layer : layers_) {
    if (std::find(layer.inputs.begin(), layer.inputs.end(), id) != layer.inputs.end()) out.push_back(layer.id);
  }
  return out;
}

void ModelGraph::validate_mask(const AblationMask& mask) const {
  for (const auto& unit : mask.entries) {
    if (!is_maskable(unit.layer)) {
      throw ValidationError("mask refers to '" + unit.layer + "', which is not a conv2d/dense layer of this model");
    }
    if (unit.index >= unit_count(unit.layer)) {
      throw ValidationError("mask unit " + std::to_string(unit.index) + " out of range for layer '" + unit.layer +
                            "' with " + std::to_string(unit_count(unit.layer)) + " units");
    }
  }
}

ModelGraph ModelGraph::with_params(ParamMap params) const { return ModelGraph(input_shape_, layers_, std::move(params)); }

}  // namespace uatlas
