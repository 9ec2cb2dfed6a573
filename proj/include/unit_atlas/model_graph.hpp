#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "unit_atlas/tensor.hpp"

namespace uatlas {

enum class LayerKind { conv2d, dense, relu, maxpool2d, batchnorm, residual_add, flatten, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

// Reserved layer id that refers to the model input.
inline constexpr const char* kInputId = "input";

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  std::size_t units = 0;    // conv2d output channels, dense output features
  std::size_t kernel = 0;   // conv2d kernel size, maxpool2d window
  std::size_t stride = 1;   // conv2d, maxpool2d
  std::size_t padding = 0;  // conv2d
  float epsilon = 1e-5f;    // batchnorm

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Named parameter tensors, keyed "<layer>.<role>" (weight, bias, gamma, beta,
// mean, var).
using ParamMap = std::map<std::string, Tensor>;

// Parameter roles each layer kind owns, in serialization order.
std::vector<std::string> param_roles(LayerKind kind);
std::string param_name(const std::string& layer_id, const std::string& role);

struct UnitId {
  std::string layer;
  std::size_t index = 0;

  friend auto operator<=>(const UnitId&, const UnitId&) = default;
  friend bool operator==(const UnitId&, const UnitId&) = default;
};

// Units to zero at their capture point during a forward pass.
struct AblationMask {
  std::set<UnitId> entries;

  bool empty() const noexcept { return entries.empty(); }
  void add(std::string layer, std::size_t index) { entries.insert({std::move(layer), index}); }
  // Indices masked within one layer, ascending.
  std::vector<std::size_t> units_of(const std::string& layer) const;
};

// Layer DAG plus weights. Layers are listed in evaluation order and may only
// consume the model input or earlier layers; the last layer is the output.
// Validated at construction and immutable afterwards.
class ModelGraph {
 public:
  ModelGraph(Shape input_shape, std::vector<LayerSpec> layers, ParamMap params);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const ParamMap& params() const noexcept { return params_; }
  const Tensor& param(const std::string& name) const;

  std::size_t layer_index(const std::string& id) const;
  bool has_layer(const std::string& id) const { return index_.count(id) != 0; }
  const Shape& output_shape(const std::string& id) const;
  const std::string& output_layer() const { return layers_.back().id; }
  std::size_t n_outputs() const;
  // True when the final layer already produces probabilities.
  bool ends_in_softmax() const { return layers_.back().kind == LayerKind::softmax; }

  // Maskable layers (conv2d, dense) in evaluation order.
  const std::vector<std::string>& maskable_layers() const noexcept { return maskable_; }
  bool is_maskable(const std::string& id) const;
  std::size_t unit_count(const std::string& maskable_id) const;
  // Layer whose output is the unit's outgoing activation: the first relu
  // after the conv/dense (through any batchnorm), else the last batchnorm in
  // that chain, else the layer itself.
  const std::string& capture_layer(const std::string& maskable_id) const;
  // Maskable layer captured at `layer_id`, if any.
  std::optional<std::string> captured_unit_layer(const std::string& layer_id) const;

  std::vector<std::string> consumers(const std::string& id) const;

  void validate_mask(const struct AblationMask& mask) const;

  // Copy of this graph with a replacement parameter set (revalidated).
  ModelGraph with_params(ParamMap params) const;

 private:
  void validate();

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  ParamMap params_;
  std::map<std::string, std::size_t> index_;
  std::vector<Shape> shapes_;
  std::vector<std::string> maskable_;
  std::map<std::string, std::string> capture_of_;
  std::map<std::string, std::string> captured_by_;
};

}  // namespace uatlas
