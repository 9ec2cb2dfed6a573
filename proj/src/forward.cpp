#include "unit_atlas/forward.hpp"

#include "unit_atlas/errors.hpp"
#include "unit_atlas/layers.hpp"

namespace uatlas {

namespace {

const Tensor& lookup(const ParamMap& params, const LayerSpec& layer, const char* role) {
  auto it = params.find(param_name(layer.id, role));
  if (it == params.end()) throw ModelValidationError("layer '" + layer.id + "' is missing parameter '" + role + "'");
  return it->second;
}

Tensor eval_layer(const LayerSpec& layer, const ParamMap& params, const Tensor& a, const Tensor* b) {
  switch (layer.kind) {
    case LayerKind::conv2d:
      return ops::conv2d(a, lookup(params, layer, "weight"), lookup(params, layer, "bias").data(),
                         {layer.stride, layer.padding}, layer.id);
    case LayerKind::dense:
      return ops::dense(a, lookup(params, layer, "weight"), lookup(params, layer, "bias").data(), layer.id);
    case LayerKind::relu: return ops::relu(a);
    case LayerKind::maxpool2d: return ops::maxpool2d(a, layer.kernel, layer.stride, layer.id);
    case LayerKind::batchnorm:
      return ops::batchnorm_infer(a,
                                  {lookup(params, layer, "gamma").data(), lookup(params, layer, "beta").data(),
                                   lookup(params, layer, "mean").data(), lookup(params, layer, "var").data(),
                                   layer.epsilon},
                                  layer.id);
    case LayerKind::residual_add: return ops::residual_add(a, *b, layer.id);
    case LayerKind::flatten: return ops::flatten(a);
    case LayerKind::softmax: return ops::softmax(a);
  }
  throw ModelValidationError("unhandled layer kind");
}

template <typename Sink>
void evaluate(const ModelGraph& model, const ParamMap& params, const Tensor& image, const AblationMask& mask,
              Sink&& sink) {
  if (image.shape() != model.input_shape()) {
    throw DimensionError("", "image shape " + shape_to_string(image.shape()) + " does not match model input " +
                                 shape_to_string(model.input_shape()));
  }
  model.validate_mask(mask);
  const auto& layers = model.layers();
  std::vector<Tensor> outputs(layers.size());
  // Remaining consumer count per layer, so intermediate buffers can be freed.
  std::vector<std::size_t> pending(layers.size(), 0);
  for (const auto& layer : layers) {
    for (const auto& in : layer.inputs) {
      if (in != kInputId) ++pending[model.layer_index(in)];
    }
  }
  auto fetch = [&](const std::string& id) -> const Tensor& {
    return id == kInputId ? image : outputs[model.layer_index(id)];
  };
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& layer = layers[li];
    const Tensor* b = layer.inputs.size() > 1 ? &fetch(layer.inputs[1]) : nullptr;
    Tensor out = eval_layer(layer, params, fetch(layer.inputs[0]), b);
    if (auto unit_layer = model.captured_unit_layer(layer.id)) {
      const auto units = mask.units_of(*unit_layer);
      if (!units.empty()) out = ops::zero_units(out, units, *unit_layer);
    }
    outputs[li] = std::move(out);
    if (sink(li, outputs[li])) {
      for (const auto& in : layer.inputs) {
        if (in == kInputId) continue;
        const std::size_t src = model.layer_index(in);
        if (--pending[src] == 0) outputs[src] = Tensor();
      }
    }
  }
}

}  // namespace

ForwardResult forward(const ModelGraph& model, const Tensor& image, const AblationMask& mask,
                      const std::set<std::string>& taps) {
  for (const auto& tap : taps) {
    if (!model.has_layer(tap)) throw ValidationError("tap refers to unknown layer '" + tap + "'");
  }
  ForwardResult result;
  const std::size_t last = model.layers().size() - 1;
  evaluate(model, model.params(), image, mask, [&](std::size_t li, const Tensor& out) {
    const auto& id = model.layers()[li].id;
    if (taps.count(id)) result.tapped.emplace(id, out);
    if (li == last) result.logits.assign(out.data().begin(), out.data().end());
    return true;
  });
  return result;
}

std::vector<Tensor> forward_trace(const ModelGraph& model, const ParamMap& params, const Tensor& image,
                                  const AblationMask& mask) {
  std::vector<Tensor> trace;
  trace.reserve(model.layers().size());
  evaluate(model, params, image, mask, [&](std::size_t, const Tensor& out) {
    trace.push_back(out);
    return true;
  });
  return trace;
}

std::vector<float> output_probabilities(const ModelGraph& model, const std::vector<float>& logits) {
  if (model.ends_in_softmax()) return logits;
  return ops::softmax(logits);
}

}  // namespace uatlas
