#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "unit_atlas/model_graph.hpp"
#include "unit_atlas/tensor.hpp"

namespace uatlas {

struct ForwardResult {
  std::vector<float> logits;
  // Post-mask outputs of the requested layers.
  std::map<std::string, Tensor> tapped;
};

// Evaluates the graph in layer order. Masked units are zeroed at their
// capture layer, so every downstream consumer (and every tap) sees the
// ablated value. The mask is validated before any compute.
ForwardResult forward(const ModelGraph& model, const Tensor& image, const AblationMask& mask = {},
                      const std::set<std::string>& taps = {});

// Outputs of every layer, in layer order, evaluated with an external
// parameter set that must match the graph's tensor shapes. Used by the
// trainer, which owns mutable weights.
std::vector<Tensor> forward_trace(const ModelGraph& model, const ParamMap& params,
                                  const Tensor& image, const AblationMask& mask = {});

// Class probabilities for a forward result: the output itself when the graph
// ends in softmax, otherwise softmax of the logits.
std::vector<float> output_probabilities(const ModelGraph& model, const std::vector<float>& logits);

}  // namespace uatlas
