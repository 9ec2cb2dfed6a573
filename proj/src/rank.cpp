#include "unit_atlas/rank.hpp"

#include <string>

#include "unit_atlas/errors.hpp"

namespace uatlas {

std::size_t class_rank(std::span<const float> probabilities, std::size_t correct) {
  if (correct >= probabilities.size()) {
    throw ValidationError("class " + std::to_string(correct) + " out of range for " +
                          std::to_string(probabilities.size()) + " outputs");
  }
  const float p = probabilities[correct];
  std::size_t rank = 1;
  for (std::size_t c = 0; c < probabilities.size(); ++c) {
    if (probabilities[c] > p || (probabilities[c] == p && c < correct)) ++rank;
  }
  return rank;
}

namespace {

template <typename T>
std::size_t argmax_impl(std::span<const T> values) {
  if (values.empty()) throw ValidationError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace

std::size_t argmax_lowest(std::span<const float> values) { return argmax_impl(values); }
std::size_t argmax_lowest(std::span<const double> values) { return argmax_impl(values); }

}  // namespace uatlas
