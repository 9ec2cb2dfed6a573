#pragma once

#include <cstddef>
#include <span>

namespace uatlas {

// 1-based rank of class `correct` when classes are ordered by descending
// probability: 1 + #classes strictly above it + #tied classes with a lower
// index. Throws ValidationError for an out-of-range class.
std::size_t class_rank(std::span<const float> probabilities, std::size_t correct);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const float> values);
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace uatlas
