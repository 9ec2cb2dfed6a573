#pragma once

#include <cstdint>
#include <string_view>

namespace uatlas {

// Counter-based random stream: value i of stream (seed, name) is a pure
// function of those three inputs, so draws never depend on allocation or
// scheduling order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view stream);
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t bits(std::uint64_t counter) const noexcept;
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t counter) const noexcept;
  double uniform(std::uint64_t counter, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(counter);
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

// Sequential convenience wrapper over a CounterRng.
class RngStream {
 public:
  explicit RngStream(CounterRng rng) : rng_(rng) {}
  std::uint64_t next_bits() noexcept { return rng_.bits(counter_++); }
  double next_uniform() noexcept { return rng_.uniform(counter_++); }
  double next_uniform(double lo, double hi) noexcept { return rng_.uniform(counter_++, lo, hi); }
  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) noexcept;

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

// Fisher-Yates shuffle driven by a stream.
template <typename It>
void shuffle(It first, It last, RngStream& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.next_below(i);
    using std::swap;
    swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
  }
}

}  // namespace uatlas
