#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace tth {

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// Seed for a named sub-stream of a root seed ("corpus", "train", "attack", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) noexcept;

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the conversions below are done here
// because std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  std::size_t below(std::size_t n);      // [0, n)
  double normal();                       // N(0, 1)
  std::size_t weighted(std::span<const double> weights);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tth
