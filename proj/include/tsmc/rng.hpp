#ifndef TSMC_RNG_HPP_
#define TSMC_RNG_HPP_

#include <cstdint>
#include <span>
#include <string_view>

namespace tsmc {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a) ^ b);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

// Counter-based random stream. A stream is a pure function of its key; every
// draw is addressed by explicit counters, so results never depend on
// evaluation order or thread count. Sub-streams are derived by index or name.
class RngStream {
 public:
  RngStream() : key_(0) {}
  explicit RngStream(uint64_t key) : key_(key) {}

  RngStream sub(uint64_t index) const {
    return RngStream(detail::mix(key_, index));
  }
  RngStream sub(std::string_view name) const {
    return sub(detail::fnv1a(name));
  }
  RngStream sub(std::string_view name, uint64_t index) const {
    return sub(name).sub(index);
  }

  uint64_t bits(uint64_t counter) const { return detail::mix(key_, counter); }
  uint64_t bits(uint64_t a, uint64_t b) const {
    return detail::mix(key_, detail::mix(a, b));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform(uint64_t counter) const { return to_unit(bits(counter)); }
  double uniform(uint64_t a, uint64_t b) const { return to_unit(bits(a, b)); }

  // Uniform in [lo, hi).
  double uniform_range(uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(counter);
  }

  uint64_t key() const { return key_; }

 private:
  static double to_unit(uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  uint64_t key_;
};

}  // namespace tsmc

#endif  // TSMC_RNG_HPP_
