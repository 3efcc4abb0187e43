#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace fff {

// Counter-based splittable RNG. Each stream is (key, counter); draws advance
// the counter through a splitmix64-style mixer, and split() derives a child
// key from the parent state. Streams are value types: copying one and drawing
// from both gives identical sequences, which is what makes runs replayable
// from a manifest regardless of evaluation order elsewhere.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ kKeySalt)), ctr_(0) {}

  // Child stream: deterministic function of (key, label), independent of the
  // parent's counter so splits taken before or after draws coincide.
  RngStream split(std::uint64_t label) const {
    RngStream child;
    child.key_ = mix(key_ ^ mix(label + kSplitSalt));
    child.ctr_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

  // Uniform on [0, 1): 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the spare is cached so consecutive draws
  // cost one transcendental pair per two values.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard u1 = 0: log(0) would produce inf.
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  static constexpr std::uint64_t kKeySalt = 0x8f1bbcdcbfa53e0bull;
  static constexpr std::uint64_t kSplitSalt = 0xd6e8feb86659fd93ull;

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t ctr_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fff
