#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mptlml {

// Counter-based random stream. A stream is identified by a 64-bit key; the
// n-th output is a pure function of (key, n), so any draw can be reproduced
// without replaying the draws before it. Child streams are derived by hashing
// the parent key with an integer path, e.g. (observation, size, mask index).
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc908ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  Stream child(std::initializer_list<std::uint64_t> path) const {
    Stream s;
    std::uint64_t k = key_;
    for (auto p : path) k = mix(k ^ mix(p + 0x632be59bd9b4e019ULL));
    s.key_ = k;
    return s;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Purpose tags for child streams.
namespace tag {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kParams = 2;
inline constexpr std::uint64_t kMask = 3;
inline constexpr std::uint64_t kMaskSize = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kReplicate = 6;
inline constexpr std::uint64_t kBias = 7;
}  // namespace tag

}  // namespace mptlml
