#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mptlml/rng.hpp"

namespace mptlml {

using Index = std::int64_t;

// Partition of {0..dim-1} into masked and rest indices, both ascending.
// Indices are 0-based internally; file formats and docs use 1-based tokens.
struct MaskPair {
  std::vector<Index> masked;
  std::vector<Index> rest;
  Index dim = 0;

  // Builds the complement of `masked`. Throws InvalidMaskSize for an empty,
  // out-of-range or duplicated index set.
  static MaskPair from_masked(std::vector<Index> masked, Index dim);
  // Everything masked, nothing conditioned on.
  static MaskPair full(Index dim);

  std::size_t size() const { return masked.size(); }
  bool valid() const;
  bool operator==(const MaskPair&) const = default;
};

// Exact binomial coefficient as decimal digits plus its log10.
struct BigCount {
  std::string value;
  double log10 = 0.0;

  // Saturates at UINT64_MAX when the value does not fit.
  std::uint64_t to_u64() const;
  bool fits_u64() const;
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Uniform M-subset by partial Fisher-Yates.
MaskPair sample_mask(Index dim, Index masked, Stream& rng);

// All binom(D, M) subsets in lexicographic order.
std::vector<MaskPair> enumerate_masks(Index dim, Index masked,
                                      std::uint64_t cap = kDefaultEnumerationCap);

BigCount count_masks(Index dim, Index masked);

// Uniform on {1..D}.
Index sample_mask_size(Index dim, Stream& rng);

// Fixed-rate mask size: floor(rate * D), at least 1 and at most D.
Index mask_size_for_rate(double rate, Index dim);

// Sizes for rates 1%..99%, rounded to nearest, clamped to [1, D], deduplicated.
std::vector<Index> percent_grid(Index dim);

}  // namespace mptlml
