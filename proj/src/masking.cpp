#include "mptlml/masking.hpp"

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <numeric>

#include "mptlml/error.hpp"

namespace mptlml {

namespace {

void check_size(Index dim, Index masked) {
  if (dim < 1 || masked < 1 || masked > dim)
    throw Error(ErrorCode::InvalidMaskSize, "mask size " + std::to_string(masked) +
                                                " outside [1, " + std::to_string(dim) + "]");
}

std::vector<Index> complement(const std::vector<Index>& masked, Index dim) {
  std::vector<Index> rest;
  rest.reserve(static_cast<std::size_t>(dim) - masked.size());
  std::size_t k = 0;
  for (Index i = 0; i < dim; ++i) {
    if (k < masked.size() && masked[k] == i)
      ++k;
    else
      rest.push_back(i);
  }
  return rest;
}

}  // namespace

MaskPair MaskPair::from_masked(std::vector<Index> masked, Index dim) {
  check_size(dim, static_cast<Index>(masked.size()));
  std::sort(masked.begin(), masked.end());
  if (masked.front() < 0 || masked.back() >= dim ||
      std::adjacent_find(masked.begin(), masked.end()) != masked.end())
    throw Error(ErrorCode::InvalidMaskSize, "masked indices must be distinct and in range");
  MaskPair m;
  m.rest = complement(masked, dim);
  m.masked = std::move(masked);
  m.dim = dim;
  return m;
}

MaskPair MaskPair::full(Index dim) {
  check_size(dim, dim);
  MaskPair m;
  m.masked.resize(static_cast<std::size_t>(dim));
  std::iota(m.masked.begin(), m.masked.end(), Index{0});
  m.dim = dim;
  return m;
}

bool MaskPair::valid() const {
  if (masked.empty() || static_cast<Index>(masked.size() + rest.size()) != dim) return false;
  std::vector<char> seen(static_cast<std::size_t>(dim), 0);
  for (const auto* part : {&masked, &rest})
    for (Index i : *part) {
      if (i < 0 || i >= dim || seen[static_cast<std::size_t>(i)]) return false;
      seen[static_cast<std::size_t>(i)] = 1;
    }
  return std::is_sorted(masked.begin(), masked.end()) && std::is_sorted(rest.begin(), rest.end());
}

bool BigCount::fits_u64() const {
  using boost::multiprecision::cpp_int;
  return cpp_int(value) <= cpp_int(std::numeric_limits<std::uint64_t>::max());
}

std::uint64_t BigCount::to_u64() const {
  using boost::multiprecision::cpp_int;
  if (!fits_u64()) return std::numeric_limits<std::uint64_t>::max();
  return cpp_int(value).convert_to<std::uint64_t>();
}

MaskPair sample_mask(Index dim, Index masked, Stream& rng) {
  check_size(dim, masked);
  std::vector<Index> pool(static_cast<std::size_t>(dim));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < masked; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(dim - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(masked));
  return MaskPair::from_masked(std::move(pool), dim);
}

std::vector<MaskPair> enumerate_masks(Index dim, Index masked, std::uint64_t cap) {
  check_size(dim, masked);
  const BigCount count = count_masks(dim, masked);
  if (!count.fits_u64() || count.to_u64() > cap)
    throw Error(ErrorCode::EnumerationTooLarge,
                "binom(" + std::to_string(dim) + ", " + std::to_string(masked) + ") = " +
                    count.value + " exceeds enumeration cap " + std::to_string(cap));
  std::vector<MaskPair> out;
  out.reserve(count.to_u64());
  std::vector<Index> combo(static_cast<std::size_t>(masked));
  std::iota(combo.begin(), combo.end(), Index{0});
  const auto k = static_cast<Index>(masked);
  for (;;) {
    MaskPair m;
    m.masked = combo;
    m.rest = complement(combo, dim);
    m.dim = dim;
    out.push_back(std::move(m));
    Index i = k - 1;
    while (i >= 0 && combo[static_cast<std::size_t>(i)] == dim - k + i) --i;
    if (i < 0) break;
    ++combo[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < k; ++j)
      combo[static_cast<std::size_t>(j)] = combo[static_cast<std::size_t>(j - 1)] + 1;
  }
  return out;
}

BigCount count_masks(Index dim, Index masked) {
  if (dim < 0 || masked < 0 || masked > dim)
    throw Error(ErrorCode::InvalidMaskSize, "count_masks requires 0 <= M <= D");
  using boost::multiprecision::cpp_int;
  const Index k = std::min(masked, dim - masked);
  cpp_int c = 1;
  for (Index i = 1; i <= k; ++i) c = c * (dim - k + i) / i;  // exact at every step
  BigCount out;
  out.value = c.str();
  if (c < cpp_int(1'000'000'000'000'000LL)) {
    out.log10 = std::log10(c.convert_to<double>());
  } else {
    out.log10 = (std::lgamma(static_cast<double>(dim) + 1.0) -
                 std::lgamma(static_cast<double>(masked) + 1.0) -
                 std::lgamma(static_cast<double>(dim - masked) + 1.0)) /
                std::log(10.0);
  }
  return out;
}

Index sample_mask_size(Index dim, Stream& rng) {
  if (dim < 1) throw Error(ErrorCode::InvalidMaskSize, "dimension must be positive");
  return 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(dim)));
}

Index mask_size_for_rate(double rate, Index dim) {
  if (!(rate > 0.0 && rate <= 1.0))
    throw Error(ErrorCode::InvalidMaskSize, "masking rate must lie in (0, 1]");
  // Small epsilon so that e.g. 0.2 * 10 lands on 2 despite rounding.
  const auto m = static_cast<Index>(std::floor(rate * static_cast<double>(dim) + 1e-9));
  return std::clamp<Index>(m, 1, dim);
}

std::vector<Index> percent_grid(Index dim) {
  std::vector<Index> sizes;
  for (int pct = 1; pct <= 99; ++pct) {
    const auto m = std::clamp<Index>(
        static_cast<Index>(std::llround(pct * static_cast<double>(dim) / 100.0)), 1, dim);
    if (sizes.empty() || sizes.back() != m) sizes.push_back(m);
  }
  return sizes;
}

}  // namespace mptlml
