#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mptlml/error.hpp"
#include "mptlml/masking.hpp"

using namespace mptlml;

TEST_SUITE("masking") {
  TEST_CASE("sample_mask edge cases") {
    Stream rng(1);
    const auto one = sample_mask(1, 1, rng);
    CHECK(one.masked == std::vector<Index>{0});
    CHECK(one.rest.empty());
    for (int i = 0; i < 50; ++i) {
      const auto all = sample_mask(5, 5, rng);
      CHECK(all.rest.empty());
      CHECK(all.valid());
    }
    CHECK_THROWS_AS(sample_mask(5, 0, rng), Error);
    CHECK_THROWS_AS(sample_mask(5, 6, rng), Error);
    try {
      sample_mask(3, 4, rng);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidMaskSize);
    }
  }

  TEST_CASE("inclusion probability is M/D") {
    Stream rng(2);
    std::vector<int> hits(5, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
      for (Index j : sample_mask(5, 2, rng).masked) ++hits[static_cast<std::size_t>(j)];
    for (int h : hits) CHECK(std::abs(h / double(draws) - 0.4) < 0.01);
  }

  TEST_CASE("sampling is a pure function of the stream") {
    Stream a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_mask(12, 5, a) == sample_mask(12, 5, b));
    const Stream base(3);
    Stream c1 = base.child({1, 2}), c2 = base.child({1, 2}), c3 = base.child({2, 1});
    CHECK(c1() == c2());
    CHECK(c1() != c3());
  }

  TEST_CASE("enumerate_masks") {
    const auto three = enumerate_masks(3, 2);
    REQUIRE(three.size() == 3);
    CHECK(three[0].masked == std::vector<Index>{0, 1});
    CHECK(three[1].masked == std::vector<Index>{0, 2});
    CHECK(three[2].masked == std::vector<Index>{1, 2});
    CHECK(three[0].rest == std::vector<Index>{2});

    const auto ten = enumerate_masks(5, 2);
    std::set<std::vector<Index>> uniq;
    for (const auto& m : ten) uniq.insert(m.masked);
    CHECK(ten.size() == 10);
    CHECK(uniq.size() == 10);

    std::size_t total = 0;
    for (Index m = 1; m <= 7; ++m) total += enumerate_masks(7, m).size();
    CHECK(total == 127);

    CHECK_THROWS_AS(enumerate_masks(30, 15), Error);
    try {
      enumerate_masks(20, 10, 1000);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EnumerationTooLarge);
    }
  }

  TEST_CASE("enumeration size matches count_masks for D <= 12") {
    for (Index D = 1; D <= 12; ++D)
      for (Index M = 1; M <= D; ++M) {
        const auto masks = enumerate_masks(D, M);
        CHECK(masks.size() == count_masks(D, M).to_u64());
        for (const auto& m : masks) CHECK(m.valid());
      }
  }

  TEST_CASE("sampled masks belong to the enumeration") {
    Stream rng(4);
    const auto all = enumerate_masks(6, 3);
    for (int i = 0; i < 200; ++i) {
      const auto m = sample_mask(6, 3, rng);
      CHECK(std::find(all.begin(), all.end(), m) != all.end());
    }
  }

  TEST_CASE("count_masks") {
    CHECK(count_masks(5, 2).value == "10");
    CHECK(count_masks(5, 2).to_u64() == 10);
    CHECK(count_masks(9, 0).value == "1");
    CHECK(count_masks(0, 0).value == "1");
    const auto big = count_masks(512, 76);
    CHECK(std::abs(big.log10 - 92.083) / 92.083 < 0.005);
    CHECK(big.value.size() == 93);
    CHECK(big.value.substr(0, 3) == "121");
    CHECK_FALSE(big.fits_u64());
    // log10 is consistent with the exact value below 1e15.
    for (Index D = 1; D <= 50; ++D)
      for (Index M = 0; M <= D; ++M) {
        const auto c = count_masks(D, M);
        if (c.fits_u64() && c.to_u64() < 1000000000000000ULL)
          CHECK(std::abs(c.log10 - std::log10(static_cast<double>(c.to_u64()))) < 1e-9);
      }
  }

  TEST_CASE("sample_mask_size is uniform") {
    Stream rng(5);
    for (int i = 0; i < 10; ++i) CHECK(sample_mask_size(1, rng) == 1);
    std::vector<int> counts(11, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_mask_size(10, rng))];
    CHECK(counts[0] == 0);
    for (int m = 1; m <= 10; ++m) CHECK(std::abs(counts[static_cast<std::size_t>(m)] / double(draws) - 0.1) < 0.01);
    Stream a(6), b(6);
    for (int i = 0; i < 20; ++i) CHECK(sample_mask_size(50, a) == sample_mask_size(50, b));
  }

  TEST_CASE("rates to sizes") {
    CHECK(mask_size_for_rate(0.15, 512) == 76);
    CHECK(mask_size_for_rate(0.2, 10) == 2);
    CHECK(mask_size_for_rate(0.15, 50) == 7);
    CHECK(mask_size_for_rate(0.01, 10) == 1);
    const auto grid = percent_grid(512);
    CHECK(grid.size() == 99);
    CHECK(grid.front() == 5);
    CHECK(grid.back() == 507);
    const auto small = percent_grid(10);
    CHECK(small == std::vector<Index>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
  }

  TEST_CASE("MaskPair validation") {
    CHECK_THROWS_AS(MaskPair::from_masked({}, 3), Error);
    CHECK_THROWS_AS(MaskPair::from_masked({0, 0}, 3), Error);
    CHECK_THROWS_AS(MaskPair::from_masked({3}, 3), Error);
    const auto m = MaskPair::from_masked({2, 0}, 4);
    CHECK(m.masked == std::vector<Index>{0, 2});
    CHECK(m.rest == std::vector<Index>{1, 3});
  }
}
