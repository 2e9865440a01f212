// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "dv/rng.hpp"

TEST_CASE("rng streams are deterministic per seed") {
  dv::Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
    all_equal = all_equal && (x == y);
    any_diff = any_diff || (x != z);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng state round trips exactly") {
  dv::Rng a(7);
  for (int i = 0; i < 17; ++i) a.next_u64();
  auto snap = a.state();
  std::vector<double> expect;
  for (int i = 0; i < 50; ++i) expect.push_back(a.normal());
  dv::Rng b(999);
  b.set_state(snap);
  for (int i = 0; i < 50; ++i) CHECK(b.normal() == expect[i]);
}

TEST_CASE("uniform stays in the half open unit interval") {
  dv::Rng r(42);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform_int covers its inclusive range") {
  dv::Rng r(5);
  std::array<int, 5> seen{};
  for (int i = 0; i < 2000; ++i) {
    int v = r.uniform_int(2, 6);
    REQUIRE(v >= 2);
    REQUIRE(v <= 6);
    seen[v - 2] += 1;
  }
  for (int count : seen) CHECK(count > 0);
}

TEST_CASE("normal moments are plausible") {
  dv::Rng r(2024);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("normal consumes a fixed number of draws") {
  dv::Rng a(77), b(77);
  (void)a.normal();
  b.next_u64();
  b.next_u64();
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substream tags decorrelate seeds") {
  CHECK(dv::substream(1, 0) != dv::substream(1, 1));
  CHECK(dv::substream(1, 0) != dv::substream(2, 0));
  dv::Rng a(dv::substream(9, 3)), b(dv::substream(9, 4));
  CHECK(a.next_u64() != b.next_u64());
}
