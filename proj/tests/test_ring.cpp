#include <doctest.h>

#include "otwin/ring.hpp"

using namespace otwin;

namespace {

PlainTensor make_plain(std::vector<uint64_t> data, int width, bool nonneg = false) {
  PlainTensor t;
  t.shape = {static_cast<int64_t>(data.size())};
  t.meta = {width, 0, nonneg};
  for (auto& v : data) v = reduce(v, width);
  t.data = std::move(data);
  return t;
}

}  // namespace

TEST_CASE("share of the zero tensor reconstructs zero") {
  auto [s, c] = share(make_plain({0, 0, 0}, 8), 7);
  auto back = reconstruct(s, c);
  for (uint64_t v : back.data) CHECK(v == 0);
}

TEST_CASE("shares are additive complements mod 2^l") {
  auto [s, c] = share(make_plain({200}, 8), 99);
  CHECK(reduce(s.data[0] + c.data[0], 8) == 200);
}

TEST_CASE("reconstruct adds mod 2^l") {
  ShareTensor a{Party::Server, {1}, {5}, {4, 0, false}};
  ShareTensor b{Party::Client, {1}, {0}, {4, 0, false}};
  CHECK(reconstruct(a, b).data[0] == 5);
  a.data[0] = 9;
  b.data[0] = 9;
  CHECK(reconstruct(a, b).data[0] == 2);  // 18 mod 16
}

TEST_CASE("reconstruct rejects meta mismatch") {
  ShareTensor a{Party::Server, {1}, {5}, {4, 0, false}};
  ShareTensor b{Party::Client, {1}, {0}, {5, 0, false}};
  CHECK_THROWS_AS(reconstruct(a, b), std::invalid_argument);
  ShareTensor c{Party::Server, {1}, {0}, {4, 0, false}};
  CHECK_THROWS_AS(reconstruct(a, c), std::invalid_argument);
}

TEST_CASE("share/reconstruct round-trips on random tensors") {
  Rng rng(2024);
  for (int width : {4, 8, 32}) {
    for (int it = 0; it < 1000; ++it) {
      PlainTensor x;
      int64_t n = 1 + static_cast<int64_t>(rng.next_below(6));
      x.shape = {n};
      x.meta = {width, 0, false};
      for (int64_t i = 0; i < n; ++i) x.data.push_back(rng.next_ring(width));
      auto [s, c] = share(x, rng.next_u64());
      auto back = reconstruct(s, c);
      CHECK(back.data == x.data);
    }
  }
}

TEST_CASE("identical seeds produce identical shares") {
  auto x = make_plain({1, 2, 3, 4}, 16);
  auto [s1, c1] = share(x, 42);
  auto [s2, c2] = share(x, 42);
  CHECK(s1.data == s2.data);
  CHECK(c1.data == c2.data);
}

TEST_CASE("share rejects out-of-range widths") {
  PlainTensor x = make_plain({1}, 8);
  x.meta.width = 65;
  CHECK_THROWS_AS(share(x, 1), std::invalid_argument);
  x.meta.width = 0;
  CHECK_THROWS_AS(share(x, 1), std::invalid_argument);
}

TEST_CASE("lincomb reconstructs plaintext linear combinations") {
  auto three = make_plain({3}, 8);
  auto four = make_plain({4}, 8);
  auto [s3, c3] = share(three, 1);
  auto [s4, c4] = share(four, 2);
  auto s = local_lincomb({&s3, &s4}, {1, 1});
  auto c = local_lincomb({&c3, &c4}, {1, 1});
  CHECK(reconstruct(s, c).data[0] == 7);
}

TEST_CASE("lincomb wraps negative results mod 2^l") {
  auto one = make_plain({1}, 4);
  auto two = make_plain({2}, 4);
  auto [s1, c1] = share(one, 3);
  auto [s2, c2] = share(two, 4);
  auto s = local_lincomb({&s1, &s2}, {1, -1});
  auto c = local_lincomb({&c1, &c2}, {1, -1});
  CHECK(reconstruct(s, c).data[0] == 15);  // -1 mod 16
}

TEST_CASE("lincomb matches a plaintext oracle on random instances") {
  Rng rng(99);
  for (int it = 0; it < 500; ++it) {
    const int width = 4 + static_cast<int>(rng.next_below(14));
    const int64_t n = 1 + static_cast<int64_t>(rng.next_below(5));
    const int terms = 1 + static_cast<int>(rng.next_below(4));
    std::vector<PlainTensor> xs;
    std::vector<int64_t> coeffs;
    std::vector<ShareTensor> ss, cs;
    for (int k = 0; k < terms; ++k) {
      PlainTensor x;
      x.shape = {n};
      x.meta = {width, 0, false};
      for (int64_t i = 0; i < n; ++i) x.data.push_back(rng.next_ring(width));
      coeffs.push_back(static_cast<int64_t>(rng.next_below(21)) - 10);
      auto [s, c] = share(x, rng.next_u64());
      xs.push_back(std::move(x));
      ss.push_back(std::move(s));
      cs.push_back(std::move(c));
    }
    std::vector<const ShareTensor*> sp, cp;
    for (int k = 0; k < terms; ++k) {
      sp.push_back(&ss[static_cast<size_t>(k)]);
      cp.push_back(&cs[static_cast<size_t>(k)]);
    }
    auto got = reconstruct(local_lincomb(sp, coeffs), local_lincomb(cp, coeffs));
    for (int64_t i = 0; i < n; ++i) {
      uint64_t expect = 0;
      for (int k = 0; k < terms; ++k) {
        expect += static_cast<uint64_t>(coeffs[static_cast<size_t>(k)]) *
                  xs[static_cast<size_t>(k)].data[static_cast<size_t>(i)];
      }
      CHECK(got.data[static_cast<size_t>(i)] == reduce(expect, width));
    }
  }
}

TEST_CASE("lincomb rejects mixed parties and widths") {
  auto [s1, c1] = share(make_plain({1}, 8), 1);
  auto [s2, c2] = share(make_plain({1}, 9), 1);
  CHECK_THROWS_AS(local_lincomb({&s1, &c1}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(local_lincomb({&s1, &s2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("signed_value reads two's complement") {
  CHECK(static_cast<int64_t>(signed_value(13, {4, 0, false})) == -3);
  CHECK(static_cast<int64_t>(signed_value(13, {4, 0, true})) == 13);
  CHECK(static_cast<int64_t>(signed_value(0, {4, 0, false})) == 0);
  CHECK(static_cast<int64_t>(signed_value(0, {64, 0, false})) == 0);
}

TEST_CASE("signed_value inverts reduction on the signed range") {
  Rng rng(7);
  for (int width : {2, 5, 8, 31, 63, 64}) {
    const i128 lo = -(i128(1) << (width - 1));
    const i128 hi = (i128(1) << (width - 1)) - 1;
    for (int it = 0; it < 200; ++it) {
      i128 v = signed_value(rng.next_ring(width), {width, 0, false});
      CHECK(v >= lo);
      CHECK(v <= hi);
      CHECK(signed_value(from_signed(v, width), {width, 0, false}) == v);
    }
    CHECK(signed_value(from_signed(lo, width), {width, 0, false}) == lo);
    CHECK(signed_value(from_signed(hi, width), {width, 0, false}) == hi);
  }
}

TEST_CASE("lincomb nonneg flag survives only safe combinations") {
  auto x = make_plain({3}, 8, true);
  auto [s, c] = share(x, 5);
  s.meta.nonneg = c.meta.nonneg = true;
  auto id_s = local_lincomb({&s}, {1});
  CHECK(id_s.meta.nonneg);
  auto neg_s = local_lincomb({&s}, {-1});
  CHECK_FALSE(neg_s.meta.nonneg);
  auto sum_s = local_lincomb({&s, &s}, {1, 1});
  CHECK_FALSE(sum_s.meta.nonneg);  // could wrap at width 8
}
