#include <doctest.h>

#include <cmath>

#include "otwin/winograd.hpp"

using namespace otwin;

namespace {

// Float reference: stride-1 valid correlation of an r x r kernel over an
// n x n tile, producing an m x m output.
DMat float_conv_valid(const DMat& x, const DMat& k) {
  int64_t m = x.rows - k.rows + 1;
  DMat out(m, m);
  for (int64_t oy = 0; oy < m; ++oy)
    for (int64_t ox = 0; ox < m; ++ox) {
      double acc = 0;
      for (int64_t dy = 0; dy < k.rows; ++dy)
        for (int64_t dx = 0; dx < k.cols; ++dx)
          acc += x.at(oy + dy, ox + dx) * k.at(dy, dx);
      out.at(oy, ox) = acc;
    }
  return out;
}

DMat winograd_float(const TransformSet& ts, const DMat& x, const DMat& k) {
  DMat at = to_dmat(ts.a).transposed();
  DMat bt = to_dmat(ts.b).transposed();
  DMat wino_w = dmul(dmul(ts.g, k), ts.g.transposed());
  DMat wino_x = dmul(dmul(bt, x), to_dmat(ts.b));
  DMat prod(ts.n, ts.n);
  for (size_t i = 0; i < prod.v.size(); ++i) prod.v[i] = wino_w.v[i] * wino_x.v[i];
  return dmul(dmul(at, prod), to_dmat(ts.a));
}

int64_t bt_row_l1(const TransformSet& ts, int64_t row) {
  int64_t s = 0;
  for (int64_t j = 0; j < ts.n; ++j) {
    int64_t v = ts.b.at(j, row);  // row of B^T = column of B
    s += v < 0 ? -v : v;
  }
  return s;
}

}  // namespace

TEST_CASE("transform identity holds on random float inputs") {
  Rng rng(55);
  for (auto [m, r] : {std::pair{2, 3}, std::pair{4, 3}}) {
    TransformSet ts = transform_matrices(m, r);
    CHECK(ts.n == m + r - 1);
    for (int it = 0; it < 100; ++it) {
      DMat x(ts.n, ts.n), k(r, r);
      for (auto& v : x.v) v = rng.next_normal();
      for (auto& v : k.v) v = rng.next_normal();
      DMat expect = float_conv_valid(x, k);
      DMat got = winograd_float(ts, x, k);
      for (size_t i = 0; i < expect.v.size(); ++i) {
        CHECK(std::abs(expect.v[i] - got.v[i]) < 1e-9);
      }
    }
  }
}

TEST_CASE("B-transform row norms match the known instances") {
  TransformSet f23 = transform_matrices(2, 3);
  for (int64_t row = 0; row < 4; ++row) CHECK(bt_row_l1(f23, row) == 2);

  TransformSet f43 = transform_matrices(4, 3);
  int64_t mx = 0;
  for (int64_t row = 0; row < 6; ++row) mx = std::max(mx, bt_row_l1(f43, row));
  CHECK(mx == 10);
}

TEST_CASE("extension bit requirements") {
  TransformSet f23 = transform_matrices(2, 3);
  TransformSet f43 = transform_matrices(4, 3);
  CHECK(ext_bits_for_transform(f23.b, true) == 2);
  CHECK(ext_bits_for_transform(f43.b, true) == 8);
  IMat id(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(ext_bits_for_transform(id, true) == 0);
  CHECK(ext_bits_for_transform(id, false) == 0);
}

TEST_CASE("smaller output tiles need fewer extension bits") {
  // The config generator must reproduce the m=2 < m=4 ordering.
  auto c2 = make_qwinconv_config(8, 8, 4, 4, 2, 3, 4, 2, 3, 6, 2);
  auto c4 = make_qwinconv_config(8, 8, 4, 4, 4, 3, 4, 2, 3, 6, 2);
  CHECK(c2.l_feature_ext - c2.l_a == 2);
  CHECK(c4.l_feature_ext - c4.l_a == 8);
  CHECK(c2.l_feature_ext < c4.l_feature_ext);
}

TEST_CASE("unsupported tile sizes are rejected") {
  CHECK_THROWS_AS(transform_matrices(3, 3), std::invalid_argument);
  CHECK_THROWS_AS(transform_matrices(2, 5), std::invalid_argument);
}

TEST_CASE("feature-transform magnitudes stay within the derived headroom") {
  // Random inputs never overflow at l_x + ext bits; the adversarial
  // sign-aligned max-magnitude input overflows one bit below that.
  TransformSet ts = transform_matrices(2, 3);
  const int ext = ext_bits_for_transform(ts.b, true);
  IMat bt = ts.b.transposed();
  Rng rng(77);
  for (int l_x : {4, 6}) {
    const i128 lo_in = -(i128(1) << (l_x - 1));
    const i128 hi_w = (i128(1) << (l_x + ext - 1)) - 1;
    const i128 lo_w = -(i128(1) << (l_x + ext - 1));
    i128 observed_peak = 0;
    auto run_one = [&](const IMat& x) {
      for (int64_t i = 0; i < ts.n; ++i) {
        for (int64_t j = 0; j < ts.n; ++j) {
          i128 acc = 0;
          for (int64_t a = 0; a < ts.n; ++a)
            for (int64_t b = 0; b < ts.n; ++b)
              acc += i128(bt.at(i, a)) * i128(x.at(a, b)) * i128(ts.b.at(b, j));
          CHECK(acc >= lo_w);
          CHECK(acc <= hi_w);
          i128 mag = acc < 0 ? -acc : acc;
          observed_peak = std::max(observed_peak, mag);
        }
      }
    };
    for (int it = 0; it < 10000; ++it) {
      IMat x(ts.n, ts.n);
      for (auto& v : x.v) {
        v = static_cast<int64_t>(rng.next_below(uint64_t{1} << l_x)) +
            static_cast<int64_t>(lo_in);
      }
      run_one(x);
    }
    // Adversarial input: align every entry's sign against one output cell so
    // the bound is met with equality at -2^(l_x+ext-1..)*2.
    IMat adv(ts.n, ts.n);
    for (int64_t a = 0; a < ts.n; ++a) {
      for (int64_t b = 0; b < ts.n; ++b) {
        int64_t sign = bt.at(0, a) * ts.b.at(b, 0) >= 0 ? 1 : -1;
        adv.at(a, b) = sign * static_cast<int64_t>(lo_in);
      }
    }
    run_one(adv);
    i128 adv_peak = 0;
    for (int64_t i = 0; i < ts.n; ++i)
      for (int64_t j = 0; j < ts.n; ++j) {
        i128 acc = 0;
        for (int64_t a = 0; a < ts.n; ++a)
          for (int64_t b = 0; b < ts.n; ++b)
            acc += i128(bt.at(i, a)) * i128(adv.at(a, b)) * i128(ts.b.at(b, j));
        adv_peak = std::max(adv_peak, acc < 0 ? -acc : acc);
      }
    // One bit less headroom overflows on the adversarial input.
    CHECK(adv_peak > (i128(1) << (l_x + ext - 2)));
  }
}

TEST_CASE("tile plan counts overlapping tiles") {
  TilePlan p = make_tile_plan(4, 4, 1, 2, 3, 1);
  CHECK(p.tile_count() == 4);
  CHECK(p.n == 4);
  TilePlan single = make_tile_plan(2, 2, 1, 2, 3, 1);
  CHECK(single.tile_count() == 1);
  CHECK_THROWS_AS(make_tile_plan(5, 4, 1, 2, 3, 1), std::invalid_argument);
}

TEST_CASE("tiling round-trips through per-tile direct convolution") {
  // untile(per-tile valid conv) == direct same-padding conv of the full input.
  Rng rng(11);
  for (int it = 0; it < 20; ++it) {
    const int64_t h = 4, w = 6, c = 2, k = 1;
    const int r = 3, m = 2;
    PlainTensor x{{c, h, w}, {}, {6, 0, false}};
    for (int64_t i = 0; i < c * h * w; ++i) {
      x.data.push_back(from_signed(
          static_cast<int64_t>(rng.next_below(31)) - 15, 6));
    }
    std::vector<int64_t> kw(static_cast<size_t>(k * c * r * r));
    for (auto& v : kw) v = static_cast<int64_t>(rng.next_below(5)) - 2;

    PlainTensor direct = direct_quant_conv(x, kw, k, 0, r, 1, 1, 24, 24, 0);

    TilePlan plan = make_tile_plan(h, w, c, m, r, 1);
    auto tiles = tile_gather(plan, x.data);
    // Per-tile valid conv accumulated over channels.
    std::vector<uint64_t> out_tiles(
        static_cast<size_t>(k * plan.tile_count() * m * m), 0);
    for (int64_t t = 0; t < plan.tile_count(); ++t) {
      for (int oy = 0; oy < m; ++oy)
        for (int ox = 0; ox < m; ++ox) {
          uint64_t acc = 0;
          for (int64_t ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
              for (int dx = 0; dx < r; ++dx) {
                uint64_t xv = tiles[static_cast<size_t>(
                    ((ci * plan.tile_count() + t) * plan.n + oy + dy) * plan.n +
                    ox + dx)];
                int64_t sv = static_cast<int64_t>(signed_value(xv, x.meta));
                acc += static_cast<uint64_t>(kw[static_cast<size_t>(
                           (ci * r + dy) * r + dx)]) *
                       static_cast<uint64_t>(sv);
              }
          out_tiles[static_cast<size_t>((t * m + oy) * m + ox)] =
              reduce(acc, 24);
        }
    }
    auto full = untile_scatter(plan, k, out_tiles);
    CHECK(full == direct.data);
  }
}

TEST_CASE("offline weight transform is pure and quantizes to codewords") {
  TransformSet ts = transform_matrices(2, 3);
  Codebook cb = Codebook::standard(4);

  // Zero weights stay zero.
  std::vector<double> zeros(9, 0.0);
  auto wz = weight_transform_offline(zeros, 1, 1, ts, cb, 0);
  for (int64_t v : wz.values) CHECK(v == 0);

  // A center impulse reproduces the outer product of G's middle column.
  std::vector<double> impulse(9, 0.0);
  impulse[4] = 1.0;  // center of the 3x3 kernel
  auto wi = weight_transform_offline(impulse, 1, 1, ts, cb, 3);
  for (int u = 0; u < 4; ++u) {
    for (int v = 0; v < 4; ++v) {
      double gmid_u = ts.g.at(u, 1), gmid_v = ts.g.at(v, 1);
      double expect = gmid_u * gmid_v;  // G W G^T of the impulse
      double got = static_cast<double>(
                       wi.values[static_cast<size_t>((u * 4 + v))]) /
                   std::ldexp(1.0, wi.scale_exp);
      CHECK(std::abs(expect - got) < 0.51 / std::ldexp(1.0, wi.scale_exp));
    }
  }
}

TEST_CASE("exact weight lifting matches the direct convolution bit for bit") {
  Rng rng(313);
  TransformSet ts = transform_matrices(2, 3);
  for (int it = 0; it < 40; ++it) {
    const int64_t c = 1 + static_cast<int64_t>(rng.next_below(4));
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(4));
    const int64_t h = 2 + 2 * static_cast<int64_t>(rng.next_below(3));
    const int64_t w = 2 + 2 * static_cast<int64_t>(rng.next_below(3));
    const int l_a = 4;

    std::vector<int64_t> kw(static_cast<size_t>(k * c * 9));
    for (auto& v : kw) v = static_cast<int64_t>(rng.next_below(3)) - 1;
    WinogradWeights wino = lift_direct_weights(kw, k, c, 2, ts);
    QWinConvConfig cfg = make_qwinconv_config(
        h, w, c, k, 2, 3, l_a, wino.bit_planes(), wino.max_magnitude_bound(), 8,
        /*s_out_exp=*/2);

    PlainTensor x{{c, h, w}, {}, {l_a, 2, false}};
    for (int64_t i = 0; i < c * h * w; ++i) x.data.push_back(rng.next_ring(l_a));

    PlainTensor direct = direct_quant_conv(x, kw, k, 2, 3, 1, 1, cfg.l_acc,
                                           cfg.l_out, cfg.s_out_exp);

    auto [xs, xc] = share(x, rng.next_u64());
    TwoParty tp(rng.next_u64());
    ShareTensor ys, yc;
    tp.run([&](PartyCtx& ctx) { ys = qwinconv(ctx, xs, wino, cfg); },
           [&](PartyCtx& ctx) { yc = qwinconv(ctx, xc, wino, cfg); });
    PlainTensor got = reconstruct(ys, yc);
    CHECK(got.data == direct.data);
    CHECK(got.meta.width == direct.meta.width);
  }
}

TEST_CASE("qwinconv zero input gives zero output") {
  TransformSet ts = transform_matrices(2, 3);
  std::vector<int64_t> kw(9, 1);
  WinogradWeights wino = lift_direct_weights(kw, 1, 1, 0, ts);
  QWinConvConfig cfg = make_qwinconv_config(2, 2, 1, 1, 2, 3, 4,
                                            wino.bit_planes(),
                                            wino.max_magnitude_bound(), 8, 0);
  PlainTensor x{{1, 2, 2}, {0, 0, 0, 0}, {4, 0, false}};
  auto [xs, xc] = share(x, 1);
  TwoParty tp(2);
  ShareTensor ys, yc;
  tp.run([&](PartyCtx& ctx) { ys = qwinconv(ctx, xs, wino, cfg); },
         [&](PartyCtx& ctx) { yc = qwinconv(ctx, xc, wino, cfg); });
  for (uint64_t v : reconstruct(ys, yc).data) CHECK(v == 0);
}

TEST_CASE("qwinconv center-impulse kernel requantizes the input") {
  Rng rng(414);
  TransformSet ts = transform_matrices(2, 3);
  std::vector<int64_t> kw(9, 0);
  kw[4] = 1;
  WinogradWeights wino = lift_direct_weights(kw, 1, 1, 0, ts);
  QWinConvConfig cfg = make_qwinconv_config(4, 4, 1, 1, 2, 3, 4,
                                            wino.bit_planes(),
                                            wino.max_magnitude_bound(), 8, 0);
  PlainTensor x{{1, 4, 4}, {}, {4, 0, false}};
  for (int i = 0; i < 16; ++i) x.data.push_back(rng.next_ring(4));
  auto [xs, xc] = share(x, 5);
  TwoParty tp(6);
  ShareTensor ys, yc;
  tp.run([&](PartyCtx& ctx) { ys = qwinconv(ctx, xs, wino, cfg); },
         [&](PartyCtx& ctx) { yc = qwinconv(ctx, xc, wino, cfg); });
  PlainTensor got = reconstruct(ys, yc);
  for (int i = 0; i < 16; ++i) {
    CHECK(static_cast<int64_t>(signed_value(got.data[static_cast<size_t>(i)],
                                            got.meta)) ==
          static_cast<int64_t>(signed_value(x.data[static_cast<size_t>(i)], x.meta)));
  }
}

TEST_CASE("direct conv oracle matches float within quantization error") {
  Rng rng(515);
  const int64_t c = 2, k = 2, h = 4, w = 4;
  std::vector<double> wf(static_cast<size_t>(k * c * 9));
  for (auto& v : wf) v = rng.next_normal() * 0.3;
  std::vector<double> xf(static_cast<size_t>(c * h * w));
  for (auto& v : xf) v = rng.next_normal();

  const int l_a = 8, e_a = 4, e_w = 4;
  QTensor xq = quantize_per_tensor(xf, l_a, e_a);
  QTensor wq = quantize_per_tensor(wf, 8, e_w);

  PlainTensor x{{c, h, w}, {}, {l_a, e_a, false}};
  for (int64_t q : xq.q) x.data.push_back(from_signed(q, l_a));
  PlainTensor y = direct_quant_conv(x, wq.q, k, e_w, 3, 1, 1, 30, 30, e_a + e_w);

  // Per-element error from two quantizers and one exact integer conv is
  // bounded by sum |x| * w_step + sum |w| * x_step + cross terms; a loose
  // half-ulp-based bound suffices here.
  for (int64_t ko = 0; ko < k; ++ko)
    for (int64_t oy = 0; oy < h; ++oy)
      for (int64_t ox = 0; ox < w; ++ox) {
        double ref = 0;
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t dy = 0; dy < 3; ++dy)
            for (int64_t dx = 0; dx < 3; ++dx) {
              int64_t yy = oy + dy - 1, xx = ox + dx - 1;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              ref += wf[static_cast<size_t>(((ko * c + ci) * 3 + dy) * 3 + dx)] *
                     xf[static_cast<size_t>((ci * h + yy) * w + xx)];
            }
        double got =
            static_cast<double>(static_cast<int64_t>(signed_value(
                y.data[static_cast<size_t>((ko * h + oy) * w + ox)], y.meta))) /
            std::ldexp(1.0, e_a + e_w);
        CHECK(std::abs(ref - got) < 0.2);
      }
}

TEST_CASE("winograd gemm communication scales with K and the tile payload") {
  // Metered offline GEMM bits across doubling of K and of the tile count.
  auto measure = [&](int64_t c, int64_t k, int64_t h, int64_t w) {
    TransformSet ts = transform_matrices(2, 3);
    Rng rng(9);
    std::vector<int64_t> kw(static_cast<size_t>(k * c * 9), 1);
    WinogradWeights wino = lift_direct_weights(kw, k, c, 0, ts);
    QWinConvConfig cfg = make_qwinconv_config(h, w, c, k, 2, 3, 4,
                                              wino.bit_planes(),
                                              wino.max_magnitude_bound(), 8, 0);
    PlainTensor x{{c, h, w}, {}, {4, 0, false}};
    for (int64_t i = 0; i < c * h * w; ++i) x.data.push_back(rng.next_ring(4));
    auto [xs, xc] = share(x, 3);
    TwoParty tp(4);
    ShareTensor ys, yc;
    tp.run([&](PartyCtx& ctx) { ys = qwinconv(ctx, xs, wino, cfg); },
           [&](PartyCtx& ctx) { yc = qwinconv(ctx, xc, wino, cfg); });
    // Offline bits are exactly the GEMM OT charge.
    struct R {
      int64_t offline;
      QWinConvConfig cfg;
      int planes;
    } out{tp.meter().phase_bits(Phase::Offline), cfg, wino.bit_planes()};
    return out;
  };

  auto base = measure(4, 4, 8, 8);
  auto k2x = measure(4, 8, 8, 8);
  CHECK(k2x.offline == 2 * base.offline);

  auto t2x = measure(4, 4, 8, 16);  // doubles the tile count
  const int64_t n2 = 16;
  const int64_t t_base = (8 / 2) * (8 / 2);
  // The payload term is linear in T; the lambda term is T-independent.
  CHECK(t2x.offline - base.offline ==
        n2 * base.planes * 4 * 4 * (t_base * base.cfg.l_acc));
}

TEST_CASE("direct convolution protocol over shares matches the oracle") {
  Rng rng(616);
  for (int it = 0; it < 30; ++it) {
    const int64_t c = 1 + static_cast<int64_t>(rng.next_below(4));
    const int64_t k = 1 + static_cast<int64_t>(rng.next_below(4));
    const int64_t h = 3 + static_cast<int64_t>(rng.next_below(4));
    const int64_t w = 3 + static_cast<int64_t>(rng.next_below(4));
    const int stride = 1 + static_cast<int>(rng.next_below(2));
    const int l_a = 5, l_w = 3;
    const int l_acc = 18, l_out = 8, s_out = 1;

    std::vector<int64_t> kw(static_cast<size_t>(k * c * 9));
    for (auto& v : kw) v = static_cast<int64_t>(rng.next_below(15)) - 7;
    QuantWeights dw = make_weights(k, c * 9, kw, l_w, 3);

    PlainTensor x{{c, h, w}, {}, {l_a, 2, false}};
    for (int64_t i = 0; i < c * h * w; ++i) x.data.push_back(rng.next_ring(l_a));
    PlainTensor expect =
        direct_quant_conv(x, kw, k, 3, 3, stride, 1, l_acc, l_out, s_out);

    auto [xs, xc] = share(x, rng.next_u64());
    TwoParty tp(rng.next_u64());
    ShareTensor ys, yc;
    tp.run(
        [&](PartyCtx& ctx) {
          ys = direct_conv_protocol(ctx, xs, dw, k, 3, stride, 1, l_acc, l_out,
                                    s_out);
        },
        [&](PartyCtx& ctx) {
          yc = direct_conv_protocol(ctx, xc, dw, k, 3, stride, 1, l_acc, l_out,
                                    s_out);
        });
    CHECK(reconstruct(ys, yc).data == expect.data);
  }
}

TEST_CASE("qwinconv runs with the larger output tile") {
  // m = 4 follows the quantize-after-transform weight path; checked against
  // the plaintext mirror of the same integer pipeline.
  TransformSet ts = transform_matrices(4, 3);
  Rng rng(717);
  const int64_t c = 2, k = 2, h = 8, w = 8;
  std::vector<double> wf(static_cast<size_t>(k * c * 9));
  for (auto& v : wf) v = 0.2 * rng.next_normal();
  Codebook cb = Codebook::standard(4);
  WinogradWeights ww = weight_transform_offline(wf, k, c, ts, cb, 4);
  QWinConvConfig cfg = make_qwinconv_config(h, w, c, k, 4, 3, 4, cb.width(),
                                            cb.max_magnitude(), 8, 2);
  CHECK(cfg.l_feature_ext == 4 + 8);

  PlainTensor x{{c, h, w}, {}, {4, 2, false}};
  for (int64_t i = 0; i < c * h * w; ++i) x.data.push_back(rng.next_ring(4));
  auto [xs, xc] = share(x, 5);
  TwoParty tp(9);
  ShareTensor ys, yc;
  tp.run([&](PartyCtx& ctx) { ys = qwinconv(ctx, xs, ww, cfg); },
         [&](PartyCtx& ctx) { yc = qwinconv(ctx, xc, ww, cfg); });
  PlainTensor got = reconstruct(ys, yc);

  // Plaintext mirror: tile, transform, multiply, inverse transform, requant.
  TilePlan plan = make_tile_plan(h, w, c, 4, 3, 1);
  auto tiles = tile_gather(plan, x.data);
  // sign-extend plaintext values to the feature width before transforming
  std::vector<uint64_t> wide(tiles.size());
  for (size_t i = 0; i < tiles.size(); ++i) {
    wide[i] = from_signed(signed_value(tiles[i], x.meta), cfg.l_feature_ext);
  }
  auto feat = sandwich_tiles(ts.b.transposed(), ts.b, wide, c * plan.tile_count(),
                             plan.n, cfg.l_feature_ext);
  const int64_t T = plan.tile_count();
  std::vector<uint64_t> acc(static_cast<size_t>(k * T * plan.n * plan.n), 0);
  for (int u = 0; u < plan.n; ++u) {
    for (int v = 0; v < plan.n; ++v) {
      QuantWeights pm = ww.position_matrix(u, v);
      for (int64_t ko = 0; ko < k; ++ko) {
        for (int64_t t = 0; t < T; ++t) {
          uint64_t a = 0;
          for (int64_t ci = 0; ci < c; ++ci) {
            uint64_t f = feat[static_cast<size_t>(((ci * T + t) * plan.n + u) *
                                                      plan.n +
                                                  v)];
            a += static_cast<uint64_t>(pm.values[static_cast<size_t>(ko * c + ci)]) *
                 static_cast<uint64_t>(static_cast<int64_t>(
                     signed_value(f, {cfg.l_feature_ext, 0, false})));
          }
          acc[static_cast<size_t>(((ko * T + t) * plan.n + u) * plan.n + v)] =
              reduce(a, cfg.l_acc);
        }
      }
    }
  }
  std::vector<uint64_t> acc_wide(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) {
    acc_wide[i] = from_signed(signed_value(acc[i], {cfg.l_acc, 0, false}),
                              cfg.l_out_ext);
  }
  auto out_tiles = sandwich_tiles(ts.a.transposed(), ts.a, acc_wide,
                                  k * plan.tile_count(), plan.n, cfg.l_out_ext);
  auto full = untile_scatter(plan, k, out_tiles);
  const int t_shift = (2 + ww.scale_exp) - cfg.s_out_exp;
  for (size_t i = 0; i < full.size(); ++i) {
    i128 sv = signed_value(full[i], {cfg.l_out_ext, 0, false});
    CHECK(got.data[i] == from_signed(sv >> t_shift, cfg.l_out));
  }
}
