#include "otwin/winograd.hpp"

#include <algorithm>
#include <cmath>

namespace otwin {

namespace {

int ceil_log2(int64_t n) {
  int b = 0;
  while ((int64_t{1} << b) < n) ++b;
  return b;
}

int bit_length(int64_t v) {
  int b = 0;
  while ((int64_t{1} << b) <= v) ++b;
  return b;
}

}  // namespace

TransformSet transform_matrices(int m, int r) {
  if (m == 2 && r == 3) {
    TransformSet ts;
    ts.m = 2;
    ts.r = 3;
    ts.n = 4;
    IMat at(2, 4, {1, 1, 1, 0,
                   0, 1, -1, -1});
    IMat bt(4, 4, {1, 0, -1, 0,
                   0, 1, 1, 0,
                   0, -1, 1, 0,
                   0, 1, 0, -1});
    ts.a = at.transposed();
    ts.b = bt.transposed();
    ts.g = DMat(4, 3, {1.0, 0.0, 0.0,
                       0.5, 0.5, 0.5,
                       0.5, -0.5, 0.5,
                       0.0, 0.0, 1.0});
    ts.g_shift = 1;
    ts.g_scaled = IMat(4, 3, {2, 0, 0,
                              1, 1, 1,
                              1, -1, 1,
                              0, 0, 2});
    return ts;
  }
  if (m == 4 && r == 3) {
    TransformSet ts;
    ts.m = 4;
    ts.r = 3;
    ts.n = 6;
    IMat at(4, 6, {1, 1, 1, 1, 1, 0,
                   0, 1, -1, 2, -2, 0,
                   0, 1, 1, 4, 4, 0,
                   0, 1, -1, 8, -8, 1});
    IMat bt(6, 6, {4, 0, -5, 0, 1, 0,
                   0, -4, -4, 1, 1, 0,
                   0, 4, -4, -1, 1, 0,
                   0, -2, -1, 2, 1, 0,
                   0, 2, -1, -2, 1, 0,
                   0, 4, 0, -5, 0, 1});
    ts.a = at.transposed();
    ts.b = bt.transposed();
    const double s6 = 1.0 / 6.0, s12 = 1.0 / 12.0, s24 = 1.0 / 24.0;
    ts.g = DMat(6, 3, {0.25, 0.0, 0.0,
                       -s6, -s6, -s6,
                       -s6, s6, -s6,
                       s24, s12, s6,
                       s24, -s12, s6,
                       0.0, 0.0, 1.0});
    // No power-of-two multiple of this G is integral, so exact integer
    // weight lifting is unavailable for m = 4.
    return ts;
  }
  throw std::invalid_argument("unsupported Winograd instance, use m in {2,4}, r=3");
}

int ext_bits_for_transform(const IMat& m, bool two_sided) {
  int64_t max_norm = 0;
  bool nonzero = false;
  for (int64_t j = 0; j < m.cols; ++j) {
    int64_t norm = 0;
    for (int64_t i = 0; i < m.rows; ++i) {
      int64_t v = m.at(i, j);
      norm += v < 0 ? -v : v;
      nonzero = nonzero || v != 0;
    }
    max_norm = std::max(max_norm, norm);
  }
  if (!nonzero) throw std::invalid_argument("transform matrix is zero");
  int per_side = ceil_log2(max_norm);
  return two_sided ? 2 * per_side : per_side;
}

TilePlan make_tile_plan(int64_t h, int64_t w, int64_t c, int m, int r, int pad) {
  if (h <= 0 || w <= 0 || c <= 0) throw std::invalid_argument("empty input");
  if (h % m != 0 || w % m != 0) {
    throw std::invalid_argument("spatial dims must be divisible by the tile size");
  }
  TilePlan plan;
  plan.h = h;
  plan.w = w;
  plan.c = c;
  plan.m = m;
  plan.r = r;
  plan.n = m + r - 1;
  plan.pad = pad;
  plan.tiles_y = h / m;
  plan.tiles_x = w / m;
  const int64_t t_count = plan.tile_count();
  plan.gather.resize(static_cast<size_t>(c * t_count * plan.n * plan.n));
  size_t idx = 0;
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t ty = 0; ty < plan.tiles_y; ++ty) {
      for (int64_t tx = 0; tx < plan.tiles_x; ++tx) {
        for (int u = 0; u < plan.n; ++u) {
          for (int v = 0; v < plan.n; ++v) {
            int64_t y = ty * m + u - pad;
            int64_t x = tx * m + v - pad;
            plan.gather[idx++] =
                (y < 0 || y >= h || x < 0 || x >= w)
                    ? SIZE_MAX
                    : static_cast<size_t>((ci * h + y) * w + x);
          }
        }
      }
    }
  }
  return plan;
}

std::vector<uint64_t> tile_gather(const TilePlan& plan,
                                  const std::vector<uint64_t>& chw) {
  std::vector<uint64_t> out(plan.gather.size());
  for (size_t i = 0; i < plan.gather.size(); ++i) {
    out[i] = plan.gather[i] == SIZE_MAX ? 0 : chw[plan.gather[i]];
  }
  return out;
}

std::vector<uint64_t> untile_scatter(const TilePlan& plan, int64_t k,
                                     const std::vector<uint64_t>& tiles) {
  const int64_t t_count = plan.tile_count();
  const int m = plan.m;
  std::vector<uint64_t> out(static_cast<size_t>(k * plan.h * plan.w));
  for (int64_t ko = 0; ko < k; ++ko) {
    for (int64_t ty = 0; ty < plan.tiles_y; ++ty) {
      for (int64_t tx = 0; tx < plan.tiles_x; ++tx) {
        int64_t t = ty * plan.tiles_x + tx;
        for (int u = 0; u < m; ++u) {
          for (int v = 0; v < m; ++v) {
            out[static_cast<size_t>((ko * plan.h + ty * m + u) * plan.w +
                                    tx * m + v)] =
                tiles[static_cast<size_t>(((ko * t_count + t) * m + u) * m + v)];
          }
        }
      }
    }
  }
  return out;
}

std::vector<uint64_t> sandwich_tiles(const IMat& left, const IMat& right,
                                     const std::vector<uint64_t>& tiles,
                                     int64_t tile_count, int64_t a, int width) {
  if (left.cols != a || right.rows != a) {
    throw std::invalid_argument("transform shape mismatch");
  }
  const int64_t p = left.rows, q = right.cols;
  const uint64_t mask = width_mask(width);
  std::vector<uint64_t> out(static_cast<size_t>(tile_count * p * q));
  std::vector<uint64_t> tmp(static_cast<size_t>(p * a));
  for (int64_t t = 0; t < tile_count; ++t) {
    const uint64_t* x = &tiles[static_cast<size_t>(t * a * a)];
    for (int64_t i = 0; i < p; ++i) {
      for (int64_t j = 0; j < a; ++j) {
        uint64_t acc = 0;
        for (int64_t k2 = 0; k2 < a; ++k2) {
          acc += static_cast<uint64_t>(left.at(i, k2)) * x[k2 * a + j];
        }
        tmp[static_cast<size_t>(i * a + j)] = acc;
      }
    }
    uint64_t* y = &out[static_cast<size_t>(t * p * q)];
    for (int64_t i = 0; i < p; ++i) {
      for (int64_t j = 0; j < q; ++j) {
        uint64_t acc = 0;
        for (int64_t k2 = 0; k2 < a; ++k2) {
          acc += tmp[static_cast<size_t>(i * a + k2)] *
                 static_cast<uint64_t>(right.at(k2, j));
        }
        y[i * q + j] = acc & mask;
      }
    }
  }
  return out;
}

void QWinConvConfig::validate(int64_t weight_max_magnitude) const {
  TransformSet ts = transform_matrices(m, r);
  const int fb = ext_bits_for_transform(ts.b, true);
  const int ab = ext_bits_for_transform(ts.a, true);
  const int mag_bits = std::max(l_w, bit_length(weight_max_magnitude));
  if (l_feature_ext < l_a + fb) {
    throw std::invalid_argument("l_feature_ext too small for the feature transform");
  }
  if (l_acc < l_feature_ext + mag_bits + ceil_log2(c)) {
    throw std::invalid_argument("l_acc too small for safe accumulation");
  }
  if (l_out_ext < l_acc + ab) {
    throw std::invalid_argument("l_out_ext too small for the output transform");
  }
  check_width(l_out_ext);
  if (h % m != 0 || w % m != 0) {
    throw std::invalid_argument("spatial dims must be divisible by the tile size");
  }
}

QWinConvConfig make_qwinconv_config(int64_t h, int64_t w, int64_t c, int64_t k,
                                    int m, int r, int l_a, int l_w,
                                    int64_t weight_max_magnitude, int l_out,
                                    int s_out_exp) {
  TransformSet ts = transform_matrices(m, r);
  QWinConvConfig cfg;
  cfg.h = h;
  cfg.w = w;
  cfg.c = c;
  cfg.k = k;
  cfg.m = m;
  cfg.r = r;
  cfg.pad = (r - 1) / 2;
  cfg.l_a = l_a;
  cfg.l_w = l_w;
  cfg.l_feature_ext = l_a + ext_bits_for_transform(ts.b, true);
  const int mag_bits = std::max(l_w, bit_length(weight_max_magnitude));
  cfg.l_acc = cfg.l_feature_ext + mag_bits + ceil_log2(c);
  cfg.l_out_ext = cfg.l_acc + ext_bits_for_transform(ts.a, true);
  cfg.l_out = l_out;
  cfg.s_out_exp = s_out_exp;
  cfg.validate(weight_max_magnitude);
  return cfg;
}

QuantWeights WinogradWeights::position_matrix(int u, int v) const {
  QuantWeights w;
  w.rows = k;
  w.cols = c;
  w.importance = importance;
  w.scale_exp = scale_exp;
  const size_t base = static_cast<size_t>((u * n + v) * k * c);
  w.values.assign(values.begin() + base, values.begin() + base + k * c);
  return w;
}

WinogradWeights weight_transform_offline(const std::vector<double>& w_float,
                                         int64_t k, int64_t c,
                                         const TransformSet& ts,
                                         const Codebook& cb,
                                         std::optional<int> scale_exp) {
  const int r = ts.r, n = ts.n;
  if (w_float.size() != static_cast<size_t>(k * c * r * r)) {
    throw std::invalid_argument("weight tensor size mismatch");
  }
  // Transform every kernel, then calibrate one per-layer scale.
  std::vector<double> wino(static_cast<size_t>(k * c * n * n));
  DMat kernel(r, r);
  const DMat gt = ts.g.transposed();
  for (int64_t kc = 0; kc < k * c; ++kc) {
    for (int64_t i = 0; i < r * r; ++i) {
      kernel.v[static_cast<size_t>(i)] = w_float[static_cast<size_t>(kc * r * r + i)];
    }
    DMat t = dmul(dmul(ts.g, kernel), gt);
    for (int64_t i = 0; i < n * n; ++i) {
      wino[static_cast<size_t>(kc * n * n + i)] = t.v[static_cast<size_t>(i)];
    }
  }
  const int e = scale_exp ? *scale_exp : calibrate_scale_exp(wino, cb);

  WinogradWeights out;
  out.n = n;
  out.k = k;
  out.c = c;
  out.importance = cb.importance();
  out.scale_exp = e;  // stored integer = value * 2^e
  out.values.resize(wino.size());
  // Layout change: per-kernel n*n blocks -> per-position K*C matrices.
  for (int64_t ko = 0; ko < k; ++ko) {
    for (int64_t ci = 0; ci < c; ++ci) {
      for (int64_t u = 0; u < n; ++u) {
        for (int64_t v = 0; v < n; ++v) {
          double val = wino[static_cast<size_t>(((ko * c + ci) * n + u) * n + v)];
          out.values[static_cast<size_t>(((u * n + v) * k + ko) * c + ci)] =
              quantize_to_codeword(val, e, cb);
        }
      }
    }
  }
  return out;
}

WinogradWeights lift_direct_weights(const std::vector<int64_t>& w_direct,
                                    int64_t k, int64_t c, int w_scale_exp,
                                    const TransformSet& ts) {
  if (!ts.g_scaled) {
    throw std::invalid_argument(
        "exact integer lifting needs an integral scaled G (m = 2 only)");
  }
  const int r = ts.r, n = ts.n;
  if (w_direct.size() != static_cast<size_t>(k * c * r * r)) {
    throw std::invalid_argument("weight tensor size mismatch");
  }
  const IMat& gs = *ts.g_scaled;
  const IMat gst = gs.transposed();
  WinogradWeights out;
  out.n = n;
  out.k = k;
  out.c = c;
  // The scaled transform multiplies values by 2^(2*g_shift); fold that into
  // the scale exponent so the represented real weights are unchanged.
  out.scale_exp = w_scale_exp + 2 * *ts.g_shift;
  out.values.resize(static_cast<size_t>(k * c * n * n));
  int64_t max_mag = 0;
  for (int64_t ko = 0; ko < k; ++ko) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t* ker = &w_direct[static_cast<size_t>((ko * c + ci) * r * r)];
      for (int64_t u = 0; u < n; ++u) {
        for (int64_t v = 0; v < n; ++v) {
          int64_t acc = 0;
          for (int64_t i = 0; i < r; ++i) {
            for (int64_t j = 0; j < r; ++j) {
              acc += gs.at(u, i) * ker[i * r + j] * gst.at(j, v);
            }
          }
          out.values[static_cast<size_t>(((u * n + v) * k + ko) * c + ci)] = acc;
          max_mag = std::max(max_mag, acc < 0 ? -acc : acc);
        }
      }
    }
  }
  out.importance = standard_importance(std::max(1, bit_length(max_mag)));
  return out;
}

ShareTensor qwinconv(PartyCtx& ctx, const ShareTensor& x,
                     const WinogradWeights& weights, const QWinConvConfig& cfg) {
  cfg.validate(weights.max_magnitude_bound());
  if (weights.n != cfg.m + cfg.r - 1 || weights.k != cfg.k || weights.c != cfg.c) {
    throw std::invalid_argument("weights do not match the configuration");
  }
  if (x.meta.width != cfg.l_a) {
    throw std::invalid_argument("input width does not match the configuration");
  }
  TransformSet ts = transform_matrices(cfg.m, cfg.r);
  TilePlan plan = make_tile_plan(cfg.h, cfg.w, cfg.c, cfg.m, cfg.r, cfg.pad);
  const int64_t T = plan.tile_count();
  const int n = plan.n;

  // Feature-transform extension, then the local B^T X B per tile.
  ShareTensor xe = ext(ctx, x, cfg.l_feature_ext, x.meta.nonneg);
  ShareTensor tiled{ctx.party(), {cfg.c, T, n, n}, tile_gather(plan, xe.data),
                    xe.meta};
  ShareTensor feat{ctx.party(),
                   {cfg.c, T, n, n},
                   sandwich_tiles(ts.b.transposed(), ts.b, tiled.data, cfg.c * T,
                                  n, cfg.l_feature_ext),
                   {cfg.l_feature_ext, xe.meta.scale_exp, false}};

  // GEMM-internal extension to the accumulator width.
  ShareTensor feat_acc = ext(ctx, feat, cfg.l_acc, false);

  // Winograd-domain EWMM as n^2 GEMMs of (K x C) x (C x T).
  std::vector<uint64_t> gemm_out(static_cast<size_t>(cfg.k * T * n * n));
  BitWidthMeta acc_meta{cfg.l_acc, 0, false};
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      ShareTensor f_uv{ctx.party(), {cfg.c, T}, {}, feat_acc.meta};
      f_uv.data.resize(static_cast<size_t>(cfg.c * T));
      for (int64_t ci = 0; ci < cfg.c; ++ci) {
        for (int64_t t = 0; t < T; ++t) {
          f_uv.data[static_cast<size_t>(ci * T + t)] =
              feat_acc.data[static_cast<size_t>(((ci * T + t) * n + u) * n + v)];
        }
      }
      ShareTensor y_uv = gemm_ot(ctx, weights.position_matrix(u, v), f_uv,
                                 cfg.l_feature_ext, cfg.l_acc);
      acc_meta = y_uv.meta;
      for (int64_t ko = 0; ko < cfg.k; ++ko) {
        for (int64_t t = 0; t < T; ++t) {
          gemm_out[static_cast<size_t>(((ko * T + t) * n + u) * n + v)] =
              y_uv.data[static_cast<size_t>(ko * T + t)];
        }
      }
    }
  }
  ShareTensor prod{ctx.party(), {cfg.k, T, n, n}, std::move(gemm_out), acc_meta};

  // Output-transform extension, local A^T [.] A, untile, output requant.
  ShareTensor prod_ext = ext(ctx, prod, cfg.l_out_ext, false);
  ShareTensor out_tiles{ctx.party(),
                        {cfg.k, T, cfg.m, cfg.m},
                        sandwich_tiles(ts.a.transposed(), ts.a, prod_ext.data,
                                       cfg.k * T, n, cfg.l_out_ext),
                        {cfg.l_out_ext, prod_ext.meta.scale_exp, false}};
  ShareTensor full{ctx.party(),
                   {cfg.k, cfg.h, cfg.w},
                   untile_scatter(plan, cfg.k, out_tiles.data),
                   out_tiles.meta};
  return requant(ctx, full, cfg.l_out, cfg.s_out_exp, false);
}

PlainTensor direct_quant_conv(const PlainTensor& x,
                              const std::vector<int64_t>& w_direct, int64_t k,
                              int w_scale_exp, int r, int stride, int pad,
                              int l_acc, int l_out, int s_out_exp) {
  if (x.shape.size() != 3) throw std::invalid_argument("input must be C x H x W");
  const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  if (w_direct.size() != static_cast<size_t>(k * c * r * r)) {
    throw std::invalid_argument("weight tensor size mismatch");
  }
  // floor output-size semantics
  const int64_t ho = (h + 2 * pad - r) / stride + 1;
  const int64_t wo = (w + 2 * pad - r) / stride + 1;
  const int t = (x.meta.scale_exp + w_scale_exp) - s_out_exp;
  if (t < 0) throw std::invalid_argument("output scale exceeds the product scale");

  PlainTensor out{{k, ho, wo}, {}, {l_out, s_out_exp, false}};
  out.data.resize(static_cast<size_t>(k * ho * wo));
  BitWidthMeta acc_meta{l_acc, 0, false};
  for (int64_t ko = 0; ko < k; ++ko) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        uint64_t acc = 0;
        for (int64_t ci = 0; ci < c; ++ci) {
          for (int64_t dy = 0; dy < r; ++dy) {
            for (int64_t dx = 0; dx < r; ++dx) {
              int64_t y = oy * stride + dy - pad;
              int64_t xx = ox * stride + dx - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
              uint64_t xv = static_cast<uint64_t>(static_cast<int64_t>(
                  signed_value(x.data[static_cast<size_t>((ci * h + y) * w + xx)],
                               x.meta)));
              acc += static_cast<uint64_t>(
                         w_direct[static_cast<size_t>(((ko * c + ci) * r + dy) * r +
                                                      dx)]) *
                     xv;
            }
          }
        }
        i128 sv = signed_value(reduce(acc, l_acc), acc_meta);
        out.data[static_cast<size_t>((ko * ho + oy) * wo + ox)] =
            from_signed(sv >> t, l_out);
      }
    }
  }
  return out;
}

ShareTensor direct_conv_protocol(PartyCtx& ctx, const ShareTensor& x,
                                 const QuantWeights& w_direct, int64_t k, int r,
                                 int stride, int pad, int l_acc, int l_out,
                                 int s_out_exp) {
  const int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  if (w_direct.rows != k || w_direct.cols != c * r * r) {
    throw std::invalid_argument("weight matrix must be K x (C*r*r)");
  }
  const int64_t ho = (h + 2 * pad - r) / stride + 1;
  const int64_t wo = (w + 2 * pad - r) / stride + 1;
  // Local im2col gather with zero padding.
  ShareTensor cols{ctx.party(), {c * r * r, ho * wo}, {}, x.meta};
  cols.data.resize(static_cast<size_t>(c * r * r * ho * wo));
  size_t idx = 0;
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t dy = 0; dy < r; ++dy) {
      for (int64_t dx = 0; dx < r; ++dx) {
        for (int64_t oy = 0; oy < ho; ++oy) {
          for (int64_t ox = 0; ox < wo; ++ox) {
            int64_t y = oy * stride + dy - pad;
            int64_t xx = ox * stride + dx - pad;
            cols.data[idx++] =
                (y < 0 || y >= h || xx < 0 || xx >= w)
                    ? 0
                    : x.data[static_cast<size_t>((ci * h + y) * w + xx)];
          }
        }
      }
    }
  }
  ShareTensor cols_acc = ext(ctx, cols, l_acc, x.meta.nonneg);
  ShareTensor y = gemm_ot(ctx, w_direct, cols_acc, x.meta.width, l_acc);
  y.shape = {k, ho, wo};
  return requant(ctx, y, l_out, s_out_exp, false);
}

}  // namespace otwin
