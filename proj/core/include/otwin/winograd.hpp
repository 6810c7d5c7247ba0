#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otwin/mat.hpp"
#include "otwin/proto.hpp"
#include "otwin/quant.hpp"
#include "otwin/ring.hpp"

namespace otwin {

/// Transform matrices of F(m x m, r x r). A and B are integer-valued so the
/// online feature and output transforms are pure local lincombs; G is rational
/// and is only ever applied offline to float weights, where its fractions are
/// absorbed by the weight quantization scale.
struct TransformSet {
  int m = 0;
  int r = 0;
  int n = 0;       // m + r - 1
  IMat a;          // n x m
  IMat b;          // n x n
  DMat g;          // n x r
  // Smallest power of two making 2^g_shift * G integral, when one exists
  // (F(2,3): g_shift = 1). Exact integer weight lifting needs it.
  std::optional<int> g_shift;
  std::optional<IMat> g_scaled;  // 2^g_shift * G
};

/// Supported instances: (m, r) in {(2,3), (4,3)}.
TransformSet transform_matrices(int m, int r);

/// Bits of headroom a transform needs: ceil(max_j log2 ||M[:,j]||_1), doubled
/// for the two-sided M^T X M form.
int ext_bits_for_transform(const IMat& m, bool two_sided);

/// Tiling of a C x H x W input into overlapping n x n tiles aligned with the
/// m x m output tile grid (stride-1 same convolution). Indices of SIZE_MAX
/// mark zero padding. The same plan applies to plaintext data or to either
/// party's shares, so tiling is always a local operation.
struct TilePlan {
  int64_t h = 0, w = 0, c = 0;
  int m = 0, r = 0, n = 0, pad = 0;
  int64_t tiles_y = 0, tiles_x = 0;
  int64_t tile_count() const { return tiles_y * tiles_x; }
  std::vector<size_t> gather;  // C*T*n*n entries into C*H*W, SIZE_MAX = pad
};

TilePlan make_tile_plan(int64_t h, int64_t w, int64_t c, int m, int r, int pad);

/// Gather data through a tile plan: out[c][t][u][v] layout C*T*n*n.
std::vector<uint64_t> tile_gather(const TilePlan& plan,
                                  const std::vector<uint64_t>& chw);

/// Scatter K*T*m*m tiles back to K*H*W.
std::vector<uint64_t> untile_scatter(const TilePlan& plan, int64_t k,
                                     const std::vector<uint64_t>& tiles);

/// out = left * X * right per tile, elementwise mod 2^width. X tiles are
/// a x a; out tiles are left.rows x right.cols.
std::vector<uint64_t> sandwich_tiles(const IMat& left, const IMat& right,
                                     const std::vector<uint64_t>& tiles,
                                     int64_t tile_count, int64_t a, int width);

/// Widths and quantization points of one QWinConv invocation.
struct QWinConvConfig {
  int64_t h = 0, w = 0, c = 0, k = 0;
  int m = 2, r = 3;
  int pad = 1;
  int l_a = 0;            // input activation width
  int l_w = 0;            // Winograd-domain weight planes
  int l_feature_ext = 0;  // width after the feature-transform extension
  int l_acc = 0;          // GEMM accumulator width
  int l_out_ext = 0;      // width after the output-transform extension
  int l_out = 0;          // output width
  int s_out_exp = 0;      // output scale exponent

  void validate(int64_t weight_max_magnitude) const;
};

/// Derive minimal safe widths from the transform column norms.
QWinConvConfig make_qwinconv_config(int64_t h, int64_t w, int64_t c, int64_t k,
                                    int m, int r, int l_a, int l_w,
                                    int64_t weight_max_magnitude, int l_out,
                                    int s_out_exp);

/// Winograd-domain quantized weights: per position (u,v) a K x C integer
/// matrix, all positions sharing one scale and importance set.
struct WinogradWeights {
  int n = 0;
  int64_t k = 0, c = 0;
  std::vector<int64_t> values;      // [(u*n+v)*K + ko]*C + ci
  std::vector<int64_t> importance;  // descending
  int scale_exp = 0;

  int bit_planes() const { return static_cast<int>(importance.size()); }
  int64_t max_magnitude_bound() const {
    int64_t s = 0;
    for (int64_t b : importance) s += b;
    return s;
  }
  QuantWeights position_matrix(int u, int v) const;
};

/// Offline weight path: transform float weights to the Winograd domain and
/// quantize them on the codebook at a calibrated power-of-two scale. Pure
/// server-side work, zero communication.
WinogradWeights weight_transform_offline(const std::vector<double>& w_float,
                                         int64_t k, int64_t c,
                                         const TransformSet& ts,
                                         const Codebook& cb,
                                         std::optional<int> scale_exp = {});

/// Exact integer lifting of already-quantized r x r weights through the scaled
/// transform 2^g_shift * G. The result computes the same convolution as the
/// direct weights bit for bit (the 2*g_shift scale surplus lands in
/// scale_exp). Only instances with integral scaled G support this (m = 2).
WinogradWeights lift_direct_weights(const std::vector<int64_t>& w_direct,
                                    int64_t k, int64_t c, int w_scale_exp,
                                    const TransformSet& ts);

/// The composed quantized Winograd convolution protocol: extension before the
/// feature transform, local B^T X B, n^2 batched GEMMs of (K x C) x (C x T),
/// extension before the output transform, local A^T [.] A, output requant.
ShareTensor qwinconv(PartyCtx& ctx, const ShareTensor& x,
                     const WinogradWeights& weights, const QWinConvConfig& cfg);

/// Plaintext oracle: standard integer convolution with the same quantization
/// points (accumulator width, wraparound, output requant) as qwinconv.
PlainTensor direct_quant_conv(const PlainTensor& x,
                              const std::vector<int64_t>& w_direct, int64_t k,
                              int w_scale_exp, int r, int stride, int pad,
                              int l_acc, int l_out, int s_out_exp);

/// The same direct convolution over shares (the non-Winograd baseline):
/// im2col gather, extension to l_acc, one OT GEMM, output requant.
ShareTensor direct_conv_protocol(PartyCtx& ctx, const ShareTensor& x,
                                 const QuantWeights& w_direct, int64_t k, int r,
                                 int stride, int pad, int l_acc, int l_out,
                                 int s_out_exp);

}  // namespace otwin
