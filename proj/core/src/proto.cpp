#include "otwin/proto.hpp"

#include <functional>

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

/// Functional-oracle pattern shared by the conversion protocols: the client
/// forwards its share, the server reconstructs, maps each signed value and
/// re-shares the result under fresh server randomness.
ShareTensor server_map(PartyCtx& ctx, const ShareTensor& x,
                       const BitWidthMeta& out_meta,
                       const std::function<i128(i128)>& f) {
  ShareTensor out{ctx.party(), x.shape, {}, out_meta};
  out.data.resize(x.data.size());
  if (ctx.is_server()) {
    std::vector<uint64_t> peer = ctx.recv();
    if (peer.size() != x.data.size()) {
      throw std::invalid_argument("share size mismatch in conversion");
    }
    std::vector<uint64_t> client_new(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) {
      uint64_t plain = reduce(x.data[i] + peer[i], x.meta.width);
      uint64_t mapped = from_signed(f(signed_value(plain, x.meta)), out_meta.width);
      out.data[i] = ctx.rng().next_ring(out_meta.width);
      client_new[i] = reduce(mapped - out.data[i], out_meta.width);
    }
    ctx.send(client_new);
  } else {
    ctx.send(x.data);
    out.data = ctx.recv();
  }
  return out;
}

ShareTensor server_map2(PartyCtx& ctx, const ShareTensor& a,
                        const ShareTensor& b, const BitWidthMeta& out_meta,
                        const std::function<i128(i128, i128)>& f) {
  if (a.numel() != b.numel()) {
    throw std::invalid_argument("operand shape mismatch");
  }
  ShareTensor out{ctx.party(), a.shape, {}, out_meta};
  out.data.resize(a.data.size());
  if (ctx.is_server()) {
    std::vector<uint64_t> peer_a = ctx.recv();
    std::vector<uint64_t> peer_b = ctx.recv();
    std::vector<uint64_t> client_new(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) {
      uint64_t pa = reduce(a.data[i] + peer_a[i], a.meta.width);
      uint64_t pb = reduce(b.data[i] + peer_b[i], b.meta.width);
      i128 r = f(signed_value(pa, a.meta), signed_value(pb, b.meta));
      uint64_t mapped = from_signed(r, out_meta.width);
      out.data[i] = ctx.rng().next_ring(out_meta.width);
      client_new[i] = reduce(mapped - out.data[i], out_meta.width);
    }
    ctx.send(client_new);
  } else {
    ctx.send(a.data);
    ctx.send(b.data);
    out.data = ctx.recv();
  }
  return out;
}

i128 shift_to_scale(i128 v, int from_exp, int to_exp) {
  int t = from_exp - to_exp;
  if (t >= 0) return v >> t;
  return v << (-t);
}

}  // namespace

void ot_send(OtEndpoint ep, const std::vector<uint8_t>& m0,
             const std::vector<uint8_t>& m1, Phase phase,
             const std::string& tag) {
  if (ep.role != OtRole::Sender) throw std::invalid_argument("endpoint is not a sender");
  if (m0.size() != m1.size()) throw std::invalid_argument("OT message length mismatch");
  PartyCtx& ctx = ep.ctx;
  ctx.set_tag(tag);
  ctx.charge(tag, phase, cost::ot_bits(8 * static_cast<int64_t>(m0.size()),
                                       ctx.cost_model()));
  std::vector<uint8_t> choice_msg = ctx.recv_bytes();
  if (choice_msg.size() != 1 || choice_msg[0] > 1) {
    throw std::invalid_argument("malformed OT choice");
  }
  // The choice bit is consumed here and only here; it never reaches the
  // caller on the sender side.
  ctx.send_bytes(choice_msg[0] ? m1 : m0, phase);
}

std::vector<uint8_t> ot_recv(OtEndpoint ep, int choice) {
  if (ep.role != OtRole::Receiver) {
    throw std::invalid_argument("endpoint is not a receiver");
  }
  if (choice != 0 && choice != 1) throw std::invalid_argument("choice must be a bit");
  PartyCtx& ctx = ep.ctx;
  ctx.set_tag("OT");
  ctx.send_bytes({static_cast<uint8_t>(choice)}, Phase::Offline);
  return ctx.recv_bytes();
}

std::vector<int64_t> standard_importance(int l_w) {
  if (l_w < 1) throw std::invalid_argument("weight width must be >= 1");
  std::vector<int64_t> b;
  for (int i = l_w - 1; i >= 0; --i) b.push_back(int64_t{1} << i);
  return b;
}

void QuantWeights::validate() const {
  if (rows <= 0 || cols <= 0 ||
      values.size() != static_cast<size_t>(rows * cols)) {
    throw std::invalid_argument("weight matrix dimension mismatch");
  }
  if (importance.empty()) throw std::invalid_argument("empty importance set");
  // Representability: |w| must be a subset sum of the importance set. All
  // supported sets are descending distinct powers of two, hence
  // superincreasing, so greedy membership is exact.
  int64_t tail = 0;
  for (size_t i = importance.size(); i-- > 0;) {
    if (importance[i] <= tail) {
      throw std::invalid_argument("importance set must be superincreasing");
    }
    tail += importance[i];
  }
  for (int64_t v : values) {
    int64_t mag = v < 0 ? -v : v;
    for (int64_t b : importance) {
      if (mag >= b) mag -= b;
    }
    if (mag != 0) {
      throw std::invalid_argument(
          "weight magnitude not representable in the importance set");
    }
  }
}

QuantWeights make_weights(int64_t rows, int64_t cols,
                          std::vector<int64_t> values, int l_w, int scale_exp) {
  QuantWeights w{rows, cols, std::move(values), standard_importance(l_w),
                 scale_exp};
  w.validate();
  return w;
}

ShareTensor gemm_ot(PartyCtx& ctx, const QuantWeights& w, const ShareTensor& x,
                    int l_x, int l_acc, const std::string& tag) {
  check_width(l_acc);
  if (x.shape.size() != 2 || x.shape[0] != w.cols) {
    throw std::invalid_argument("gemm dimension mismatch");
  }
  if (x.meta.width != l_acc) {
    throw std::invalid_argument("gemm input shares must be held at l_acc");
  }
  const int mag_bits = std::max(w.bit_planes(), bit_length(w.max_magnitude()));
  if (l_acc < l_x + mag_bits + ceil_log2(w.cols)) {
    throw std::invalid_argument("accumulator width unsafe for this GEMM");
  }
  const int64_t M = w.rows, L = w.cols, N = x.shape[1];
  const CostModel& cm = ctx.cost_model();
  ctx.set_tag(tag);

  BitWidthMeta out_meta{l_acc, x.meta.scale_exp + w.scale_exp, false};
  ShareTensor out{ctx.party(), {M, N}, {}, out_meta};
  out.data.assign(static_cast<size_t>(M * N), 0);

  if (ctx.is_server()) {
    ctx.charge(tag, Phase::Offline,
               cost::gemm_offline_bits(M, L, N, w.bit_planes(), l_acc, cm));
    // Offline: the client's correlation mask and the server's pad matrix.
    std::vector<uint64_t> r_mask = ctx.recv();
    std::vector<uint64_t> pads(static_cast<size_t>(M * N));
    for (auto& p : pads) p = ctx.rng().next_ring(l_acc);
    ctx.send(pads, Phase::Offline);
    // Online: masked input; the server finishes the product locally.
    ctx.charge(tag, Phase::Online, cost::gemm_online_bits(M, N, l_acc, cm));
    std::vector<uint64_t> d = ctx.recv();
    for (int64_t j = 0; j < L; ++j) {
      for (int64_t n = 0; n < N; ++n) {
        const size_t idx = static_cast<size_t>(j * N + n);
        d[idx] = reduce(d[idx] + r_mask[idx] + x.data[idx], l_acc);
      }
    }
    for (int64_t i = 0; i < M; ++i) {
      for (int64_t n = 0; n < N; ++n) {
        uint64_t acc = 0;
        for (int64_t j = 0; j < L; ++j) {
          acc += static_cast<uint64_t>(w.values[static_cast<size_t>(i * L + j)]) *
                 d[static_cast<size_t>(j * N + n)];
        }
        const size_t o = static_cast<size_t>(i * N + n);
        out.data[o] = reduce(acc + pads[o], l_acc);
      }
    }
  } else {
    std::vector<uint64_t> r_mask(x.data.size());
    for (auto& r : r_mask) r = ctx.rng().next_ring(l_acc);
    ctx.send(r_mask, Phase::Offline);
    std::vector<uint64_t> pads = ctx.recv();
    std::vector<uint64_t> d(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) {
      d[i] = reduce(x.data[i] - r_mask[i], l_acc);
    }
    ctx.send(d, Phase::Online);
    for (size_t o = 0; o < out.data.size(); ++o) {
      out.data[o] = reduce(-pads[o], l_acc);
    }
  }
  return out;
}

ShareTensor ext(PartyCtx& ctx, const ShareTensor& x, int l2, bool msb_cost) {
  const int l1 = x.meta.width;
  if (l2 <= l1) throw std::invalid_argument("extension target must exceed width");
  check_width(l2);
  ctx.set_tag("Ext");
  if (ctx.is_server()) {
    ctx.charge("Ext", Phase::Online,
               cost::ext_bits(l1, l2, msb_cost, ctx.cost_model()) * x.numel());
  }
  BitWidthMeta out_meta{l2, x.meta.scale_exp, x.meta.nonneg};
  return server_map(ctx, x, out_meta, [](i128 v) { return v; });
}

ShareTensor trunc(PartyCtx& ctx, const ShareTensor& x, int shift, bool msb_cost) {
  const int l1 = x.meta.width;
  if (shift <= 0 || shift >= l1) {
    throw std::invalid_argument("truncation shift must be in (0, width)");
  }
  ctx.set_tag("Trunc");
  if (ctx.is_server()) {
    ctx.charge("Trunc", Phase::Online,
               cost::trunc_bits(l1, shift, msb_cost, ctx.cost_model()) * x.numel());
  }
  BitWidthMeta out_meta{l1, x.meta.scale_exp - shift, x.meta.nonneg};
  return server_map(ctx, x, out_meta, [shift](i128 v) { return v >> shift; });
}

ShareTensor truncate_reduce(PartyCtx& ctx, const ShareTensor& x, int shift,
                            bool msb_cost) {
  const int l1 = x.meta.width;
  if (shift <= 0 || shift >= l1) {
    throw std::invalid_argument("truncation shift must be in (0, width)");
  }
  ctx.set_tag("TR");
  if (ctx.is_server()) {
    ctx.charge("TR", Phase::Online,
               cost::tr_bits(l1, shift, msb_cost, ctx.cost_model()) * x.numel());
  }
  BitWidthMeta out_meta{l1 - shift, x.meta.scale_exp - shift, x.meta.nonneg};
  return server_map(ctx, x, out_meta, [shift](i128 v) { return v >> shift; });
}

ShareTensor narrow(const ShareTensor& x, int l2) {
  if (l2 > x.meta.width) {
    throw std::invalid_argument("narrow cannot grow the width");
  }
  check_width(l2);
  ShareTensor out = x;
  out.meta.width = l2;
  for (auto& v : out.data) v = reduce(v, l2);
  return out;
}

ShareTensor requant(PartyCtx& ctx, const ShareTensor& x, int l2, int s2_exp,
                    bool msb_cost) {
  check_width(l2);
  const int t = x.meta.scale_exp - s2_exp;
  if (t < 0) {
    throw std::invalid_argument("requant scale ratio must be a power of two >= 1");
  }
  ShareTensor cur = x;
  if (t > 0) cur = trunc(ctx, cur, t, msb_cost);
  if (l2 > cur.meta.width) {
    cur = ext(ctx, cur, l2, msb_cost);
  } else if (l2 < cur.meta.width) {
    cur = narrow(cur, l2);
  }
  return cur;
}

ShareTensor relu(PartyCtx& ctx, const ShareTensor& x) {
  ctx.set_tag("ReLU");
  if (ctx.is_server()) {
    ctx.charge("ReLU", Phase::Online,
               cost::relu_bits(x.meta.width, ctx.cost_model()) * x.numel());
  }
  BitWidthMeta out_meta{x.meta.width, x.meta.scale_exp, true};
  return server_map(ctx, x, out_meta, [](i128 v) { return v < 0 ? i128(0) : v; });
}

ShareTensor residual_add_baseline(PartyCtx& ctx, const ShareTensor& main,
                                  const ShareTensor& res, int l_add,
                                  int s_add_exp) {
  check_width(l_add);
  ctx.set_tag("Residual");
  if (ctx.is_server()) {
    ctx.charge("Residual", Phase::Online,
               cost::residual_baseline_bits(main.meta.width, res.meta.width,
                                            l_add, ctx.cost_model()) *
                   main.numel());
  }
  const int sm = main.meta.scale_exp, sr = res.meta.scale_exp;
  BitWidthMeta out_meta{l_add, s_add_exp, false};
  return server_map2(ctx, main, res, out_meta, [=](i128 a, i128 b) {
    return shift_to_scale(a, sm, s_add_exp) + shift_to_scale(b, sr, s_add_exp);
  });
}

ShareTensor residual_add_simplified(PartyCtx& ctx, const ShareTensor& main,
                                    const ShareTensor& res, int l_out,
                                    int s_out_exp, bool range_check) {
  check_width(l_out);
  ctx.set_tag("Residual");
  if (ctx.is_server()) {
    ctx.charge("Residual", Phase::Online,
               cost::residual_simplified_bits(main.meta.width, res.meta.width,
                                              ctx.cost_model()) *
                   main.numel());
  }
  const int sm = main.meta.scale_exp, sr = res.meta.scale_exp;
  BitWidthMeta out_meta{l_out, s_out_exp, false};
  return server_map2(ctx, main, res, out_meta, [=](i128 a, i128 b) {
    i128 sum = shift_to_scale(a, sm, s_out_exp) + shift_to_scale(b, sr, s_out_exp);
    if (range_check) {
      const i128 lo = -(i128(1) << (l_out - 1));
      const i128 hi = (i128(1) << (l_out - 1)) - 1;
      if (sum < lo || sum > hi) {
        throw std::logic_error(
            "simplified residual sum exceeds the main-branch width");
      }
    }
    return sum;
  });
}

}  // namespace otwin
