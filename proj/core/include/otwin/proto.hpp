#pragma once

#include <optional>
#include <string>
#include <vector>

#include "otwin/net.hpp"
#include "otwin/ring.hpp"

namespace otwin {

enum class OtRole { Sender, Receiver };

struct OtEndpoint {
  PartyCtx& ctx;
  OtRole role;
};

/// 1-out-of-2 OT, functional endpoint. The receiver's choice bit is routed
/// through the channel so the sender side can answer, but it is never part of
/// the sender's application-visible state: ot_send returns nothing.
/// Charged lambda + ot_payload_factor * 8*len(m0) bits on the sender side.
void ot_send(OtEndpoint ep, const std::vector<uint8_t>& m0,
             const std::vector<uint8_t>& m1, Phase phase = Phase::Offline,
             const std::string& tag = "OT");
std::vector<uint8_t> ot_recv(OtEndpoint ep, int choice);

/// Server-held quantized weight matrix for the bit-serial GEMM. Values are
/// sign-magnitude integers; `importance` is the per-bit weight set (descending)
/// whose size is the number of OT bit planes charged per entry. The client
/// side of the protocol may read only the public fields (dims, plane count,
/// scale), never `values`.
struct QuantWeights {
  int64_t rows = 0;  // M
  int64_t cols = 0;  // L
  std::vector<int64_t> values;      // row-major, signed
  std::vector<int64_t> importance;  // bit importance set, descending
  int scale_exp = 0;

  int bit_planes() const { return static_cast<int>(importance.size()); }
  int64_t max_magnitude() const {
    int64_t s = 0;
    for (int64_t b : importance) s += b;
    return s;
  }
  /// Every magnitude must be a subset sum of the importance set.
  void validate() const;
};

/// Standard binary importance set {2^(l_w-1), ..., 2, 1}.
std::vector<int64_t> standard_importance(int l_w);

QuantWeights make_weights(int64_t rows, int64_t cols,
                          std::vector<int64_t> values, int l_w, int scale_exp);

/// Bit-serial OT-based GEMM of a plaintext MxL weight matrix with an LxN
/// shared input held at width l_acc. `l_x` is the logical bit width of the
/// input values (used for the accumulation-overflow precondition). Offline:
/// l_w*L*M OTs each carrying an N-vector at l_acc bits; online: the masked
/// input exchange at M*N*l_acc bits. The result never carries the nonneg flag.
ShareTensor gemm_ot(PartyCtx& ctx, const QuantWeights& w, const ShareTensor& x,
                    int l_x, int l_acc, const std::string& tag = "GemmOT");

/// Extend an l1-bit share to l2 > l1 bits preserving the signed value
/// (unsigned value when the input is flagged nonneg).
ShareTensor ext(PartyCtx& ctx, const ShareTensor& x, int l2, bool msb_cost);

/// Arithmetic right shift by `shift` at fixed width; scale_exp drops by shift.
ShareTensor trunc(PartyCtx& ctx, const ShareTensor& x, int shift, bool msb_cost);

/// Shift right by `shift` and drop the high bits: width l1 -> l1 - shift.
ShareTensor truncate_reduce(PartyCtx& ctx, const ShareTensor& x, int shift,
                            bool msb_cost);

/// Local width reduction (discard high share bits). Free: no communication.
ShareTensor narrow(const ShareTensor& x, int l2);

/// Composite re-quantization from (width, scale) to (l2, s2_exp): truncate by
/// the scale ratio, then extend or narrow to the target width. Cost is the sum
/// of the emitted parts.
ShareTensor requant(PartyCtx& ctx, const ShareTensor& x, int l2, int s2_exp,
                    bool msb_cost);

/// ReLU over shares; output flagged nonneg. Charged
/// relu_unit_coeff * lambda * width bits per element, online.
ShareTensor relu(PartyCtx& ctx, const ShareTensor& x);

/// Residual addition, baseline form: align both operands to (l_add, s_add),
/// then add. Atomic charge lambda*(l_main + l_res + 2*l_add + 8) per element.
ShareTensor residual_add_baseline(PartyCtx& ctx, const ShareTensor& main,
                                  const ShareTensor& res, int l_add, int s_add_exp);

/// Residual addition, simplified form: re-quantize the main branch to
/// (l_out, s_out), align the residual to it, add. Atomic charge
/// lambda*(l_main + l_res + 4) per element. When `range_check` is set the
/// server asserts the sum is representable at l_out (simulator-side guard).
ShareTensor residual_add_simplified(PartyCtx& ctx, const ShareTensor& main,
                                    const ShareTensor& res, int l_out,
                                    int s_out_exp, bool range_check = true);

}  // namespace otwin
