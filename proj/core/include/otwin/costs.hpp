#pragma once

#include <cstdint>
#include <stdexcept>

namespace otwin {

/// Parameters of the closed-form communication model. Every protocol charge
/// in the simulator is computed from these formulas, so metered totals and
/// formula predictions agree bit for bit.
struct CostModel {
  int64_t lambda = 128;          // security parameter, bits
  double relu_unit_coeff = 1.0;  // ReLU cost multiplier per element
  double ot_payload_factor = 1.0;  // messages carried per correlated OT

  void validate() const {
    if (lambda < 1) throw std::invalid_argument("lambda must be >= 1");
    if (relu_unit_coeff < 0 || ot_payload_factor < 0) {
      throw std::invalid_argument("cost coefficients must be non-negative");
    }
  }
};

struct NetworkProfile {
  double bandwidth_bytes_per_s = 0;
  double rtt_s = 0;

  void validate() const {
    if (bandwidth_bytes_per_s <= 0 || rtt_s <= 0) {
      throw std::invalid_argument("network profile values must be positive");
    }
  }
};

// LAN / WAN link parameters used for latency estimates.
inline NetworkProfile lan_profile() { return {377.0e6, 0.3e-3}; }
inline NetworkProfile wan_profile() { return {40.0e6, 80.0e-3}; }

namespace cost {

/// Extend an l1-bit share to l2 bits, per element.
inline int64_t ext_bits(int l1, int l2, bool msb, const CostModel& m) {
  if (msb) return 2 * m.lambda - l1 + l2 + 2;
  return m.lambda * (l1 + 1) + 13 * l1 + l2;
}

/// Arithmetic right shift by `shift` at fixed width l1, per element.
inline int64_t trunc_bits(int l1, int shift, bool msb, const CostModel& m) {
  if (msb) return 3 * m.lambda + l1 + shift + 20;
  return m.lambda * (l1 + 3) + 15 * l1 + shift + 20;
}

/// Shift by `shift` and discard the high bits (width l1 -> l1-shift).
inline int64_t tr_bits(int l1, int shift, bool msb, const CostModel& m) {
  if (msb) return m.lambda + 2;
  return m.lambda * (shift + 1) + 13 * shift + l1;
}

/// One 1-out-of-2 correlated OT carrying `payload_bits` of message.
inline int64_t ot_bits(int64_t payload_bits, const CostModel& m) {
  return m.lambda +
         static_cast<int64_t>(m.ot_payload_factor * static_cast<double>(payload_bits));
}

/// Offline cost of a bit-serial GEMM of an MxL plaintext weight matrix with
/// an LxN shared input: l_w * L * M OTs, each carrying an N-vector at l_acc.
inline int64_t gemm_offline_bits(int64_t M, int64_t L, int64_t N, int l_w,
                                 int l_acc, const CostModel& m) {
  return l_w * L * M * ot_bits(N * l_acc, m);
}

/// Online masked-input exchange of the GEMM.
inline int64_t gemm_online_bits(int64_t M, int64_t N, int l_acc,
                                const CostModel&) {
  return M * N * l_acc;
}

inline int64_t gemm_ot_count(int64_t M, int64_t L, int l_w) { return l_w * L * M; }

/// ReLU per element on an l-bit activation.
inline int64_t relu_bits(int l, const CostModel& m) {
  return static_cast<int64_t>(m.relu_unit_coeff * static_cast<double>(m.lambda) *
                              static_cast<double>(l) + 0.5);
}

/// Residual addition aligning both operands to a common (l_add, s_add).
inline int64_t residual_baseline_bits(int l_main, int l_res, int l_add,
                                      const CostModel& m) {
  return m.lambda * (l_main + l_res + 2 * l_add + 8);
}

/// Residual addition aligning only the residual to the main branch.
inline int64_t residual_simplified_bits(int l_main, int l_res,
                                        const CostModel& m) {
  return m.lambda * (l_main + l_res + 4);
}

}  // namespace cost

}  // namespace otwin
