#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otwin/costs.hpp"
#include "otwin/mat.hpp"

namespace otwin {

/// Per-layer bit-importance set and the magnitude codewords it spans.
/// Standard form {2^(l_w-1), ..., 2, 1}; re-weighted form raises the top
/// weight to 2^l_w (and drops 2^(l_w-1)) so outliers fit without extra bits.
class Codebook {
 public:
  static Codebook standard(int l_w);
  static Codebook reweighted(int l_w);

  int width() const { return l_w_; }
  bool is_reweighted() const { return reweighted_; }
  const std::vector<int64_t>& importance() const { return importance_; }

  /// Importance of bit position b (b = 0 is the least significant plane).
  int64_t weight_of_bit(int b) const;

  /// Distinct representable magnitudes, ascending. At most 2^l_w entries.
  const std::vector<int64_t>& magnitudes() const { return magnitudes_; }
  int64_t max_magnitude() const { return magnitudes_.back(); }
  int64_t normalizer() const { return (int64_t{1} << l_w_) - 1; }

  /// Nearest codeword to |target|; ties break toward the smaller codeword.
  int64_t nearest_magnitude(double target_magnitude) const;

  /// Bit vector (LSB first) realizing a representable magnitude.
  std::vector<int> bits_for_magnitude(int64_t magnitude) const;

 private:
  Codebook(int l_w, bool rw, std::vector<int64_t> importance);

  int l_w_;
  bool reweighted_;
  std::vector<int64_t> importance_;  // descending
  std::vector<int64_t> magnitudes_;  // ascending, unique
};

struct QTensor {
  std::vector<int64_t> q;  // clamped signed integers
  int width = 0;
  int scale_exp = 0;
};

/// Uniform symmetric quantizer: clamp(round(x * 2^scale_exp)) into l bits
/// two's complement. Round half away from zero.
QTensor quantize_per_tensor(const std::vector<double>& x, int l, int scale_exp);

/// Outlier score (max - mean) / std exceeds tau. Degenerate tensors (std == 0)
/// never flag.
bool detect_outlier(const std::vector<double>& w, double tau);

Codebook reweight_bits(int l_w);

/// Standard codebook unless the layer weights flag as outliers.
Codebook choose_codebook(const std::vector<double>& w, int l_w, double tau);

struct ReweightedCode {
  std::vector<int> bits;  // LSB first over the importance set
  int sign = 1;
  int64_t magnitude = 0;
  double dequantized = 0;  // s * magnitude / (2^l_w - 1), signed
};

/// Nearest-codeword assignment of w_f * (2^l_w - 1) / s over the codebook.
ReweightedCode quantize_reweighted(double w_f, double s, const Codebook& cb);

/// Gradient of the bit-level parametrization: B[b] / (2^l_w - 1) * upstream.
double grad_reweighted(double upstream, int b, const Codebook& cb);

/// Quantize a float value to a signed codeword at a power-of-two scale.
int64_t quantize_to_codeword(double w_f, int scale_exp, const Codebook& cb);

/// Largest power-of-two scale exponent that keeps max|w| within the codebook.
int calibrate_scale_exp(const std::vector<double>& w, const Codebook& cb);

/// Hessian-trace-weighted squared quantization error of the Winograd-domain
/// weights: trH * || Quant(G W G^T) - G W G^T ||_2^2 summed over all kernels.
/// `w_float` is laid out K*C*r*r row-major.
double perturbation_omega(double tr_h, const std::vector<double>& w_float,
                          int64_t K, int64_t C, const DMat& g, int l_w,
                          const Codebook& cb, int scale_exp);

// --- communication-constrained bit-width assignment ---

struct PlanChoice {
  int l_w = 0;
  int l_a = 0;
  int64_t cost_bits = 0;
  double omega = 0;
};

struct PlanProblem {
  std::vector<std::string> layer_names;
  std::vector<std::vector<PlanChoice>> choices;  // per layer, width-ascending
  int64_t budget_bits = 0;
};

struct BitWidthPlan {
  bool feasible = false;
  int64_t min_feasible_budget = 0;  // filled when infeasible
  std::vector<int> selected;        // index into choices[i]
  int64_t total_cost_bits = 0;
  double total_omega = 0;
};

/// Exact minimizer of total omega under the communication budget. Branch and
/// bound with per-layer lower bounds; deterministic tie-break toward the
/// lexicographically smaller width vector.
BitWidthPlan ilp_assign(const PlanProblem& problem);

struct ConvLayerDims {
  int64_t h = 0, w = 0, c = 0, k = 0;
  int r = 3;
  int stride = 1;
};

/// Closed-form full-pipeline communication of one conv layer at the given
/// widths, equal to what the meter records when the layer runs. Defined in
/// network.cpp next to the layer lowering it mirrors.
int64_t layer_comm_cost(const ConvLayerDims& dims, int l_w, int l_a,
                        bool optimized, const CostModel& model);

}  // namespace otwin
