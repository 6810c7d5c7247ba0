#include "otwin/quant.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace otwin {

Codebook::Codebook(int l_w, bool rw, std::vector<int64_t> importance)
    : l_w_(l_w), reweighted_(rw), importance_(std::move(importance)) {
  std::set<int64_t> mags;
  const size_t n = importance_.size();
  for (uint64_t bits = 0; bits < (uint64_t{1} << n); ++bits) {
    int64_t s = 0;
    for (size_t i = 0; i < n; ++i) {
      if (bits & (uint64_t{1} << i)) s += importance_[i];
    }
    mags.insert(s);
  }
  magnitudes_.assign(mags.begin(), mags.end());
}

Codebook Codebook::standard(int l_w) {
  if (l_w < 1) throw std::invalid_argument("codebook width must be >= 1");
  std::vector<int64_t> imp;
  for (int b = l_w - 1; b >= 0; --b) imp.push_back(int64_t{1} << b);
  return Codebook(l_w, false, std::move(imp));
}

Codebook Codebook::reweighted(int l_w) {
  if (l_w < 2) throw std::invalid_argument("re-weighted codebook needs l_w >= 2");
  std::vector<int64_t> imp;
  imp.push_back(int64_t{1} << l_w);
  for (int b = l_w - 2; b >= 0; --b) imp.push_back(int64_t{1} << b);
  return Codebook(l_w, true, std::move(imp));
}

int64_t Codebook::weight_of_bit(int b) const {
  if (b < 0 || b >= static_cast<int>(importance_.size())) {
    throw std::invalid_argument("bit index out of range");
  }
  return importance_[importance_.size() - 1 - static_cast<size_t>(b)];
}

int64_t Codebook::nearest_magnitude(double target) const {
  if (target < 0) target = -target;
  int64_t best = magnitudes_.front();
  double best_err = std::abs(target - static_cast<double>(best));
  for (int64_t m : magnitudes_) {
    double err = std::abs(target - static_cast<double>(m));
    if (err < best_err) {
      best = m;
      best_err = err;
    }
  }
  return best;
}

std::vector<int> Codebook::bits_for_magnitude(int64_t magnitude) const {
  // Importance sets are superincreasing (distinct powers of two), so the
  // greedy decomposition is exact.
  std::vector<int> bits(importance_.size(), 0);
  int64_t rest = magnitude;
  for (size_t i = 0; i < importance_.size(); ++i) {
    if (rest >= importance_[i]) {
      bits[importance_.size() - 1 - i] = 1;
      rest -= importance_[i];
    }
  }
  if (rest != 0) throw std::invalid_argument("magnitude not in the codebook");
  return bits;
}

QTensor quantize_per_tensor(const std::vector<double>& x, int l, int scale_exp) {
  if (l < 1 || l > 16) {
    throw std::invalid_argument("plaintext quantizer supports widths 1..16");
  }
  const double s = std::ldexp(1.0, scale_exp);
  const int64_t lo = -(int64_t{1} << (l - 1));
  const int64_t hi = (int64_t{1} << (l - 1)) - 1;
  QTensor out;
  out.width = l;
  out.scale_exp = scale_exp;
  out.q.reserve(x.size());
  for (double v : x) {
    double scaled = v * s;
    // round half away from zero
    double r = scaled >= 0 ? std::floor(scaled + 0.5) : std::ceil(scaled - 0.5);
    int64_t q = static_cast<int64_t>(r);
    out.q.push_back(std::clamp(q, lo, hi));
  }
  return out;
}

bool detect_outlier(const std::vector<double>& w, double tau) {
  if (w.size() < 2) return false;
  double mean = 0, mx = w[0];
  for (double v : w) {
    mean += v;
    mx = std::max(mx, v);
  }
  mean /= static_cast<double>(w.size());
  double var = 0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  if (var <= 0) return false;
  return (mx - mean) / std::sqrt(var) > tau;
}

Codebook reweight_bits(int l_w) { return Codebook::reweighted(l_w); }

Codebook choose_codebook(const std::vector<double>& w, int l_w, double tau) {
  if (l_w >= 2 && detect_outlier(w, tau)) return Codebook::reweighted(l_w);
  return Codebook::standard(l_w);
}

ReweightedCode quantize_reweighted(double w_f, double s, const Codebook& cb) {
  if (s <= 0) throw std::invalid_argument("scale must be positive");
  ReweightedCode out;
  out.sign = w_f < 0 ? -1 : 1;
  double target = std::abs(w_f) * static_cast<double>(cb.normalizer()) / s;
  out.magnitude = cb.nearest_magnitude(target);
  out.bits = cb.bits_for_magnitude(out.magnitude);
  out.dequantized = out.sign * s * static_cast<double>(out.magnitude) /
                    static_cast<double>(cb.normalizer());
  if (out.magnitude == 0) out.sign = 1;
  return out;
}

double grad_reweighted(double upstream, int b, const Codebook& cb) {
  return static_cast<double>(cb.weight_of_bit(b)) /
         static_cast<double>(cb.normalizer()) * upstream;
}

int64_t quantize_to_codeword(double w_f, int scale_exp, const Codebook& cb) {
  double target = std::abs(w_f) * std::ldexp(1.0, scale_exp);
  int64_t mag = cb.nearest_magnitude(target);
  return w_f < 0 ? -mag : mag;
}

int calibrate_scale_exp(const std::vector<double>& w, const Codebook& cb) {
  double mx = 0;
  for (double v : w) mx = std::max(mx, std::abs(v));
  if (mx == 0) return 0;
  // Largest e with mx * 2^e <= max codeword.
  int e = static_cast<int>(
      std::floor(std::log2(static_cast<double>(cb.max_magnitude()) / mx)));
  while (mx * std::ldexp(1.0, e) > static_cast<double>(cb.max_magnitude())) --e;
  while (mx * std::ldexp(1.0, e + 1) <= static_cast<double>(cb.max_magnitude())) ++e;
  return e;
}

double perturbation_omega(double tr_h, const std::vector<double>& w_float,
                          int64_t K, int64_t C, const DMat& g, int l_w,
                          const Codebook& cb, int scale_exp) {
  if (tr_h < 0) throw std::invalid_argument("hessian trace must be >= 0");
  const int64_t r = g.cols;
  if (w_float.size() != static_cast<size_t>(K * C * r * r)) {
    throw std::invalid_argument("weight tensor size mismatch");
  }
  const double inv_s = std::ldexp(1.0, -scale_exp);
  double err2 = 0;
  DMat kernel(r, r);
  const DMat gt = g.transposed();
  for (int64_t kc = 0; kc < K * C; ++kc) {
    for (int64_t i = 0; i < r * r; ++i) {
      kernel.v[static_cast<size_t>(i)] = w_float[static_cast<size_t>(kc * r * r + i)];
    }
    DMat wino = dmul(dmul(g, kernel), gt);
    for (double v : wino.v) {
      double deq = static_cast<double>(quantize_to_codeword(v, scale_exp, cb)) * inv_s;
      err2 += (v - deq) * (v - deq);
    }
  }
  return tr_h * err2;
}

namespace {

struct SearchState {
  const PlanProblem* p;
  std::vector<double> omega_suffix_min;   // min omega achievable from layer i on
  std::vector<int64_t> cost_suffix_min;   // min cost achievable from layer i on
  std::vector<int> best;
  double best_omega = 0;
  bool have_best = false;
  std::vector<int> cur;

  void dfs(size_t i, int64_t cost_so_far, double omega_so_far) {
    const auto& layers = p->choices;
    if (cost_so_far + cost_suffix_min[i] > p->budget_bits) return;
    if (have_best) {
      double lb = omega_so_far + omega_suffix_min[i];
      if (lb > best_omega) return;
      // Equal lower bound may still beat the incumbent lexicographically, so
      // only prune on strictly worse bounds.
    }
    if (i == layers.size()) {
      bool better = !have_best || omega_so_far < best_omega ||
                    (omega_so_far == best_omega && lex_less(cur, best));
      if (better) {
        best = cur;
        best_omega = omega_so_far;
        have_best = true;
      }
      return;
    }
    for (size_t j = 0; j < layers[i].size(); ++j) {
      cur[i] = static_cast<int>(j);
      dfs(i + 1, cost_so_far + layers[i][j].cost_bits,
          omega_so_far + layers[i][j].omega);
    }
    cur[i] = 0;
  }

  bool lex_less(const std::vector<int>& a, const std::vector<int>& b) const {
    for (size_t i = 0; i < a.size(); ++i) {
      int wa = p->choices[i][static_cast<size_t>(a[i])].l_w;
      int wb = p->choices[i][static_cast<size_t>(b[i])].l_w;
      if (wa != wb) return wa < wb;
    }
    return false;
  }
};

}  // namespace

BitWidthPlan ilp_assign(const PlanProblem& problem) {
  if (problem.choices.empty()) {
    return {true, 0, {}, 0, 0.0};
  }
  for (const auto& layer : problem.choices) {
    if (layer.empty()) throw std::invalid_argument("layer without width choices");
  }
  const size_t L = problem.choices.size();
  BitWidthPlan plan;
  int64_t min_budget = 0;
  for (const auto& layer : problem.choices) {
    int64_t mn = layer.front().cost_bits;
    for (const auto& ch : layer) mn = std::min(mn, ch.cost_bits);
    min_budget += mn;
  }
  plan.min_feasible_budget = min_budget;
  if (min_budget > problem.budget_bits) {
    plan.feasible = false;
    return plan;
  }

  SearchState st;
  st.p = &problem;
  st.cur.assign(L, 0);
  st.omega_suffix_min.assign(L + 1, 0.0);
  st.cost_suffix_min.assign(L + 1, 0);
  for (size_t i = L; i-- > 0;) {
    double mo = problem.choices[i].front().omega;
    int64_t mc = problem.choices[i].front().cost_bits;
    for (const auto& ch : problem.choices[i]) {
      mo = std::min(mo, ch.omega);
      mc = std::min(mc, ch.cost_bits);
    }
    st.omega_suffix_min[i] = st.omega_suffix_min[i + 1] + mo;
    st.cost_suffix_min[i] = st.cost_suffix_min[i + 1] + mc;
  }
  st.dfs(0, 0, 0.0);

  plan.feasible = st.have_best;
  if (!plan.feasible) return plan;
  plan.selected = st.best;
  for (size_t i = 0; i < L; ++i) {
    const auto& ch = problem.choices[i][static_cast<size_t>(st.best[i])];
    plan.total_cost_bits += ch.cost_bits;
    plan.total_omega += ch.omega;
  }
  return plan;
}

}  // namespace otwin
