#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "otwin/quant.hpp"
#include "otwin/winograd.hpp"

using namespace otwin;

TEST_CASE("standard and reweighted codebooks keep the plane count") {
  for (int lw = 2; lw <= 8; ++lw) {
    Codebook s = Codebook::standard(lw);
    Codebook r = Codebook::reweighted(lw);
    CHECK(s.importance().size() == static_cast<size_t>(lw));
    CHECK(r.importance().size() == static_cast<size_t>(lw));
    CHECK(s.magnitudes().size() <= (size_t{1} << lw));
    CHECK(r.magnitudes().size() <= (size_t{1} << lw));
    // Range extension: the reweighted top codeword beats the standard one.
    CHECK(r.max_magnitude() == (int64_t{1} << lw) + (int64_t{1} << (lw - 1)) - 1);
    CHECK(r.max_magnitude() > s.max_magnitude());
    CHECK(s.max_magnitude() == (int64_t{1} << lw) - 1);
  }
}

TEST_CASE("reweighted codebook instances") {
  Codebook r4 = reweight_bits(4);
  CHECK(r4.importance() == std::vector<int64_t>{16, 4, 2, 1});
  CHECK(r4.max_magnitude() == 23);

  Codebook r2 = reweight_bits(2);
  CHECK(r2.importance() == std::vector<int64_t>{4, 1});
  CHECK(r2.magnitudes() == std::vector<int64_t>{0, 1, 4, 5});

  CHECK_THROWS_AS(reweight_bits(1), std::invalid_argument);
}

TEST_CASE("per-tensor quantizer clamps and rounds half away from zero") {
  CHECK(quantize_per_tensor({0.5}, 4, 3).q[0] == 4);
  CHECK(quantize_per_tensor({10.0}, 4, 0).q[0] == 7);
  CHECK(quantize_per_tensor({-10.0}, 4, 0).q[0] == -8);
  CHECK(quantize_per_tensor({-0.5}, 4, 0).q[0] == -1);
  CHECK_THROWS_AS(quantize_per_tensor({1.0}, 17, 0), std::invalid_argument);
}

TEST_CASE("outlier detector") {
  std::vector<double> constant(100, 3.0);
  CHECK_FALSE(detect_outlier(constant, 6.0));

  Rng rng(808);
  std::vector<double> normal(4000);
  for (auto& v : normal) v = rng.next_normal();
  CHECK_FALSE(detect_outlier(normal, 6.0));

  std::vector<double> spiked = normal;
  spiked[100] = 10.0;  // ~10 sigma
  CHECK(detect_outlier(spiked, 6.0));

  CHECK(choose_codebook(spiked, 4, 6.0).is_reweighted());
  CHECK_FALSE(choose_codebook(normal, 4, 6.0).is_reweighted());
}

TEST_CASE("reweighted quantizer finds the nearest codeword") {
  Codebook r4 = Codebook::reweighted(4);
  auto zero = quantize_reweighted(0.0, 1.0, r4);
  CHECK(zero.magnitude == 0);
  CHECK(std::all_of(zero.bits.begin(), zero.bits.end(), [](int b) { return b == 0; }));

  Codebook s4 = Codebook::standard(4);
  auto max_code = quantize_reweighted(1.0, 1.0, s4);  // target 15
  CHECK(max_code.magnitude == 15);
  CHECK(max_code.bits == std::vector<int>{1, 1, 1, 1});

  // Re-weighted target 18 is hit exactly by {16, 2}.
  auto mid = quantize_reweighted(18.0 / 15.0, 1.0, r4);
  CHECK(mid.magnitude == 18);
  CHECK(mid.bits == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("reweighted quantizer is globally optimal") {
  // Exhaustive oracle over all bit vectors, independently of the codebook's
  // magnitude table.
  Rng rng(99);
  for (int lw = 2; lw <= 6; ++lw) {
    for (bool rw : {false, true}) {
      Codebook cb = rw ? Codebook::reweighted(lw) : Codebook::standard(lw);
      for (int it = 0; it < 200; ++it) {
        double wf = rng.next_normal() * 2.0;
        auto got = quantize_reweighted(wf, 1.5, cb);
        double target = std::abs(wf) * cb.normalizer() / 1.5;
        double best = 1e100;
        for (uint64_t bits = 0; bits < (uint64_t{1} << lw); ++bits) {
          int64_t mag = 0;
          for (int b = 0; b < lw; ++b) {
            if (bits & (uint64_t{1} << b)) mag += cb.weight_of_bit(b);
          }
          best = std::min(best, std::abs(target - static_cast<double>(mag)));
        }
        CHECK(std::abs(target - static_cast<double>(got.magnitude)) ==
              doctest::Approx(best));
      }
    }
  }
}

TEST_CASE("bit-level gradient follows the importance weights") {
  Codebook s4 = Codebook::standard(4);
  CHECK(grad_reweighted(1.0, 3, s4) == doctest::Approx(8.0 / 15.0));
  CHECK(grad_reweighted(0.0, 2, s4) == 0.0);
  // linearity
  CHECK(grad_reweighted(3.5, 1, s4) == doctest::Approx(3.5 * grad_reweighted(1.0, 1, s4)));
  // The reweighted top bit carries 2^lw.
  Codebook r4 = Codebook::reweighted(4);
  CHECK(grad_reweighted(1.0, 3, r4) == doctest::Approx(16.0 / 15.0));
}

TEST_CASE("perturbation omega") {
  TransformSet ts = transform_matrices(2, 3);
  Codebook cb = Codebook::standard(4);
  std::vector<double> w(9, 0.4);
  CHECK(perturbation_omega(0.0, w, 1, 1, ts.g, 4, cb, 3) == 0.0);

  // Weights already on codewords quantize exactly: zero omega.
  // Use an impulse kernel whose transform is g_mid outer g_mid with halves,
  // scale 2^2 puts every entry on an integer codeword.
  std::vector<double> impulse(9, 0.0);
  impulse[4] = 1.0;
  CHECK(perturbation_omega(2.5, impulse, 1, 1, ts.g, 4, cb, 2) ==
        doctest::Approx(0.0));

  // Omega is non-increasing in the weight width on a random layer.
  Rng rng(321);
  std::vector<double> layer(2 * 3 * 9);
  for (auto& v : layer) v = rng.next_normal();
  double prev = -1;
  for (int lw : {2, 4, 8}) {
    Codebook c = Codebook::standard(lw);
    int e = 0;
    {
      // calibrate on the transformed weights like the offline path does
      std::vector<double> wino;
      DMat kernel(3, 3);
      for (int64_t kc = 0; kc < 6; ++kc) {
        for (int i = 0; i < 9; ++i)
          kernel.v[static_cast<size_t>(i)] = layer[static_cast<size_t>(kc * 9 + i)];
        DMat t = dmul(dmul(ts.g, kernel), ts.g.transposed());
        wino.insert(wino.end(), t.v.begin(), t.v.end());
      }
      e = calibrate_scale_exp(wino, c);
    }
    double omega = perturbation_omega(1.0, layer, 2, 3, ts.g, lw, c, e);
    if (prev >= 0) CHECK(omega <= prev);
    prev = omega;
  }
}

TEST_CASE("ilp assignment is exact on exhaustive instances") {
  Rng rng(606);
  for (int inst = 0; inst < 100; ++inst) {
    PlanProblem p;
    const size_t L = 6;
    p.budget_bits = 0;
    int64_t total_min = 0, total_max = 0;
    for (size_t i = 0; i < L; ++i) {
      p.layer_names.push_back("layer" + std::to_string(i));
      std::vector<PlanChoice> row;
      int64_t mn = INT64_MAX, mx = 0;
      for (int j = 0; j < 3; ++j) {
        PlanChoice ch;
        ch.l_w = 2 + 2 * j;
        ch.l_a = 4;
        ch.cost_bits = static_cast<int64_t>(100 + rng.next_below(900)) * (j + 1);
        ch.omega = static_cast<double>(rng.next_below(1000)) / (j + 1.0);
        row.push_back(ch);
        mn = std::min(mn, ch.cost_bits);
        mx = std::max(mx, ch.cost_bits);
      }
      p.choices.push_back(row);
      total_min += mn;
      total_max += mx;
    }
    p.budget_bits = total_min + static_cast<int64_t>(rng.next_below(
                                    static_cast<uint64_t>(total_max - total_min + 1)));

    BitWidthPlan got = ilp_assign(p);
    REQUIRE(got.feasible);

    // Exhaustive 3^6 oracle.
    double best = 1e300;
    for (int mask = 0; mask < 729; ++mask) {
      int mm = mask;
      int64_t cost = 0;
      double omega = 0;
      for (size_t i = 0; i < L; ++i) {
        int j = mm % 3;
        mm /= 3;
        cost += p.choices[i][static_cast<size_t>(j)].cost_bits;
        omega += p.choices[i][static_cast<size_t>(j)].omega;
      }
      if (cost <= p.budget_bits) best = std::min(best, omega);
    }
    CHECK(got.total_omega == doctest::Approx(best));
    CHECK(got.total_cost_bits <= p.budget_bits);
  }
}

TEST_CASE("ilp edge cases") {
  PlanProblem p;
  p.layer_names = {"only"};
  p.choices = {{{2, 4, 100, 5.0}, {4, 4, 200, 1.0}, {8, 4, 400, 0.5}}};

  p.budget_bits = 1000;  // generous: argmin omega
  auto plan = ilp_assign(p);
  CHECK(plan.feasible);
  CHECK(plan.selected == std::vector<int>{2});

  p.budget_bits = 100;  // boundary: forced minimum cost
  plan = ilp_assign(p);
  CHECK(plan.feasible);
  CHECK(plan.selected == std::vector<int>{0});

  p.budget_bits = 99;  // infeasible
  plan = ilp_assign(p);
  CHECK_FALSE(plan.feasible);
  CHECK(plan.min_feasible_budget == 100);

  // Deterministic tie-break toward the smaller width.
  PlanProblem tie;
  tie.layer_names = {"a"};
  tie.choices = {{{2, 4, 100, 1.0}, {4, 4, 100, 1.0}}};
  tie.budget_bits = 100;
  CHECK(ilp_assign(tie).selected == std::vector<int>{0});
}

TEST_CASE("reweighted codebooks beat standard ones on outlier weights") {
  // Synthetic layers: normal core plus 1% outliers at 3x the normal max.
  int wins = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + static_cast<uint64_t>(seed));
    std::vector<double> w(500);
    double mx = 0;
    for (auto& v : w) {
      v = rng.next_normal();
      mx = std::max(mx, std::abs(v));
    }
    for (size_t i = 0; i < w.size(); i += 100) {
      w[i] = 3.0 * mx * (rng.next_below(2) ? 1.0 : -1.0);
    }
    double absmax = 0;
    for (double v : w) absmax = std::max(absmax, std::abs(v));
    auto mse_for = [&](const Codebook& cb) {
      double s_cb = absmax * static_cast<double>(cb.normalizer()) /
                    static_cast<double>(cb.max_magnitude());
      double mse = 0;
      for (double v : w) {
        double deq = quantize_reweighted(v, s_cb, cb).dequantized;
        mse += (v - deq) * (v - deq);
      }
      return mse / static_cast<double>(w.size());
    };
    double mse_std = mse_for(Codebook::standard(4));
    double mse_rw = mse_for(Codebook::reweighted(4));
    if (mse_rw <= mse_std) ++wins;
  }
  CHECK(wins >= 95);
}

TEST_CASE("ot plane count is identical for standard and reweighted codebooks") {
  for (int lw : {2, 3, 4, 6}) {
    CHECK(Codebook::standard(lw).importance().size() ==
          Codebook::reweighted(lw).importance().size());
  }
}
