#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "otwin/network.hpp"
#include "otwin/report.hpp"

namespace otwin {

/// Budget cannot be met; carries the minimum feasible budget in bits.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, int64_t min_budget_bits)
      : std::runtime_error(what), min_budget_bits(min_budget_bits) {}
  int64_t min_budget_bits;
};

// CLI exit codes: 0 ok, 2 validation, 3 infeasible, 4 internal invariant.
int exit_code_for(const std::exception& e);

struct BenchConvOptions {
  int64_t h = 32, w = 32, c = 16, k = 32;
  int r = 3;
  int stride = 1;
  int l_w = 2;
  int l_a = 4;
  int m = 2;
  bool winograd = true;
  bool fuse = true;
  bool msb = true;
  bool signed_input = false;  // default: activations arrive post-ReLU
  uint64_t seed = 1;
  CostModel cost;
};

/// One conv layer end to end through a session, plus the closed-form
/// prediction cross-check (metered bits must equal predicted bits exactly).
ReportDocument run_bench_conv(const BenchConvOptions& opts);

struct RunNetworkOptions {
  NetworkDescription desc;
  bool winograd = true;
  bool fuse = true;
  bool msb = true;
  bool simplify_residual = true;
  bool with_baseline = true;  // include the W8A8 direct baseline stage
  CostModel cost;
  std::map<std::string, WidthOverride> plan_overrides;
};

/// Build, optimize stage by stage and run the network; the report carries the
/// per-stage waterfall, the pass ledger and the final breakdown.
ReportDocument run_network(const RunNetworkOptions& opts);

struct PlanBitsOptions {
  NetworkDescription desc;
  std::vector<int> width_choices = {2, 4, 8};
  int64_t budget_bits = 0;
  std::map<std::string, double> hessian_traces;  // by layer name
  CostModel cost;
};

struct PlanBitsResult {
  PlanSummary summary;
  std::map<std::string, WidthOverride> overrides;
};

/// Communication-constrained bit-width assignment over the network's
/// quantizable layers. Throws InfeasibleError when the budget is too small.
PlanBitsResult plan_bits(const PlanBitsOptions& opts);

/// Parse a sensitivity file: JSON array of {"name", "hessian_trace"}.
std::map<std::string, double> parse_sensitivity_json(const std::string& json_text);

std::string plan_to_json(const PlanSummary& plan);
PlanSummary plan_from_json(const std::string& json_text);
std::map<std::string, WidthOverride> plan_overrides_from_summary(const PlanSummary&);

}  // namespace otwin
