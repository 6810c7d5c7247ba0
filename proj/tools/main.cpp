// otwin command line: bench-conv, run-network, plan-bits, report.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "otwin/commands.hpp"

namespace {

using namespace otwin;

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write file " + path);
  out << text;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << '\n';
  } else {
    spill(out_path, text);
  }
}

NetworkDescription load_description(const std::string& desc_path,
                                    const std::string& preset) {
  if (!desc_path.empty() && !preset.empty()) {
    throw std::invalid_argument("pass either --desc or --preset, not both");
  }
  if (!desc_path.empty()) return parse_network_json(slurp(desc_path));
  if (!preset.empty()) return preset_network(preset);
  throw std::invalid_argument("a network is required: --desc FILE or --preset NAME");
}

void print_summary(const ReportDocument& doc) {
  std::cerr << doc.command << " '" << doc.network << "' seed=" << doc.seed << "\n";
  for (const StageEntry& s : doc.stages) {
    std::cerr << "  stage " << s.stage << ": " << s.total_bits << " bits ("
              << s.offline_bits << " offline, " << s.online_bits << " online)";
    if (!s.output_checksum.empty()) std::cerr << " checksum=" << s.output_checksum;
    std::cerr << "\n";
  }
  std::cerr << "  total " << doc.total_bits << " bits = "
            << static_cast<double>(doc.total_bits) / 8.0 / 1.0e6 << " MB\n";
}

int run_cli(int argc, char** argv) {
  CLI::App app{"two-party private-inference protocol simulator and planner"};
  app.require_subcommand(1);

  CostModel cost;
  app.add_option("--lambda", cost.lambda, "security parameter in bits");
  app.add_option("--ot-factor", cost.ot_payload_factor,
                 "messages carried per correlated OT");
  app.add_option("--relu-coeff", cost.relu_unit_coeff,
                 "ReLU per-element cost multiplier");

  // bench-conv
  auto* bench = app.add_subcommand("bench-conv", "micro-benchmark one conv layer");
  BenchConvOptions bopts;
  bench->add_option("--height", bopts.h, "input height")->required();
  bench->add_option("--width", bopts.w, "input width")->required();
  bench->add_option("--in-channels", bopts.c, "input channels")->required();
  bench->add_option("--out-channels", bopts.k, "output channels")->required();
  bench->add_option("--lw", bopts.l_w, "weight bit width")->required();
  bench->add_option("--la", bopts.l_a, "activation bit width")->required();
  bench->add_option("--kernel", bopts.r, "kernel size");
  bench->add_option("--stride", bopts.stride, "stride");
  bench->add_option("--m", bopts.m, "Winograd output tile size (2 or 4)");
  bench->add_option("--seed", bopts.seed, "instance seed")->required();
  bench->add_flag("!--no-winograd", bopts.winograd, "direct convolution path");
  bench->add_flag("!--no-fuse", bopts.fuse, "disable protocol fusion");
  bench->add_flag("!--no-msb", bopts.msb, "disable MSB-known optimization");
  bench->add_flag("--signed-input", bopts.signed_input,
                  "input is not post-ReLU (disables MSB on the input chain)");
  std::string bench_out;
  bench->add_option("--out", bench_out, "write the report JSON here");

  // run-network
  auto* run = app.add_subcommand("run-network", "run a network description");
  std::string desc_path, preset, run_out, plan_path;
  bool no_fuse = false, no_msb = false, no_residual = false, no_wino = false,
       no_baseline = false;
  run->add_option("--desc", desc_path, "network description JSON");
  run->add_option("--preset", preset, "named preset network");
  run->add_flag("--no-winograd", no_wino, "direct convolution path");
  run->add_flag("--no-fuse", no_fuse, "disable protocol fusion");
  run->add_flag("--no-msb", no_msb, "disable MSB-known optimization");
  run->add_flag("--no-simplify-residual", no_residual,
                "keep the baseline residual protocol");
  run->add_flag("--no-baseline", no_baseline, "skip the W8A8 direct baseline stage");
  run->add_option("--plan", plan_path, "apply a bit-width plan JSON");
  run->add_option("--out", run_out, "write the report JSON here");

  // plan-bits
  auto* plan = app.add_subcommand("plan-bits", "communication-constrained widths");
  std::string plan_desc, plan_preset, sens_path, plan_out;
  double budget_mb = 0;
  int64_t budget_bits = 0;
  std::vector<int> widths{2, 4, 8};
  plan->add_option("--desc", plan_desc, "network description JSON");
  plan->add_option("--preset", plan_preset, "named preset network");
  plan->add_option("--sensitivity", sens_path, "per-layer hessian traces JSON")
      ->required();
  plan->add_option("--budget-mb", budget_mb, "communication budget in megabytes");
  plan->add_option("--budget-bits", budget_bits, "communication budget in bits");
  plan->add_option("--widths", widths, "admissible weight widths");
  plan->add_option("--out", plan_out, "write the plan JSON here");

  // report
  auto* rep = app.add_subcommand("report", "re-serialize a report");
  std::string rep_in, rep_format = "json", rep_out;
  rep->add_option("--in", rep_in, "report JSON file")->required();
  rep->add_option("--format", rep_format, "csv or json");
  rep->add_option("--out", rep_out, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (bench->parsed()) {
      bopts.cost = cost;
      ReportDocument doc = run_bench_conv(bopts);
      print_summary(doc);
      emit(report_to_json(doc), bench_out);
    } else if (run->parsed()) {
      RunNetworkOptions opts;
      opts.desc = load_description(desc_path, preset);
      opts.cost = cost;
      opts.winograd = !no_wino;
      opts.fuse = !no_fuse;
      opts.msb = !no_msb;
      opts.simplify_residual = !no_residual;
      opts.with_baseline = !no_baseline;
      if (!plan_path.empty()) {
        opts.plan_overrides =
            plan_overrides_from_summary(plan_from_json(slurp(plan_path)));
      }
      ReportDocument doc = run_network(opts);
      print_summary(doc);
      emit(report_to_json(doc), run_out);
    } else if (plan->parsed()) {
      PlanBitsOptions opts;
      opts.desc = load_description(plan_desc, plan_preset);
      opts.cost = cost;
      opts.width_choices = widths;
      if (budget_bits > 0) {
        opts.budget_bits = budget_bits;
      } else if (budget_mb > 0) {
        opts.budget_bits = static_cast<int64_t>(budget_mb * 8.0e6);
      } else {
        throw std::invalid_argument("a budget is required: --budget-mb or --budget-bits");
      }
      opts.hessian_traces = parse_sensitivity_json(slurp(sens_path));
      PlanBitsResult result = plan_bits(opts);
      std::cerr << "plan: " << result.summary.total_cost_bits << " of "
                << result.summary.budget_bits << " budget bits, omega "
                << result.summary.total_omega << "\n";
      emit(plan_to_json(result.summary), plan_out);
    } else if (rep->parsed()) {
      ReportDocument doc = report_from_json(slurp(rep_in));
      if (rep_format == "csv") {
        emit(report_to_csv(doc), rep_out);
      } else if (rep_format == "json") {
        emit(report_to_json(doc), rep_out);
      } else {
        throw std::invalid_argument("unknown format '" + rep_format + "'");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(argc, argv); }
