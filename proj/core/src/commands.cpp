#include "otwin/commands.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace otwin {

namespace {

std::string hex64(uint64_t v) {
  std::ostringstream o;
  o << "0x" << std::hex << v;
  return o.str();
}

void append_latency(ReportDocument& doc, const CommMeter& meter) {
  for (const auto& [name, profile] :
       {std::pair{"lan", lan_profile()}, std::pair{"wan", wan_profile()}}) {
    LatencyEstimate est = estimate_latency(meter, profile);
    doc.latency.push_back({name, profile.bandwidth_bytes_per_s, profile.rtt_s,
                           est.offline_s, est.online_s, est.total_s});
  }
}

void check_meter_matches_prediction(const CommMeter& meter,
                                    const CostBreakdown& predicted) {
  std::map<CommMeter::Key, int64_t> metered;
  for (const auto& [k, v] : meter.bits()) {
    if (v != 0) metered[k] = v;
  }
  std::map<CommMeter::Key, int64_t> expected;
  for (const auto& [k, v] : predicted.bits) {
    if (v != 0) expected[k] = v;
  }
  if (metered != expected) {
    throw std::logic_error(
        "metered communication diverged from the closed-form prediction");
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InfeasibleError*>(&e)) return 3;
  if (dynamic_cast<const std::invalid_argument*>(&e)) return 2;
  return 4;
}

ReportDocument run_bench_conv(const BenchConvOptions& opts) {
  opts.cost.validate();
  if (opts.h <= 0 || opts.w <= 0 || opts.c <= 0 || opts.k <= 0) {
    throw std::invalid_argument("conv dimensions must be positive");
  }
  if (opts.m != 2 && opts.m != 4) {
    throw std::invalid_argument("output tile size must be 2 or 4");
  }

  NetworkDescription d;
  d.name = "bench-conv";
  d.seed = opts.seed;
  d.input = {opts.c, opts.h, opts.w, 8, opts.l_a + 2, !opts.signed_input};
  d.out_width = 8;
  d.out_scale_exp = opts.l_a;
  LayerSpec conv;
  conv.type = "conv";
  conv.name = "conv";
  conv.out_channels = opts.k;
  conv.kernel = opts.r;
  conv.stride = opts.stride;
  conv.l_w = opts.l_w;
  conv.l_a = opts.l_a;
  conv.a_scale_exp = opts.l_a;
  conv.l_out = 8;
  conv.out_scale_exp = opts.l_a;
  conv.winograd = opts.winograd;
  conv.wino_m = opts.m;
  d.layers = {conv};
  d.validate();

  NetworkInstance inst = make_instance(d, opts.winograd);
  Graph g = build_graph(inst);

  OptimizeOptions oo{opts.fuse, /*simplify_residual=*/true, opts.msb};
  Graph unopt = expand_composites(g);
  OptimizeResult opt = optimize(g, oo, opts.cost);

  SessionConfig scfg{opts.seed, opts.cost, true};
  Session session(scfg);
  GraphRunResult run = run_graph(opt.graph, random_network_input(d, opts.seed ^ 1),
                                 inst.bank, session);

  CostBreakdown predicted = predict_graph_cost(opt.graph, opts.cost);
  check_meter_matches_prediction(session.meter(), predicted);

  ReportDocument doc;
  doc.command = "bench-conv";
  doc.network = d.name;
  doc.seed = opts.seed;
  doc.lambda = opts.cost.lambda;
  doc.ot_payload_factor = opts.cost.ot_payload_factor;
  doc.relu_unit_coeff = opts.cost.relu_unit_coeff;
  doc.winograd = opts.winograd;
  doc.fuse = opts.fuse;
  doc.msb = opts.msb;
  fill_from_meter(doc, session.meter());
  doc.predicted_total_bits = predicted.total();
  CostBreakdown unopt_cost = predict_graph_cost(unopt, opts.cost);
  doc.stages.push_back({"unoptimized-predicted", unopt_cost.total(),
                        unopt_cost.phase_total(Phase::Offline),
                        unopt_cost.phase_total(Phase::Online), ""});
  doc.stages.push_back({"final-metered", doc.total_bits, doc.offline_bits,
                        doc.online_bits, hex64(run.checksum)});
  for (const PassStats& st : opt.passes) {
    doc.passes.push_back({st.name, st.rewrites, st.saving(), 0, st.notes});
  }
  append_latency(doc, session.meter());
  doc.output_checksum = hex64(run.checksum);
  return doc;
}

namespace {

NetworkDescription w8a8_direct_variant(const NetworkDescription& desc) {
  NetworkDescription d = desc;
  d.name = desc.name + "-w8a8-direct";
  for (LayerSpec& l : d.layers) {
    if (l.type == "conv" || l.type == "fc") {
      l.l_w = 8;
      l.l_a = 8;
      l.winograd = false;
    }
  }
  return d;
}

}  // namespace

ReportDocument run_network(const RunNetworkOptions& opts) {
  opts.cost.validate();
  opts.desc.validate();

  ReportDocument doc;
  doc.command = "run-network";
  doc.network = opts.desc.name;
  doc.seed = *opts.desc.seed;
  doc.lambda = opts.cost.lambda;
  doc.ot_payload_factor = opts.cost.ot_payload_factor;
  doc.relu_unit_coeff = opts.cost.relu_unit_coeff;
  doc.winograd = opts.winograd;
  doc.fuse = opts.fuse;
  doc.msb = opts.msb;
  doc.simplify_residual = opts.simplify_residual;

  PlainTensor input = random_network_input(opts.desc, *opts.desc.seed ^ 0xabcdULL);
  SessionConfig scfg{*opts.desc.seed, opts.cost, true};

  if (opts.with_baseline) {
    NetworkDescription base = w8a8_direct_variant(opts.desc);
    NetworkInstance binst = make_instance(base, /*winograd_enabled=*/false);
    Graph bg = expand_composites(build_graph(binst));
    Session session(scfg);
    GraphRunResult run = run_graph(bg, input, binst.bank, session);
    doc.stages.push_back({"baseline-w8a8-direct", session.meter().total_bits(),
                          session.meter().phase_bits(Phase::Offline),
                          session.meter().phase_bits(Phase::Online),
                          hex64(run.checksum)});
  }

  NetworkInstance inst =
      make_instance(opts.desc, opts.winograd, opts.plan_overrides);
  Graph g = build_graph(inst);

  struct StagePlan {
    std::string name;
    OptimizeOptions oo;
    bool any = false;
  };
  std::vector<StagePlan> plans;
  plans.push_back({opts.winograd ? "winograd-quant" : "direct-quant",
                   OptimizeOptions{false, false, false}, false});
  OptimizeOptions acc{false, false, false};
  if (opts.simplify_residual) {
    acc.simplify_residual = true;
    plans.push_back({"+simplify-residual", acc, true});
  }
  if (opts.fuse) {
    acc.fuse = true;
    plans.push_back({"+fusion", acc, true});
  }
  if (opts.msb) {
    acc.msb = true;
    plans.push_back({"+msb", acc, true});
  }

  std::string reference_checksum;
  std::vector<PassStats> final_passes;
  for (size_t i = 0; i < plans.size(); ++i) {
    const StagePlan& sp = plans[i];
    Graph staged;
    if (sp.any) {
      OptimizeResult r = optimize(g, sp.oo, opts.cost);
      staged = std::move(r.graph);
      final_passes = std::move(r.passes);
    } else {
      staged = expand_composites(g);
    }
    Session session(scfg);
    GraphRunResult run = run_graph(staged, input, inst.bank, session);
    doc.stages.push_back({sp.name, session.meter().total_bits(),
                          session.meter().phase_bits(Phase::Offline),
                          session.meter().phase_bits(Phase::Online),
                          hex64(run.checksum)});
    if (reference_checksum.empty()) {
      reference_checksum = hex64(run.checksum);
    } else if (reference_checksum != hex64(run.checksum)) {
      throw std::logic_error("optimization passes changed the network output");
    }
    if (i + 1 == plans.size()) {
      fill_from_meter(doc, session.meter());
      doc.predicted_total_bits = predict_graph_cost(staged, opts.cost).total();
      check_meter_matches_prediction(session.meter(), predict_graph_cost(staged, opts.cost));
      append_latency(doc, session.meter());
      doc.output_checksum = hex64(run.checksum);
    }
  }

  // Pass ledger: predicted savings per pass; metered savings attributed from
  // the stage waterfall (the fusion family shares one stage).
  auto stage_total = [&](const std::string& name) -> std::optional<int64_t> {
    for (const StageEntry& s : doc.stages) {
      if (s.stage == name) return s.total_bits;
    }
    return std::nullopt;
  };
  for (const PassStats& st : final_passes) {
    PassEntry e{st.name, st.rewrites, st.saving(), 0, st.notes};
    doc.passes.push_back(e);
  }
  auto base_name = opts.winograd ? "winograd-quant" : "direct-quant";
  auto attach_metered = [&](const std::string& pass, const std::string& from,
                            const std::string& to) {
    auto a = stage_total(from), b = stage_total(to);
    if (!a || !b) return;
    for (PassEntry& e : doc.passes) {
      if (e.pass == pass) e.metered_saving_bits = *a - *b;
    }
  };
  attach_metered("simplify_residual", base_name, "+simplify-residual");
  attach_metered("fuse_trunc_ext",
                 opts.simplify_residual ? "+simplify-residual" : base_name,
                 "+fusion");
  attach_metered("msb_propagation",
                 opts.fuse ? "+fusion"
                           : (opts.simplify_residual ? "+simplify-residual"
                                                     : base_name),
                 "+msb");
  return doc;
}

std::map<std::string, double> parse_sensitivity_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("sensitivity file is not valid JSON: ") +
                                e.what());
  }
  std::map<std::string, double> out;
  try {
    for (const auto& entry : j) {
      double tr = entry.at("hessian_trace").get<double>();
      if (tr < 0) throw std::invalid_argument("hessian_trace must be >= 0");
      out[entry.at("name").get<std::string>()] = tr;
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed sensitivity file: ") +
                                e.what());
  }
  return out;
}

PlanBitsResult plan_bits(const PlanBitsOptions& opts) {
  opts.cost.validate();
  opts.desc.validate();
  if (opts.width_choices.empty()) {
    throw std::invalid_argument("at least one width choice is required");
  }
  std::vector<int> widths = opts.width_choices;
  std::sort(widths.begin(), widths.end());

  // Quantizable layers in network order.
  std::vector<const LayerSpec*> qlayers;
  for (const LayerSpec& l : opts.desc.layers) {
    if (l.type == "conv" || l.type == "fc") qlayers.push_back(&l);
  }
  if (qlayers.empty()) throw std::invalid_argument("network has no weight layers");
  for (const LayerSpec* l : qlayers) {
    if (!opts.hessian_traces.count(l->name)) {
      throw std::invalid_argument("sensitivity file is missing layer '" + l->name +
                                  "'");
    }
  }

  // Per-width instances: costs come from the same lowering the runner uses,
  // so a plan re-run meters exactly the planned bits.
  PlanProblem problem;
  problem.budget_bits = opts.budget_bits;
  std::vector<std::vector<PlanChoice>> choices(qlayers.size());
  for (int wbits : widths) {
    std::map<std::string, WidthOverride> ov;
    for (const LayerSpec* l : qlayers) ov[l->name] = WidthOverride{wbits, 0};
    NetworkInstance inst = make_instance(opts.desc, /*winograd_enabled=*/true, ov);
    Graph g = optimize(build_graph(inst), OptimizeOptions{true, true, true},
                       opts.cost)
                  .graph;
    CostBreakdown cb = predict_graph_cost(g, opts.cost);
    TransformSet ts = transform_matrices(2, 3);
    DMat identity(1, 1, {1.0});
    for (size_t i = 0; i < qlayers.size(); ++i) {
      const LayerSpec& l = *qlayers[i];
      int64_t bits = 0;
      for (const auto& [key, v] : cb.bits) {
        if (key.scope == l.name) bits += v;
      }
      const std::vector<double>& floats = inst.float_weights.at(l.name);
      const Codebook& cb_layer = inst.codebooks.at(l.name);
      double omega = 0;
      if (inst.conv_cfgs.count(l.name)) {
        omega = perturbation_omega(opts.hessian_traces.at(l.name), floats,
                                   l.out_channels,
                                   static_cast<int64_t>(floats.size()) /
                                       (l.out_channels * l.kernel * l.kernel),
                                   ts.g, wbits, cb_layer, cb_layer.width());
      } else {
        // Direct/fc layers: quantization error of the raw weights.
        DMat one(1, 1, {1.0});
        omega = perturbation_omega(
            opts.hessian_traces.at(l.name), floats,
            static_cast<int64_t>(floats.size()), 1, one, wbits, cb_layer,
            cb_layer.width());
      }
      choices[i].push_back({wbits, l.l_a, bits, omega});
    }
  }
  for (size_t i = 0; i < qlayers.size(); ++i) {
    problem.layer_names.push_back(qlayers[i]->name);
    problem.choices.push_back(choices[i]);
  }

  BitWidthPlan plan = ilp_assign(problem);
  if (!plan.feasible) {
    throw InfeasibleError(
        "budget of " + std::to_string(opts.budget_bits) +
            " bits is infeasible; the minimum feasible budget is " +
            std::to_string(plan.min_feasible_budget) + " bits",
        plan.min_feasible_budget);
  }

  PlanBitsResult result;
  result.summary.budget_bits = opts.budget_bits;
  result.summary.total_cost_bits = plan.total_cost_bits;
  result.summary.total_omega = plan.total_omega;
  for (size_t i = 0; i < qlayers.size(); ++i) {
    const PlanChoice& ch = problem.choices[i][static_cast<size_t>(plan.selected[i])];
    result.summary.layers.push_back(
        {qlayers[i]->name, ch.l_w, ch.l_a, ch.cost_bits, ch.omega});
    result.overrides[qlayers[i]->name] = WidthOverride{ch.l_w, 0};
  }
  return result;
}

std::string plan_to_json(const PlanSummary& plan) {
  nlohmann::json rows = nlohmann::json::array();
  for (const PlanRow& r : plan.layers) {
    rows.push_back({{"layer", r.layer},
                    {"l_w", r.l_w},
                    {"l_a", r.l_a},
                    {"cost_bits", r.cost_bits},
                    {"omega", r.omega}});
  }
  nlohmann::json j = {{"schema_version", 1},
                      {"budget_bits", plan.budget_bits},
                      {"total_cost_bits", plan.total_cost_bits},
                      {"total_omega", plan.total_omega},
                      {"layers", rows}};
  return j.dump(2);
}

PlanSummary plan_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("plan file is not valid JSON: ") +
                                e.what());
  }
  PlanSummary plan;
  try {
    if (j.at("schema_version").get<int>() != 1) {
      throw std::invalid_argument("unsupported plan schema version");
    }
    plan.budget_bits = j.at("budget_bits").get<int64_t>();
    plan.total_cost_bits = j.at("total_cost_bits").get<int64_t>();
    plan.total_omega = j.at("total_omega").get<double>();
    for (const auto& jr : j.at("layers")) {
      plan.layers.push_back({jr.at("layer").get<std::string>(),
                             jr.at("l_w").get<int>(), jr.at("l_a").get<int>(),
                             jr.at("cost_bits").get<int64_t>(),
                             jr.at("omega").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed plan file: ") + e.what());
  }
  return plan;
}

std::map<std::string, WidthOverride> plan_overrides_from_summary(
    const PlanSummary& plan) {
  std::map<std::string, WidthOverride> out;
  for (const PlanRow& r : plan.layers) out[r.layer] = WidthOverride{r.l_w, 0};
  return out;
}

}  // namespace otwin
