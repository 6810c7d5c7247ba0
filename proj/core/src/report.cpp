#include "otwin/report.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

namespace otwin {

void fill_from_meter(ReportDocument& doc, const CommMeter& meter) {
  doc.rows.clear();
  std::set<CommMeter::Key> keys;
  for (const auto& [k, v] : meter.bits()) keys.insert(k);
  for (const auto& [k, v] : meter.rounds()) keys.insert(k);
  for (const CommMeter::Key& k : keys) {
    ReportRow row;
    row.layer = k.scope;
    row.protocol = k.tag;
    row.phase = phase_name(k.phase);
    if (auto it = meter.bits().find(k); it != meter.bits().end()) row.bits = it->second;
    if (auto it = meter.rounds().find(k); it != meter.rounds().end()) {
      row.rounds = it->second;
    }
    doc.rows.push_back(std::move(row));
  }
  doc.total_bits = meter.total_bits();
  doc.offline_bits = meter.phase_bits(Phase::Offline);
  doc.online_bits = meter.phase_bits(Phase::Online);
  doc.offline_rounds = meter.phase_rounds(Phase::Offline);
  doc.online_rounds = meter.phase_rounds(Phase::Online);
}

namespace {

using nlohmann::json;

json rows_to_json(const std::vector<ReportRow>& rows) {
  json out = json::array();
  for (const ReportRow& r : rows) {
    out.push_back({{"layer", r.layer},
                   {"protocol", r.protocol},
                   {"phase", r.phase},
                   {"bits", r.bits},
                   {"rounds", r.rounds}});
  }
  return out;
}

}  // namespace

std::string report_to_json(const ReportDocument& doc) {
  json j;
  j["schema_version"] = doc.schema_version;
  j["command"] = doc.command;
  j["network"] = doc.network;
  j["seed"] = doc.seed;
  j["cost_model"] = {{"lambda", doc.lambda},
                     {"ot_payload_factor", doc.ot_payload_factor},
                     {"relu_unit_coeff", doc.relu_unit_coeff}};
  j["flags"] = {{"winograd", doc.winograd},
                {"fuse", doc.fuse},
                {"msb", doc.msb},
                {"simplify_residual", doc.simplify_residual}};
  j["rows"] = rows_to_json(doc.rows);
  j["totals"] = {{"total_bits", doc.total_bits},
                 {"offline_bits", doc.offline_bits},
                 {"online_bits", doc.online_bits},
                 {"offline_rounds", doc.offline_rounds},
                 {"online_rounds", doc.online_rounds},
                 {"predicted_total_bits", doc.predicted_total_bits}};
  json stages = json::array();
  for (const StageEntry& s : doc.stages) {
    stages.push_back({{"stage", s.stage},
                      {"total_bits", s.total_bits},
                      {"offline_bits", s.offline_bits},
                      {"online_bits", s.online_bits},
                      {"output_checksum", s.output_checksum}});
  }
  j["stages"] = stages;
  json passes = json::array();
  for (const PassEntry& p : doc.passes) {
    passes.push_back({{"pass", p.pass},
                      {"rewrites", p.rewrites},
                      {"predicted_saving_bits", p.predicted_saving_bits},
                      {"metered_saving_bits", p.metered_saving_bits},
                      {"notes", p.notes}});
  }
  j["passes"] = passes;
  json lat = json::array();
  for (const LatencyEntry& l : doc.latency) {
    lat.push_back({{"profile", l.profile},
                   {"bandwidth_bytes_per_s", l.bandwidth_bytes_per_s},
                   {"rtt_s", l.rtt_s},
                   {"offline_s", l.offline_s},
                   {"online_s", l.online_s},
                   {"total_s", l.total_s}});
  }
  j["latency"] = lat;
  if (doc.plan) {
    json rows = json::array();
    for (const PlanRow& r : doc.plan->layers) {
      rows.push_back({{"layer", r.layer},
                      {"l_w", r.l_w},
                      {"l_a", r.l_a},
                      {"cost_bits", r.cost_bits},
                      {"omega", r.omega}});
    }
    j["plan"] = {{"budget_bits", doc.plan->budget_bits},
                 {"total_cost_bits", doc.plan->total_cost_bits},
                 {"total_omega", doc.plan->total_omega},
                 {"layers", rows}};
  }
  j["output_checksum"] = doc.output_checksum;
  return j.dump(2);
}

ReportDocument report_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("report is not valid JSON: ") + e.what());
  }
  ReportDocument doc;
  try {
    doc.schema_version = j.at("schema_version").get<int>();
    if (doc.schema_version != 1) {
      throw std::invalid_argument("unsupported report schema version " +
                                  std::to_string(doc.schema_version));
    }
    doc.command = j.value("command", "");
    doc.network = j.value("network", "");
    doc.seed = j.value("seed", uint64_t{0});
    if (j.contains("cost_model")) {
      doc.lambda = j["cost_model"].value("lambda", int64_t{128});
      doc.ot_payload_factor = j["cost_model"].value("ot_payload_factor", 1.0);
      doc.relu_unit_coeff = j["cost_model"].value("relu_unit_coeff", 1.0);
    }
    if (j.contains("flags")) {
      doc.winograd = j["flags"].value("winograd", true);
      doc.fuse = j["flags"].value("fuse", true);
      doc.msb = j["flags"].value("msb", true);
      doc.simplify_residual = j["flags"].value("simplify_residual", true);
    }
    for (const json& jr : j.at("rows")) {
      ReportRow r;
      r.layer = jr.at("layer").get<std::string>();
      r.protocol = jr.at("protocol").get<std::string>();
      r.phase = jr.at("phase").get<std::string>();
      r.bits = jr.at("bits").get<int64_t>();
      r.rounds = jr.at("rounds").get<int64_t>();
      doc.rows.push_back(std::move(r));
    }
    const json& t = j.at("totals");
    doc.total_bits = t.at("total_bits").get<int64_t>();
    doc.offline_bits = t.at("offline_bits").get<int64_t>();
    doc.online_bits = t.at("online_bits").get<int64_t>();
    doc.offline_rounds = t.at("offline_rounds").get<int64_t>();
    doc.online_rounds = t.at("online_rounds").get<int64_t>();
    doc.predicted_total_bits = t.value("predicted_total_bits", int64_t{0});
    for (const json& js : j.value("stages", json::array())) {
      StageEntry s;
      s.stage = js.at("stage").get<std::string>();
      s.total_bits = js.at("total_bits").get<int64_t>();
      s.offline_bits = js.at("offline_bits").get<int64_t>();
      s.online_bits = js.at("online_bits").get<int64_t>();
      s.output_checksum = js.value("output_checksum", "");
      doc.stages.push_back(std::move(s));
    }
    for (const json& jp : j.value("passes", json::array())) {
      PassEntry p;
      p.pass = jp.at("pass").get<std::string>();
      p.rewrites = jp.at("rewrites").get<int>();
      p.predicted_saving_bits = jp.at("predicted_saving_bits").get<int64_t>();
      p.metered_saving_bits = jp.value("metered_saving_bits", int64_t{0});
      p.notes = jp.value("notes", std::vector<std::string>{});
      doc.passes.push_back(std::move(p));
    }
    for (const json& jl : j.value("latency", json::array())) {
      LatencyEntry l;
      l.profile = jl.at("profile").get<std::string>();
      l.bandwidth_bytes_per_s = jl.at("bandwidth_bytes_per_s").get<double>();
      l.rtt_s = jl.at("rtt_s").get<double>();
      l.offline_s = jl.at("offline_s").get<double>();
      l.online_s = jl.at("online_s").get<double>();
      l.total_s = jl.at("total_s").get<double>();
      doc.latency.push_back(std::move(l));
    }
    if (j.contains("plan") && !j["plan"].is_null()) {
      PlanSummary plan;
      plan.budget_bits = j["plan"].at("budget_bits").get<int64_t>();
      plan.total_cost_bits = j["plan"].at("total_cost_bits").get<int64_t>();
      plan.total_omega = j["plan"].at("total_omega").get<double>();
      for (const json& jr : j["plan"].at("layers")) {
        PlanRow r;
        r.layer = jr.at("layer").get<std::string>();
        r.l_w = jr.at("l_w").get<int>();
        r.l_a = jr.at("l_a").get<int>();
        r.cost_bits = jr.at("cost_bits").get<int64_t>();
        r.omega = jr.at("omega").get<double>();
        plan.layers.push_back(std::move(r));
      }
      doc.plan = std::move(plan);
    }
    doc.output_checksum = j.value("output_checksum", "");
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed report: ") + e.what());
  }
  return doc;
}

std::string report_to_csv(const ReportDocument& doc) {
  std::ostringstream out;
  out << "layer,protocol,phase,bits,rounds\n";
  for (const ReportRow& r : doc.rows) {
    out << r.layer << ',' << r.protocol << ',' << r.phase << ',' << r.bits << ','
        << r.rounds << '\n';
  }
  return out.str();
}

}  // namespace otwin
