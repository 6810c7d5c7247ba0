#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "otwin/graph.hpp"
#include "otwin/net.hpp"

namespace otwin {

struct ReportRow {
  std::string layer;
  std::string protocol;
  std::string phase;  // "offline" | "online"
  int64_t bits = 0;
  int64_t rounds = 0;
};

struct StageEntry {
  std::string stage;
  int64_t total_bits = 0;
  int64_t offline_bits = 0;
  int64_t online_bits = 0;
  std::string output_checksum;
};

struct PassEntry {
  std::string pass;
  int rewrites = 0;
  int64_t predicted_saving_bits = 0;
  int64_t metered_saving_bits = 0;  // filled when stage runs bracket the pass
  std::vector<std::string> notes;
};

struct LatencyEntry {
  std::string profile;
  double bandwidth_bytes_per_s = 0;
  double rtt_s = 0;
  double offline_s = 0;
  double online_s = 0;
  double total_s = 0;
};

struct PlanRow {
  std::string layer;
  int l_w = 0;
  int l_a = 0;
  int64_t cost_bits = 0;
  double omega = 0;
};

struct PlanSummary {
  int64_t budget_bits = 0;
  int64_t total_cost_bits = 0;
  double total_omega = 0;
  std::vector<PlanRow> layers;
};

struct ReportDocument {
  int schema_version = 1;
  std::string command;
  std::string network;
  uint64_t seed = 0;
  int64_t lambda = 128;
  double ot_payload_factor = 1.0;
  double relu_unit_coeff = 1.0;
  bool winograd = true;
  bool fuse = true;
  bool msb = true;
  bool simplify_residual = true;

  std::vector<ReportRow> rows;
  int64_t total_bits = 0;
  int64_t offline_bits = 0;
  int64_t online_bits = 0;
  int64_t offline_rounds = 0;
  int64_t online_rounds = 0;
  int64_t predicted_total_bits = 0;

  std::vector<StageEntry> stages;
  std::vector<PassEntry> passes;
  std::vector<LatencyEntry> latency;
  std::optional<PlanSummary> plan;
  std::string output_checksum;
};

/// Fill rows/totals/latency from a populated meter.
void fill_from_meter(ReportDocument& doc, const CommMeter& meter);

std::string report_to_json(const ReportDocument& doc);
ReportDocument report_from_json(const std::string& json_text);

/// CSV with columns layer,protocol,phase,bits,rounds (header included).
std::string report_to_csv(const ReportDocument& doc);

}  // namespace otwin
