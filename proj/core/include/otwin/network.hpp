#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "otwin/graph.hpp"
#include "otwin/quant.hpp"

namespace otwin {

/// One entry of a network description. `type` selects which fields apply:
///   conv:     out_channels, kernel, stride, l_w, l_a, a_scale_exp, l_out,
///             out_scale_exp, winograd
///   relu:     (no extra fields)
///   residual: from ("input" or a layer name), l_add, add_scale_exp, l_out,
///             out_scale_exp
///   fc:       out_features, l_w, l_a, a_scale_exp, l_out, out_scale_exp
struct LayerSpec {
  std::string type;
  std::string name;

  int64_t out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int l_w = 0;
  int l_a = 0;
  int a_scale_exp = 0;
  int l_out = 0;
  int out_scale_exp = 0;
  bool winograd = true;
  int wino_m = 2;  // output tile size of the Winograd path

  std::string from;
  int l_add = 16;
  int add_scale_exp = 0;

  int64_t out_features = 0;
};

struct TensorDecl {
  int64_t c = 0, h = 0, w = 0;
  int width = 8;
  int scale_exp = 0;
  bool nonneg = false;
};

struct NetworkDescription {
  int schema_version = 1;
  std::string name;
  std::optional<uint64_t> seed;  // mandatory; optional here to detect absence
  TensorDecl input;
  int out_width = 8;
  int out_scale_exp = 0;
  std::string codebook = "auto";  // auto | standard | reweighted
  double outlier_tau = 6.0;
  std::vector<LayerSpec> layers;

  void validate() const;  // throws std::invalid_argument
};

NetworkDescription parse_network_json(const std::string& json_text);
std::string network_to_json(const NetworkDescription& desc);

/// Named desk-scale presets: "table3-conv-0".."table3-conv-3", "minionn-toy",
/// "resnet32-block".
NetworkDescription preset_network(const std::string& name);
std::vector<std::string> preset_names();

/// Per-layer width overrides (from a bit-width plan) applied by name.
struct WidthOverride {
  int l_w = 0;
  int l_a = 0;
};

/// A description bound to generated weights: the weight bank for the runner,
/// float weights for sensitivity analysis, and derived per-conv configs.
struct NetworkInstance {
  NetworkDescription desc;
  bool winograd_enabled = true;
  WeightBank bank;
  std::map<std::string, std::vector<double>> float_weights;
  std::map<std::string, Codebook> codebooks;
  std::map<std::string, QWinConvConfig> conv_cfgs;
};

NetworkInstance make_instance(
    const NetworkDescription& desc, bool winograd_enabled,
    const std::map<std::string, WidthOverride>& overrides = {});

/// Lower an instance to the canonical protocol graph: per conv layer a
/// requant into the activation width, the (composite) QWinConv or the im2col
/// direct pipeline, residual joins, ReLUs, and a final requant to the
/// declared output quantization.
Graph build_graph(const NetworkInstance& inst);

/// Random test input drawn in the declared input range.
PlainTensor random_network_input(const NetworkDescription& desc, uint64_t seed);

}  // namespace otwin
