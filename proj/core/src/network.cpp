#include "otwin/network.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace otwin {

namespace {

int ceil_log2(int64_t n) {
  int b = 0;
  while ((int64_t{1} << b) < n) ++b;
  return b;
}

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

void NetworkDescription::validate() const {
  require(schema_version == 1, "unsupported network schema version");
  require(seed.has_value(), "network description must pin a seed");
  require(input.h > 0 && input.w > 0 && input.c > 0, "input dims must be positive");
  require(input.width >= 1 && input.width <= 16, "input width out of range");
  require(out_width >= 1 && out_width <= 32, "output width out of range");
  require(codebook == "auto" || codebook == "standard" || codebook == "reweighted",
          "codebook must be auto, standard or reweighted");
  std::map<std::string, bool> names;
  for (const LayerSpec& l : layers) {
    require(!l.name.empty(), "every layer needs a name");
    require(!names.count(l.name), "duplicate layer name " + l.name);
    names[l.name] = true;
    if (l.type == "conv") {
      require(l.out_channels > 0, l.name + ": conv needs out_channels");
      require(l.kernel >= 1 && l.kernel % 2 == 1, l.name + ": odd kernel expected");
      require(l.stride == 1 || l.stride == 2, l.name + ": stride must be 1 or 2");
      require(l.l_w >= 1 && l.l_w <= 8, l.name + ": l_w out of range");
      require(l.l_a >= 2 && l.l_a <= 16, l.name + ": l_a out of range");
      require(l.l_out >= 2 && l.l_out <= 32, l.name + ": l_out out of range");
      require(l.wino_m == 2 || l.wino_m == 4, l.name + ": wino_m must be 2 or 4");
    } else if (l.type == "fc") {
      require(l.out_features > 0, l.name + ": fc needs out_features");
      require(l.l_w >= 1 && l.l_w <= 8, l.name + ": l_w out of range");
      require(l.l_a >= 2 && l.l_a <= 16, l.name + ": l_a out of range");
    } else if (l.type == "residual") {
      require(!l.from.empty(), l.name + ": residual needs a 'from' tap");
      require(l.l_add >= 4 && l.l_add <= 32, l.name + ": l_add out of range");
      require(l.l_out >= 2 && l.l_out <= 32, l.name + ": l_out out of range");
    } else if (l.type == "relu") {
      // nothing beyond the name
    } else {
      require(false, l.name + ": unknown layer type '" + l.type + "'");
    }
  }
}

namespace {

using nlohmann::json;

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.type = j.at("type").get<std::string>();
  l.name = j.at("name").get<std::string>();
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("out_channels", l.out_channels);
  get("kernel", l.kernel);
  get("stride", l.stride);
  get("l_w", l.l_w);
  get("l_a", l.l_a);
  get("a_scale_exp", l.a_scale_exp);
  get("l_out", l.l_out);
  get("out_scale_exp", l.out_scale_exp);
  get("winograd", l.winograd);
  get("wino_m", l.wino_m);
  get("from", l.from);
  get("l_add", l.l_add);
  get("add_scale_exp", l.add_scale_exp);
  get("out_features", l.out_features);
  return l;
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["type"] = l.type;
  j["name"] = l.name;
  if (l.type == "conv") {
    j["out_channels"] = l.out_channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["l_w"] = l.l_w;
    j["l_a"] = l.l_a;
    j["a_scale_exp"] = l.a_scale_exp;
    j["l_out"] = l.l_out;
    j["out_scale_exp"] = l.out_scale_exp;
    j["winograd"] = l.winograd;
    j["wino_m"] = l.wino_m;
  } else if (l.type == "fc") {
    j["out_features"] = l.out_features;
    j["l_w"] = l.l_w;
    j["l_a"] = l.l_a;
    j["a_scale_exp"] = l.a_scale_exp;
    j["l_out"] = l.l_out;
    j["out_scale_exp"] = l.out_scale_exp;
  } else if (l.type == "residual") {
    j["from"] = l.from;
    j["l_add"] = l.l_add;
    j["add_scale_exp"] = l.add_scale_exp;
    j["l_out"] = l.l_out;
    j["out_scale_exp"] = l.out_scale_exp;
  }
  return j;
}

}  // namespace

NetworkDescription parse_network_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("network description is not valid JSON: ") +
                                e.what());
  }
  NetworkDescription d;
  try {
    d.schema_version = doc.at("schema_version").get<int>();
    d.name = doc.value("name", "");
    if (doc.contains("seed")) d.seed = doc.at("seed").get<uint64_t>();
    const json& in = doc.at("input");
    d.input.c = in.at("c").get<int64_t>();
    d.input.h = in.at("h").get<int64_t>();
    d.input.w = in.at("w").get<int64_t>();
    d.input.width = in.at("width").get<int>();
    d.input.scale_exp = in.at("scale_exp").get<int>();
    d.input.nonneg = in.value("nonneg", false);
    const json& out = doc.at("output");
    d.out_width = out.at("width").get<int>();
    d.out_scale_exp = out.at("scale_exp").get<int>();
    d.codebook = doc.value("codebook", "auto");
    d.outlier_tau = doc.value("outlier_tau", 6.0);
    for (const json& jl : doc.at("layers")) d.layers.push_back(layer_from_json(jl));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed network description: ") +
                                e.what());
  }
  d.validate();
  return d;
}

std::string network_to_json(const NetworkDescription& desc) {
  json doc;
  doc["schema_version"] = desc.schema_version;
  doc["name"] = desc.name;
  if (desc.seed) doc["seed"] = *desc.seed;
  doc["input"] = {{"c", desc.input.c},         {"h", desc.input.h},
                  {"w", desc.input.w},         {"width", desc.input.width},
                  {"scale_exp", desc.input.scale_exp}, {"nonneg", desc.input.nonneg}};
  doc["output"] = {{"width", desc.out_width}, {"scale_exp", desc.out_scale_exp}};
  doc["codebook"] = desc.codebook;
  doc["outlier_tau"] = desc.outlier_tau;
  json layers = json::array();
  for (const LayerSpec& l : desc.layers) layers.push_back(layer_to_json(l));
  doc["layers"] = layers;
  return doc.dump(2);
}

NetworkDescription preset_network(const std::string& name) {
  NetworkDescription d;
  d.name = name;
  d.seed = 1;
  if (name.rfind("table3-conv-", 0) == 0) {
    const int row = std::stoi(name.substr(std::string("table3-conv-").size()));
    static const int64_t dims[4][4] = {
        {32, 32, 16, 32}, {16, 16, 32, 64}, {56, 56, 64, 64}, {28, 28, 128, 128}};
    require(row >= 0 && row < 4, "table3-conv rows are 0..3");
    d.input = {dims[row][2], dims[row][0], dims[row][1], 8, 4, true};
    d.out_width = 8;
    d.out_scale_exp = 2;
    LayerSpec conv;
    conv.type = "conv";
    conv.name = "conv1";
    conv.out_channels = dims[row][3];
    conv.kernel = 3;
    conv.l_w = 2;
    conv.l_a = 4;
    conv.a_scale_exp = 2;
    conv.l_out = 8;
    conv.out_scale_exp = 2;
    d.layers = {conv};
    return d;
  }
  if (name == "minionn-toy") {
    d.input = {3, 8, 8, 8, 4, false};
    d.out_width = 8;
    d.out_scale_exp = 2;
    LayerSpec c1;
    c1.type = "conv";
    c1.name = "conv1";
    c1.out_channels = 8;
    c1.l_w = 4;
    c1.l_a = 4;
    c1.a_scale_exp = 2;
    c1.l_out = 8;
    c1.out_scale_exp = 2;
    LayerSpec r1{.type = "relu", .name = "relu1"};
    LayerSpec c2 = c1;
    c2.name = "conv2";
    LayerSpec r2{.type = "relu", .name = "relu2"};
    LayerSpec fc;
    fc.type = "fc";
    fc.name = "fc1";
    fc.out_features = 10;
    fc.l_w = 4;
    fc.l_a = 4;
    fc.a_scale_exp = 2;
    fc.l_out = 8;
    fc.out_scale_exp = 2;
    d.layers = {c1, r1, c2, r2, fc};
    return d;
  }
  if (name == "resnet32-block") {
    // Desk-scale stage-3 basic block: 8x8 spatial, 64 channels, W2A6,
    // residual held at 8 bits.
    d.input = {64, 8, 8, 8, 6, true};
    d.out_width = 8;
    d.out_scale_exp = 4;
    LayerSpec c1;
    c1.type = "conv";
    c1.name = "conv1";
    c1.out_channels = 64;
    c1.l_w = 2;
    c1.l_a = 6;
    c1.a_scale_exp = 4;
    c1.l_out = 8;
    c1.out_scale_exp = 4;
    LayerSpec r1{.type = "relu", .name = "relu1"};
    LayerSpec c2 = c1;
    c2.name = "conv2";
    LayerSpec res;
    res.type = "residual";
    res.name = "res1";
    res.from = "input";
    res.l_add = 16;
    res.add_scale_exp = 4;
    res.l_out = 8;
    res.out_scale_exp = 4;
    LayerSpec r2{.type = "relu", .name = "relu2"};
    d.layers = {c1, r1, c2, res, r2};
    return d;
  }
  throw std::invalid_argument("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"table3-conv-0", "table3-conv-1", "table3-conv-2", "table3-conv-3",
          "minionn-toy", "resnet32-block"};
}

namespace {

std::vector<double> draw_float_weights(uint64_t seed, int64_t count, int64_t fan_in) {
  Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(count));
  const double sigma = 0.5 / std::sqrt(static_cast<double>(std::max<int64_t>(1, fan_in)));
  for (auto& v : w) v = sigma * rng.next_normal();
  return w;
}

Codebook pick_codebook(const NetworkDescription& desc, int l_w,
                       const std::vector<double>& reference_weights) {
  if (desc.codebook == "standard" || l_w < 2) return Codebook::standard(l_w);
  if (desc.codebook == "reweighted") return Codebook::reweighted(l_w);
  return choose_codebook(reference_weights, l_w, desc.outlier_tau);
}

QuantWeights quantize_direct_matrix(const std::vector<double>& w_float,
                                    int64_t rows, int64_t cols,
                                    const Codebook& cb) {
  // Planning convention: generated layers use the fixed scale 2^l_w, keeping
  // per-layer costs independent of the drawn weight values.
  const int e_w = cb.width();
  QuantWeights q;
  q.rows = rows;
  q.cols = cols;
  q.importance = cb.importance();
  q.scale_exp = e_w;
  q.values.reserve(w_float.size());
  for (double v : w_float) q.values.push_back(quantize_to_codeword(v, e_w, cb));
  q.validate();
  return q;
}

}  // namespace

NetworkInstance make_instance(const NetworkDescription& desc, bool winograd_enabled,
                              const std::map<std::string, WidthOverride>& overrides) {
  desc.validate();
  NetworkInstance inst;
  inst.desc = desc;
  inst.winograd_enabled = winograd_enabled;

  int64_t c = desc.input.c, h = desc.input.h, w = desc.input.w;
  uint64_t layer_seed = *desc.seed;
  for (LayerSpec& l : inst.desc.layers) {
    layer_seed = layer_seed * 0x9e3779b97f4a7c15ULL + 0xb5ULL;
    if (auto it = overrides.find(l.name); it != overrides.end()) {
      if (it->second.l_w) l.l_w = it->second.l_w;
      if (it->second.l_a) l.l_a = it->second.l_a;
    }
    if (l.type == "conv") {
      const int64_t fan_in = c * l.kernel * l.kernel;
      auto floats = draw_float_weights(layer_seed, l.out_channels * fan_in, fan_in);
      inst.float_weights[l.name] = floats;
      const bool use_wino = winograd_enabled && l.winograd && l.stride == 1 &&
                            l.kernel == 3 && h % l.wino_m == 0 && w % l.wino_m == 0;
      if (use_wino) {
        TransformSet ts = transform_matrices(l.wino_m, 3);
        // Outliers are judged on the transformed weights, where the
        // transformation introduces them.
        std::vector<double> wino_floats;
        wino_floats.reserve(floats.size() * 16 / 9);
        DMat kernel(3, 3);
        const DMat gt = ts.g.transposed();
        for (int64_t kc = 0; kc < l.out_channels * c; ++kc) {
          for (int i = 0; i < 9; ++i) {
            kernel.v[static_cast<size_t>(i)] = floats[static_cast<size_t>(kc * 9 + i)];
          }
          DMat t = dmul(dmul(ts.g, kernel), gt);
          wino_floats.insert(wino_floats.end(), t.v.begin(), t.v.end());
        }
        Codebook cb = pick_codebook(desc, l.l_w, wino_floats);
        inst.codebooks.emplace(l.name, cb);
        WinogradWeights ww =
            weight_transform_offline(floats, l.out_channels, c, ts, cb, cb.width());
        inst.bank.winograd[l.name] = std::move(ww);
        inst.conv_cfgs[l.name] = make_qwinconv_config(
            h, w, c, l.out_channels, l.wino_m, 3, l.l_a, cb.width(),
            cb.max_magnitude(), l.l_out, l.out_scale_exp);
      } else {
        Codebook cb = Codebook::standard(l.l_w);
        inst.codebooks.emplace(l.name, cb);
        inst.bank.direct[l.name] =
            quantize_direct_matrix(floats, l.out_channels, fan_in, cb);
      }
      h = (h + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
      w = (w + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
      c = l.out_channels;
    } else if (l.type == "fc") {
      const int64_t features = c * h * w;
      auto floats = draw_float_weights(layer_seed, l.out_features * features, features);
      inst.float_weights[l.name] = floats;
      Codebook cb = Codebook::standard(l.l_w);
      inst.codebooks.emplace(l.name, cb);
      inst.bank.direct[l.name] =
          quantize_direct_matrix(floats, l.out_features, features, cb);
      c = l.out_features;
      h = 1;
      w = 1;
    }
  }
  return inst;
}

Graph build_graph(const NetworkInstance& inst) {
  const NetworkDescription& desc = inst.desc;
  Graph g;

  Node in;
  in.kind = NodeKind::Input;
  in.p.l2 = desc.input.width;
  in.p.s2_exp = desc.input.scale_exp;
  in.p.nonneg = desc.input.nonneg;
  in.p.c = desc.input.c;
  in.p.h = desc.input.h;
  in.p.w = desc.input.w;
  in.layer = "input";
  int cur = g.add(in);

  std::map<std::string, int> taps;
  taps["input"] = cur;

  int cur_width = desc.input.width;
  int cur_scale = desc.input.scale_exp;
  int64_t c = desc.input.c, h = desc.input.h, w = desc.input.w;

  for (size_t li = 0; li < desc.layers.size(); ++li) {
    const LayerSpec& l = desc.layers[li];
    if (l.type == "conv" || l.type == "fc") {
      require(cur_scale >= l.a_scale_exp,
              l.name + ": activation scale must not exceed the incoming scale");
      if (cur_width != l.l_a || cur_scale != l.a_scale_exp) {
        Node rq;
        rq.kind = NodeKind::Requant;
        rq.p.l2 = l.l_a;
        rq.p.s2_exp = l.a_scale_exp;
        rq.inputs = {cur};
        rq.layer = l.name;
        cur = g.add(rq);
        cur_width = l.l_a;
        cur_scale = l.a_scale_exp;
      }
    }
    if (l.type == "conv") {
      const bool next_is_residual =
          li + 1 < desc.layers.size() && desc.layers[li + 1].type == "residual";
      if (inst.conv_cfgs.count(l.name)) {
        const QWinConvConfig& cfg = inst.conv_cfgs.at(l.name);
        const WinogradWeights& ww = inst.bank.winograd.at(l.name);
        Node qc;
        qc.kind = NodeKind::QWinConv;
        qc.p.h = h;
        qc.p.w = w;
        qc.p.c = c;
        qc.p.k = l.out_channels;
        qc.p.m = cfg.m;
        qc.p.r = cfg.r;
        qc.p.pad = cfg.pad;
        qc.p.l_a = cfg.l_a;
        qc.p.l_feature_ext = cfg.l_feature_ext;
        qc.p.l_acc = cfg.l_acc;
        qc.p.l_out_ext = cfg.l_out_ext;
        qc.p.l_out = cfg.l_out;
        qc.p.s_out_exp = cfg.s_out_exp;
        qc.p.l_planes = ww.bit_planes();
        qc.p.w_scale_exp = ww.scale_exp;
        qc.p.weights_ref = l.name;
        qc.p.defer_requant = next_is_residual;
        qc.inputs = {cur};
        qc.layer = l.name;
        cur = g.add(qc);
        cur_width = next_is_residual ? cfg.l_out_ext : cfg.l_out;
        cur_scale = next_is_residual ? l.a_scale_exp + ww.scale_exp : cfg.s_out_exp;
      } else {
        const QuantWeights& dw = inst.bank.direct.at(l.name);
        const int pad = l.kernel / 2;
        const int l_acc =
            l.l_a + dw.bit_planes() + ceil_log2(c * l.kernel * l.kernel);
        Node col;
        col.kind = NodeKind::LocalTransform;
        col.p.local_op = "im2col";
        col.p.c = c;
        col.p.h = h;
        col.p.w = w;
        col.p.r = l.kernel;
        col.p.stride = l.stride;
        col.p.pad = pad;
        col.inputs = {cur};
        col.layer = l.name;
        cur = g.add(col);

        Node e;
        e.kind = NodeKind::Ext;
        e.p.l2 = l_acc;
        e.inputs = {cur};
        e.layer = l.name;
        cur = g.add(e);

        Node gm;
        gm.kind = NodeKind::GemmOT;
        gm.p.gemm_kind = "im2col";
        gm.p.weights_ref = l.name;
        gm.p.l_planes = dw.bit_planes();
        gm.p.l_acc = l_acc;
        gm.p.w_scale_exp = dw.scale_exp;
        gm.p.l_a = l.l_a;
        gm.p.c = c;
        gm.p.h = h;
        gm.p.w = w;
        gm.p.k = l.out_channels;
        gm.p.r = l.kernel;
        gm.p.stride = l.stride;
        gm.p.pad = pad;
        gm.inputs = {cur};
        gm.layer = l.name;
        cur = g.add(gm);
        cur_width = l_acc;
        cur_scale = l.a_scale_exp + dw.scale_exp;
        if (!next_is_residual) {
          Node rq;
          rq.kind = NodeKind::Requant;
          rq.p.l2 = l.l_out;
          rq.p.s2_exp = l.out_scale_exp;
          rq.inputs = {cur};
          rq.layer = l.name;
          cur = g.add(rq);
          cur_width = l.l_out;
          cur_scale = l.out_scale_exp;
        }
      }
      h = (h + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
      w = (w + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
      c = l.out_channels;
    } else if (l.type == "fc") {
      const QuantWeights& dw = inst.bank.direct.at(l.name);
      const int64_t features = c * h * w;
      const int l_acc = l.l_a + dw.bit_planes() + ceil_log2(features);
      Node fl;
      fl.kind = NodeKind::LocalTransform;
      fl.p.local_op = "flatten";
      fl.inputs = {cur};
      fl.layer = l.name;
      cur = g.add(fl);

      Node e;
      e.kind = NodeKind::Ext;
      e.p.l2 = l_acc;
      e.inputs = {cur};
      e.layer = l.name;
      cur = g.add(e);

      Node gm;
      gm.kind = NodeKind::GemmOT;
      gm.p.gemm_kind = "fc";
      gm.p.weights_ref = l.name;
      gm.p.l_planes = dw.bit_planes();
      gm.p.l_acc = l_acc;
      gm.p.w_scale_exp = dw.scale_exp;
      gm.p.l_a = l.l_a;
      gm.p.k = l.out_features;
      gm.p.c = features;
      gm.inputs = {cur};
      gm.layer = l.name;
      cur = g.add(gm);

      Node rq;
      rq.kind = NodeKind::Requant;
      rq.p.l2 = l.l_out;
      rq.p.s2_exp = l.out_scale_exp;
      rq.inputs = {cur};
      rq.layer = l.name;
      cur = g.add(rq);
      cur_width = l.l_out;
      cur_scale = l.out_scale_exp;
      c = l.out_features;
      h = 1;
      w = 1;
    } else if (l.type == "relu") {
      Node rl;
      rl.kind = NodeKind::ReLU;
      rl.inputs = {cur};
      rl.layer = l.name;
      cur = g.add(rl);
    } else if (l.type == "residual") {
      require(taps.count(l.from), l.name + ": unknown residual tap '" + l.from + "'");
      Node res;
      res.kind = NodeKind::ResidualBaseline;
      res.p.l_add = l.l_add;
      res.p.s_add_exp = l.add_scale_exp;
      res.p.l_out = l.l_out;        // target of the simplified rewrite
      res.p.s_out_exp = l.out_scale_exp;
      res.inputs = {cur, taps.at(l.from)};
      res.layer = l.name;
      cur = g.add(res);
      cur_width = l.l_add;
      cur_scale = l.add_scale_exp;
    }
    taps[l.name] = cur;
  }

  // Normalize every variant of this graph to the declared output point.
  Node rq;
  rq.kind = NodeKind::Requant;
  rq.p.l2 = desc.out_width;
  rq.p.s2_exp = desc.out_scale_exp;
  rq.inputs = {cur};
  rq.layer = "output";
  cur = g.add(rq);

  Node out;
  out.kind = NodeKind::Output;
  out.inputs = {cur};
  out.layer = "output";
  g.add(out);
  g.finalize();
  return g;
}

PlainTensor random_network_input(const NetworkDescription& desc, uint64_t seed) {
  Rng rng(seed);
  PlainTensor x;
  x.shape = {desc.input.c, desc.input.h, desc.input.w};
  x.meta = {desc.input.width, desc.input.scale_exp, desc.input.nonneg};
  const int64_t n = desc.input.c * desc.input.h * desc.input.w;
  x.data.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    if (desc.input.nonneg) {
      // Non-negative activations in the lower half of the unsigned range.
      x.data.push_back(rng.next_ring(desc.input.width - 1));
    } else {
      x.data.push_back(rng.next_ring(desc.input.width));
    }
  }
  return x;
}

int64_t layer_comm_cost(const ConvLayerDims& dims, int l_w, int l_a,
                        bool optimized, const CostModel& model) {
  if (dims.h <= 0 || dims.w <= 0 || dims.c <= 0 || dims.k <= 0) return 0;
  NetworkDescription d;
  d.name = "layer-cost";
  d.seed = 1;
  d.input = {dims.c, dims.h, dims.w, 8, l_a + 2, true};
  d.out_width = 8;
  d.out_scale_exp = l_a;
  d.codebook = "standard";  // planning convention: width-determined costs
  LayerSpec conv;
  conv.type = "conv";
  conv.name = "layer";
  conv.out_channels = dims.k;
  conv.kernel = dims.r;
  conv.stride = dims.stride;
  conv.l_w = l_w;
  conv.l_a = l_a;
  conv.a_scale_exp = l_a;
  conv.l_out = 8;
  conv.out_scale_exp = l_a;
  d.layers = {conv};
  NetworkInstance inst = make_instance(d, /*winograd_enabled=*/true);
  Graph g = build_graph(inst);
  if (optimized) {
    g = optimize(g, OptimizeOptions{true, true, true}, model).graph;
  } else {
    g = expand_composites(g);
  }
  CostBreakdown cb = predict_graph_cost(g, model);
  int64_t total = 0;
  for (const auto& [key, bits] : cb.bits) {
    if (key.scope == "layer") total += bits;
  }
  return total;
}

}  // namespace otwin
