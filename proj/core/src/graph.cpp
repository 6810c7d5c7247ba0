#include "otwin/graph.hpp"

#include <algorithm>

#include <json.hpp>

namespace otwin {

namespace {

int64_t shape_elems(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

[[noreturn]] void graph_error(const Node& n, const std::string& what) {
  throw std::logic_error("graph node " + std::to_string(n.id) + " (" +
                         node_kind_name(n.kind) + "): " + what);
}

}  // namespace

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "Input";
    case NodeKind::Output: return "Output";
    case NodeKind::Requant: return "Requant";
    case NodeKind::Ext: return "Ext";
    case NodeKind::Trunc: return "Trunc";
    case NodeKind::TR: return "TR";
    case NodeKind::LocalTransform: return "LocalTransform";
    case NodeKind::GemmOT: return "GemmOT";
    case NodeKind::QWinConv: return "QWinConv";
    case NodeKind::ResidualBaseline: return "ResidualBaseline";
    case NodeKind::ResidualSimplified: return "ResidualSimplified";
    case NodeKind::ReLU: return "ReLU";
  }
  return "?";
}

NodeKind node_kind_from_name(const std::string& name) {
  static const std::map<std::string, NodeKind> table = {
      {"Input", NodeKind::Input},
      {"Output", NodeKind::Output},
      {"Requant", NodeKind::Requant},
      {"Ext", NodeKind::Ext},
      {"Trunc", NodeKind::Trunc},
      {"TR", NodeKind::TR},
      {"LocalTransform", NodeKind::LocalTransform},
      {"GemmOT", NodeKind::GemmOT},
      {"QWinConv", NodeKind::QWinConv},
      {"ResidualBaseline", NodeKind::ResidualBaseline},
      {"ResidualSimplified", NodeKind::ResidualSimplified},
      {"ReLU", NodeKind::ReLU},
  };
  auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown node kind " + name);
  return it->second;
}

int Graph::add(Node n) {
  n.id = static_cast<int>(nodes.size());
  nodes.push_back(std::move(n));
  return nodes.back().id;
}

int Graph::input_id() const {
  for (const Node& n : nodes) {
    if (n.kind == NodeKind::Input) return n.id;
  }
  throw std::logic_error("graph has no input node");
}

int Graph::output_id() const {
  for (const Node& n : nodes) {
    if (n.kind == NodeKind::Output) return n.id;
  }
  throw std::logic_error("graph has no output node");
}

std::vector<int> Graph::user_counts() const {
  std::vector<int> counts(nodes.size(), 0);
  for (const Node& n : nodes) {
    for (int in : n.inputs) counts[static_cast<size_t>(in)] += 1;
  }
  return counts;
}

void Graph::finalize() {
  int inputs_seen = 0, outputs_seen = 0;
  for (size_t i = 0; i < nodes.size(); ++i) {
    Node& n = nodes[i];
    n.id = static_cast<int>(i);
    for (int in : n.inputs) {
      if (in < 0 || in >= n.id) graph_error(n, "inputs must precede the node");
    }
    auto in_node = [&](size_t which) -> const Node& {
      if (which >= n.inputs.size()) graph_error(n, "missing operand");
      return nodes[static_cast<size_t>(n.inputs[which])];
    };
    switch (n.kind) {
      case NodeKind::Input: {
        ++inputs_seen;
        if (!n.inputs.empty()) graph_error(n, "input node takes no operands");
        check_width(n.p.l2);
        n.out_meta = {n.p.l2, n.p.s2_exp, n.p.nonneg};
        n.out_shape = n.p.c > 0 ? std::vector<int64_t>{n.p.c, n.p.h, n.p.w}
                                : std::vector<int64_t>{n.p.h * n.p.w};
        n.value_nonneg = n.p.nonneg;
        break;
      }
      case NodeKind::Output: {
        ++outputs_seen;
        const Node& a = in_node(0);
        n.out_meta = a.out_meta;
        n.out_shape = a.out_shape;
        n.value_nonneg = a.value_nonneg;
        break;
      }
      case NodeKind::Requant: {
        const Node& a = in_node(0);
        check_width(n.p.l2);
        if (a.out_meta.scale_exp < n.p.s2_exp) {
          graph_error(n, "requant scale ratio must be a power of two >= 1");
        }
        n.out_meta = {n.p.l2, n.p.s2_exp, a.value_nonneg};
        n.out_shape = a.out_shape;
        n.value_nonneg = a.value_nonneg;
        break;
      }
      case NodeKind::Ext: {
        const Node& a = in_node(0);
        if (n.p.l2 <= a.out_meta.width) graph_error(n, "extension must grow width");
        check_width(n.p.l2);
        n.out_meta = {n.p.l2, a.out_meta.scale_exp, a.value_nonneg};
        n.out_shape = a.out_shape;
        n.value_nonneg = a.value_nonneg;
        break;
      }
      case NodeKind::Trunc: {
        const Node& a = in_node(0);
        if (n.p.shift <= 0 || n.p.shift >= a.out_meta.width) {
          graph_error(n, "shift must be in (0, width)");
        }
        n.out_meta = {a.out_meta.width, a.out_meta.scale_exp - n.p.shift,
                      a.value_nonneg};
        n.out_shape = a.out_shape;
        n.value_nonneg = a.value_nonneg;
        break;
      }
      case NodeKind::TR: {
        const Node& a = in_node(0);
        if (n.p.shift <= 0 || n.p.shift >= a.out_meta.width) {
          graph_error(n, "shift must be in (0, width)");
        }
        n.out_meta = {a.out_meta.width - n.p.shift,
                      a.out_meta.scale_exp - n.p.shift, a.value_nonneg};
        n.out_shape = a.out_shape;
        n.value_nonneg = a.value_nonneg;
        break;
      }
      case NodeKind::LocalTransform: {
        const Node& a = in_node(0);
        if (n.p.local_op == "narrow") {
          if (n.p.l2 > a.out_meta.width) graph_error(n, "narrow cannot grow width");
          n.out_meta = {n.p.l2, a.out_meta.scale_exp, a.value_nonneg};
          n.out_shape = a.out_shape;
          n.value_nonneg = a.value_nonneg;
        } else if (n.p.local_op == "feature") {
          const int nn = n.p.m + n.p.r - 1;
          const int64_t t = (n.p.h / n.p.m) * (n.p.w / n.p.m);
          n.out_meta = {a.out_meta.width, a.out_meta.scale_exp, false};
          n.out_shape = {n.p.c, t, nn, nn};
          n.value_nonneg = false;  // transform coefficients are signed
        } else if (n.p.local_op == "output") {
          n.out_meta = {a.out_meta.width, a.out_meta.scale_exp, false};
          n.out_shape = {n.p.k, n.p.h, n.p.w};
          n.value_nonneg = false;
        } else if (n.p.local_op == "im2col") {
          const int64_t ho = (n.p.h + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
          const int64_t wo = (n.p.w + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
          n.out_meta = {a.out_meta.width, a.out_meta.scale_exp, a.value_nonneg};
          n.out_shape = {n.p.c * n.p.r * n.p.r, ho * wo};
          n.value_nonneg = a.value_nonneg;  // gather with zero padding
        } else if (n.p.local_op == "flatten") {
          n.out_meta = a.out_meta;
          n.out_shape = {shape_elems(a.out_shape), 1};
          n.value_nonneg = a.value_nonneg;
        } else {
          graph_error(n, "unknown local op '" + n.p.local_op + "'");
        }
        break;
      }
      case NodeKind::GemmOT: {
        const Node& a = in_node(0);
        check_width(n.p.l_acc);
        if (a.out_meta.width != n.p.l_acc) {
          graph_error(n, "gemm input must be held at l_acc");
        }
        n.out_meta = {n.p.l_acc, a.out_meta.scale_exp + n.p.w_scale_exp, false};
        if (n.p.gemm_kind == "winograd") {
          const int nn = n.p.m + n.p.r - 1;
          const int64_t t = (n.p.h / n.p.m) * (n.p.w / n.p.m);
          n.out_shape = {n.p.k, t, nn, nn};
        } else if (n.p.gemm_kind == "im2col") {
          const int64_t ho = (n.p.h + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
          const int64_t wo = (n.p.w + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
          n.out_shape = {n.p.k, ho, wo};
        } else if (n.p.gemm_kind == "fc") {
          n.out_shape = {n.p.k, 1};
        } else {
          graph_error(n, "unknown gemm kind '" + n.p.gemm_kind + "'");
        }
        n.value_nonneg = false;
        break;
      }
      case NodeKind::QWinConv: {
        const Node& a = in_node(0);
        if (a.out_meta.width != n.p.l_a) graph_error(n, "input width != l_a");
        const int l = n.p.defer_requant ? n.p.l_out_ext : n.p.l_out;
        const int s = n.p.defer_requant
                          ? a.out_meta.scale_exp + n.p.w_scale_exp
                          : n.p.s_out_exp;
        n.out_meta = {l, s, false};
        n.out_shape = {n.p.k, n.p.h, n.p.w};
        n.value_nonneg = false;
        break;
      }
      case NodeKind::ResidualBaseline: {
        const Node& a = in_node(0);
        const Node& b = in_node(1);
        if (shape_elems(a.out_shape) != shape_elems(b.out_shape)) {
          graph_error(n, "residual operands disagree in size");
        }
        check_width(n.p.l_add);
        n.out_meta = {n.p.l_add, n.p.s_add_exp, false};
        n.out_shape = a.out_shape;
        n.value_nonneg = false;
        break;
      }
      case NodeKind::ResidualSimplified: {
        const Node& a = in_node(0);
        const Node& b = in_node(1);
        if (shape_elems(a.out_shape) != shape_elems(b.out_shape)) {
          graph_error(n, "residual operands disagree in size");
        }
        check_width(n.p.l_out);
        n.out_meta = {n.p.l_out, n.p.s_out_exp, false};
        n.out_shape = a.out_shape;
        n.value_nonneg = false;
        break;
      }
      case NodeKind::ReLU: {
        const Node& a = in_node(0);
        n.out_meta = {a.out_meta.width, a.out_meta.scale_exp, true};
        n.out_shape = a.out_shape;
        n.value_nonneg = true;
        break;
      }
    }
    n.out_elems = shape_elems(n.out_shape);
  }
  if (inputs_seen != 1) throw std::logic_error("graph must have exactly one input");
  if (outputs_seen != 1) throw std::logic_error("graph must have exactly one output");
}

namespace {

bool is_composite(const Node& n) {
  return n.kind == NodeKind::QWinConv || n.kind == NodeKind::Requant;
}

}  // namespace

Graph expand_composites(const Graph& g_in) {
  Graph g = g_in;
  g.finalize();
  bool again = true;
  while (again) {
    again = false;
    Graph out;
    std::vector<int> remap(g.nodes.size(), -1);
    for (const Node& n : g.nodes) {
      Node copy = n;
      copy.id = -1;
      copy.inputs.clear();
      for (int in : n.inputs) copy.inputs.push_back(remap[static_cast<size_t>(in)]);
      if (!is_composite(n)) {
        remap[static_cast<size_t>(n.id)] = out.add(copy);
        continue;
      }
      again = true;
      const BitWidthMeta in_meta = g.at(n.inputs[0]).out_meta;
      int cur = copy.inputs[0];
      if (n.kind == NodeKind::Requant) {
        const int t = in_meta.scale_exp - n.p.s2_exp;
        if (t > 0) {
          Node tr;
          tr.kind = NodeKind::Trunc;
          tr.inputs = {cur};
          tr.p.shift = t;
          tr.layer = n.layer;
          tr.msb_cost = n.msb_cost;
          cur = out.add(tr);
        }
        if (n.p.l2 > in_meta.width) {
          Node e;
          e.kind = NodeKind::Ext;
          e.inputs = {cur};
          e.p.l2 = n.p.l2;
          e.layer = n.layer;
          e.msb_cost = n.msb_cost;
          cur = out.add(e);
        } else {
          // Width drops (and the identity case) are local share reductions.
          Node nr;
          nr.kind = NodeKind::LocalTransform;
          nr.p.local_op = "narrow";
          nr.p.l2 = n.p.l2;
          nr.inputs = {cur};
          nr.layer = n.layer;
          cur = out.add(nr);
        }
        remap[static_cast<size_t>(n.id)] = cur;
        continue;
      }

      // QWinConv: extension, feature transform, accumulator extension, the
      // batched Winograd-domain GEMM, output extension, output transform and
      // (unless a residual join absorbs it) the output requant.
      const NodeParams& p = n.p;
      Node e2;
      e2.kind = NodeKind::Ext;
      e2.inputs = {cur};
      e2.p.l2 = p.l_feature_ext;
      e2.layer = n.layer;
      cur = out.add(e2);

      Node feat;
      feat.kind = NodeKind::LocalTransform;
      feat.p.local_op = "feature";
      feat.p.h = p.h;
      feat.p.w = p.w;
      feat.p.c = p.c;
      feat.p.m = p.m;
      feat.p.r = p.r;
      feat.p.pad = p.pad;
      feat.inputs = {cur};
      feat.layer = n.layer;
      cur = out.add(feat);

      Node e3;
      e3.kind = NodeKind::Ext;
      e3.inputs = {cur};
      e3.p.l2 = p.l_acc;
      e3.layer = n.layer;
      cur = out.add(e3);

      Node gm;
      gm.kind = NodeKind::GemmOT;
      gm.p.gemm_kind = "winograd";
      gm.p.weights_ref = p.weights_ref;
      gm.p.l_planes = p.l_planes;
      gm.p.l_acc = p.l_acc;
      gm.p.w_scale_exp = p.w_scale_exp;
      gm.p.l_a = p.l_feature_ext;  // logical operand width, for overflow checks
      gm.p.h = p.h;
      gm.p.w = p.w;
      gm.p.c = p.c;
      gm.p.k = p.k;
      gm.p.m = p.m;
      gm.p.r = p.r;
      gm.p.pad = p.pad;
      gm.inputs = {cur};
      gm.layer = n.layer;
      cur = out.add(gm);

      Node e5;
      e5.kind = NodeKind::Ext;
      e5.inputs = {cur};
      e5.p.l2 = p.l_out_ext;
      e5.layer = n.layer;
      cur = out.add(e5);

      Node outt;
      outt.kind = NodeKind::LocalTransform;
      outt.p.local_op = "output";
      outt.p.h = p.h;
      outt.p.w = p.w;
      outt.p.k = p.k;
      outt.p.m = p.m;
      outt.p.r = p.r;
      outt.p.pad = p.pad;
      outt.inputs = {cur};
      outt.layer = n.layer;
      cur = out.add(outt);

      if (!p.defer_requant) {
        Node rq;
        rq.kind = NodeKind::Requant;
        rq.p.l2 = p.l_out;
        rq.p.s2_exp = p.s_out_exp;
        rq.inputs = {cur};
        rq.layer = n.layer;
        cur = out.add(rq);
      }
      remap[static_cast<size_t>(n.id)] = cur;
    }
    g = std::move(out);
    g.finalize();
  }
  return g;
}

int64_t CostBreakdown::total() const {
  int64_t t = 0;
  for (const auto& [k, v] : bits) t += v;
  return t;
}

int64_t CostBreakdown::phase_total(Phase p) const {
  int64_t t = 0;
  for (const auto& [k, v] : bits) {
    if (k.phase == p) t += v;
  }
  return t;
}

CostBreakdown predict_graph_cost(const Graph& g_in, const CostModel& model) {
  bool has_composite = false;
  for (const Node& n : g_in.nodes) has_composite = has_composite || is_composite(n);
  Graph expanded;
  if (has_composite) expanded = expand_composites(g_in);
  const Graph& g = has_composite ? expanded : g_in;

  CostBreakdown cb;
  auto add = [&](const Node& n, const char* tag, Phase ph, int64_t bits) {
    if (bits) cb.bits[{n.layer, tag, ph}] += bits;
  };
  for (const Node& n : g.nodes) {
    if (n.inputs.empty()) continue;
    const Node& a = g.at(n.inputs[0]);
    switch (n.kind) {
      case NodeKind::Ext:
        add(n, "Ext", Phase::Online,
            a.out_elems * cost::ext_bits(a.out_meta.width, n.p.l2, n.msb_cost, model));
        break;
      case NodeKind::Trunc:
        add(n, "Trunc", Phase::Online,
            a.out_elems *
                cost::trunc_bits(a.out_meta.width, n.p.shift, n.msb_cost, model));
        break;
      case NodeKind::TR:
        add(n, "TR", Phase::Online,
            a.out_elems *
                cost::tr_bits(a.out_meta.width, n.p.shift, n.msb_cost, model));
        break;
      case NodeKind::ReLU:
        add(n, "ReLU", Phase::Online,
            a.out_elems * cost::relu_bits(a.out_meta.width, model));
        break;
      case NodeKind::ResidualBaseline: {
        const Node& b = g.at(n.inputs[1]);
        add(n, "Residual", Phase::Online,
            a.out_elems * cost::residual_baseline_bits(a.out_meta.width,
                                                       b.out_meta.width,
                                                       n.p.l_add, model));
        break;
      }
      case NodeKind::ResidualSimplified: {
        const Node& b = g.at(n.inputs[1]);
        add(n, "Residual", Phase::Online,
            a.out_elems * cost::residual_simplified_bits(a.out_meta.width,
                                                         b.out_meta.width, model));
        break;
      }
      case NodeKind::GemmOT: {
        int64_t M = 0, L = 0, N = 0;
        int64_t mult = 1;
        if (n.p.gemm_kind == "winograd") {
          const int nn = n.p.m + n.p.r - 1;
          mult = int64_t{nn} * nn;
          M = n.p.k;
          L = n.p.c;
          N = (n.p.h / n.p.m) * (n.p.w / n.p.m);
        } else if (n.p.gemm_kind == "im2col") {
          M = n.p.k;
          L = n.p.c * n.p.r * n.p.r;
          N = n.out_shape[1] * n.out_shape[2];
        } else {  // fc
          M = n.p.k;
          L = n.p.c;
          N = 1;
        }
        add(n, "GemmOT", Phase::Offline,
            mult * cost::gemm_offline_bits(M, L, N, n.p.l_planes, n.p.l_acc, model));
        add(n, "GemmOT", Phase::Online,
            mult * cost::gemm_online_bits(M, N, n.p.l_acc, model));
        break;
      }
      default:
        break;
    }
  }
  return cb;
}

uint64_t tensor_checksum(const PlainTensor& t) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<uint64_t>(t.meta.width));
  mix(static_cast<uint64_t>(t.meta.scale_exp));
  for (int64_t d : t.shape) mix(static_cast<uint64_t>(d));
  for (uint64_t v : t.data) mix(v);
  return h;
}

namespace {

ShareTensor run_gemm_node(PartyCtx& ctx, const Node& n, const ShareTensor& x,
                          const WeightBank& bank) {
  if (n.p.gemm_kind == "winograd") {
    auto it = bank.winograd.find(n.p.weights_ref);
    if (it == bank.winograd.end()) {
      throw std::logic_error("missing winograd weights '" + n.p.weights_ref + "'");
    }
    const WinogradWeights& ww = it->second;
    const int nn = ww.n;
    const int64_t T = (n.p.h / n.p.m) * (n.p.w / n.p.m);
    ShareTensor out{ctx.party(), n.out_shape, {}, n.out_meta};
    out.data.resize(static_cast<size_t>(n.out_elems));
    for (int u = 0; u < nn; ++u) {
      for (int v = 0; v < nn; ++v) {
        ShareTensor f_uv{ctx.party(), {n.p.c, T}, {}, x.meta};
        f_uv.data.resize(static_cast<size_t>(n.p.c * T));
        for (int64_t ci = 0; ci < n.p.c; ++ci) {
          for (int64_t t = 0; t < T; ++t) {
            f_uv.data[static_cast<size_t>(ci * T + t)] =
                x.data[static_cast<size_t>(((ci * T + t) * nn + u) * nn + v)];
          }
        }
        ShareTensor y_uv =
            gemm_ot(ctx, ww.position_matrix(u, v), f_uv, n.p.l_a, n.p.l_acc);
        for (int64_t ko = 0; ko < n.p.k; ++ko) {
          for (int64_t t = 0; t < T; ++t) {
            out.data[static_cast<size_t>(((ko * T + t) * nn + u) * nn + v)] =
                y_uv.data[static_cast<size_t>(ko * T + t)];
          }
        }
      }
    }
    return out;
  }
  auto it = bank.direct.find(n.p.weights_ref);
  if (it == bank.direct.end()) {
    throw std::logic_error("missing direct weights '" + n.p.weights_ref + "'");
  }
  ShareTensor flat = x;
  if (n.p.gemm_kind == "fc") flat.shape = {x.numel(), 1};
  ShareTensor y = gemm_ot(ctx, it->second, flat, n.p.l_a, n.p.l_acc);
  y.shape = n.out_shape;
  return y;
}

ShareTensor run_local_node(PartyCtx& ctx, const Node& n, const ShareTensor& x) {
  ShareTensor out{ctx.party(), n.out_shape, {}, n.out_meta};
  if (n.p.local_op == "narrow") {
    out = narrow(x, n.p.l2);
    out.meta = n.out_meta;
    out.shape = n.out_shape;
    return out;
  }
  if (n.p.local_op == "feature") {
    TilePlan plan = make_tile_plan(n.p.h, n.p.w, n.p.c, n.p.m, n.p.r, n.p.pad);
    TransformSet ts = transform_matrices(n.p.m, n.p.r);
    auto tiled = tile_gather(plan, x.data);
    out.data = sandwich_tiles(ts.b.transposed(), ts.b, tiled,
                              n.p.c * plan.tile_count(), plan.n, x.meta.width);
    return out;
  }
  if (n.p.local_op == "output") {
    TilePlan plan = make_tile_plan(n.p.h, n.p.w, 1, n.p.m, n.p.r, n.p.pad);
    TransformSet ts = transform_matrices(n.p.m, n.p.r);
    auto tiles = sandwich_tiles(ts.a.transposed(), ts.a, x.data,
                                n.p.k * plan.tile_count(), plan.n, x.meta.width);
    out.data = untile_scatter(plan, n.p.k, tiles);
    return out;
  }
  if (n.p.local_op == "im2col") {
    const int64_t ho = (n.p.h + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
    const int64_t wo = (n.p.w + 2 * n.p.pad - n.p.r) / n.p.stride + 1;
    out.data.resize(static_cast<size_t>(n.out_elems));
    size_t idx = 0;
    for (int64_t ci = 0; ci < n.p.c; ++ci) {
      for (int64_t dy = 0; dy < n.p.r; ++dy) {
        for (int64_t dx = 0; dx < n.p.r; ++dx) {
          for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
              int64_t y = oy * n.p.stride + dy - n.p.pad;
              int64_t xx = ox * n.p.stride + dx - n.p.pad;
              out.data[idx++] =
                  (y < 0 || y >= n.p.h || xx < 0 || xx >= n.p.w)
                      ? 0
                      : x.data[static_cast<size_t>((ci * n.p.h + y) * n.p.w + xx)];
            }
          }
        }
      }
    }
    return out;
  }
  if (n.p.local_op == "flatten") {
    out.data = x.data;
    return out;
  }
  throw std::logic_error("unknown local op in runner");
}

}  // namespace

GraphRunResult run_graph(const Graph& g_in, const PlainTensor& input,
                         const WeightBank& bank, Session& session) {
  Graph g = expand_composites(g_in);

  const Node& in_node = g.at(g.input_id());
  if (input.meta.width != in_node.out_meta.width ||
      input.meta.scale_exp != in_node.out_meta.scale_exp ||
      input.numel() != in_node.out_elems) {
    throw std::invalid_argument("input tensor does not match the graph input");
  }
  PlainTensor in = input;
  in.meta.nonneg = in_node.out_meta.nonneg;
  auto shares = share(in, session.config().seed ^ 0x5eedf00dULL);

  ShareTensor out_s, out_c;
  auto body = [&](PartyCtx& ctx) {
    const ShareTensor& my_in = ctx.is_server() ? shares.first : shares.second;
    std::vector<ShareTensor> vals(g.nodes.size());
    for (const Node& n : g.nodes) {
      ctx.set_scope(n.layer);
      ShareTensor out;
      switch (n.kind) {
        case NodeKind::Input:
          out = my_in;
          break;
        case NodeKind::Output:
          out = vals[static_cast<size_t>(n.inputs[0])];
          break;
        case NodeKind::Ext:
          out = ext(ctx, vals[static_cast<size_t>(n.inputs[0])], n.p.l2, n.msb_cost);
          break;
        case NodeKind::Trunc:
          out = trunc(ctx, vals[static_cast<size_t>(n.inputs[0])], n.p.shift,
                      n.msb_cost);
          break;
        case NodeKind::TR:
          out = truncate_reduce(ctx, vals[static_cast<size_t>(n.inputs[0])],
                                n.p.shift, n.msb_cost);
          break;
        case NodeKind::Requant:
          out = requant(ctx, vals[static_cast<size_t>(n.inputs[0])], n.p.l2,
                        n.p.s2_exp, n.msb_cost);
          break;
        case NodeKind::LocalTransform:
          out = run_local_node(ctx, n, vals[static_cast<size_t>(n.inputs[0])]);
          break;
        case NodeKind::GemmOT:
          out = run_gemm_node(ctx, n, vals[static_cast<size_t>(n.inputs[0])], bank);
          break;
        case NodeKind::ReLU:
          out = relu(ctx, vals[static_cast<size_t>(n.inputs[0])]);
          break;
        case NodeKind::ResidualBaseline:
          out = residual_add_baseline(ctx, vals[static_cast<size_t>(n.inputs[0])],
                                      vals[static_cast<size_t>(n.inputs[1])],
                                      n.p.l_add, n.p.s_add_exp);
          break;
        case NodeKind::ResidualSimplified:
          out = residual_add_simplified(ctx, vals[static_cast<size_t>(n.inputs[0])],
                                        vals[static_cast<size_t>(n.inputs[1])],
                                        n.p.l_out, n.p.s_out_exp, true);
          break;
        case NodeKind::QWinConv:
          throw std::logic_error("composite node reached the runner");
      }
      if (out.meta.width != n.out_meta.width ||
          out.meta.scale_exp != n.out_meta.scale_exp) {
        throw std::logic_error("runtime meta diverged from the graph annotation");
      }
      out.meta = n.out_meta;
      out.shape = n.out_shape;
      vals[static_cast<size_t>(n.id)] = std::move(out);
    }
    (ctx.is_server() ? out_s : out_c) =
        vals[static_cast<size_t>(g.output_id())];
  };
  session.run(body, body);

  GraphRunResult result;
  result.output = reconstruct(out_s, out_c);
  result.checksum = tensor_checksum(result.output);
  return result;
}

// ---- JSON form ----

namespace {

using nlohmann::json;

json params_to_json(const NodeParams& p) {
  json j;
  const NodeParams d;
  auto set = [&](const char* key, auto v, auto dflt) {
    if (v != dflt) j[key] = v;
  };
  set("l2", p.l2, d.l2);
  set("s2_exp", p.s2_exp, d.s2_exp);
  if (p.nonneg) j["nonneg"] = true;
  set("shift", p.shift, d.shift);
  if (!p.local_op.empty()) j["local_op"] = p.local_op;
  set("h", p.h, d.h);
  set("w", p.w, d.w);
  set("c", p.c, d.c);
  set("k", p.k, d.k);
  set("m", p.m, d.m);
  set("r", p.r, d.r);
  set("stride", p.stride, d.stride);
  set("pad", p.pad, d.pad);
  if (!p.gemm_kind.empty()) j["gemm_kind"] = p.gemm_kind;
  if (!p.weights_ref.empty()) j["weights_ref"] = p.weights_ref;
  set("l_planes", p.l_planes, d.l_planes);
  set("l_acc", p.l_acc, d.l_acc);
  set("w_scale_exp", p.w_scale_exp, d.w_scale_exp);
  set("l_a", p.l_a, d.l_a);
  set("l_feature_ext", p.l_feature_ext, d.l_feature_ext);
  set("l_out_ext", p.l_out_ext, d.l_out_ext);
  set("l_out", p.l_out, d.l_out);
  set("s_out_exp", p.s_out_exp, d.s_out_exp);
  if (p.defer_requant) j["defer_requant"] = true;
  set("l_add", p.l_add, d.l_add);
  set("s_add_exp", p.s_add_exp, d.s_add_exp);
  return j;
}

NodeParams params_from_json(const json& j) {
  NodeParams p;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("l2", p.l2);
  get("s2_exp", p.s2_exp);
  get("nonneg", p.nonneg);
  get("shift", p.shift);
  get("local_op", p.local_op);
  get("h", p.h);
  get("w", p.w);
  get("c", p.c);
  get("k", p.k);
  get("m", p.m);
  get("r", p.r);
  get("stride", p.stride);
  get("pad", p.pad);
  get("gemm_kind", p.gemm_kind);
  get("weights_ref", p.weights_ref);
  get("l_planes", p.l_planes);
  get("l_acc", p.l_acc);
  get("w_scale_exp", p.w_scale_exp);
  get("l_a", p.l_a);
  get("l_feature_ext", p.l_feature_ext);
  get("l_out_ext", p.l_out_ext);
  get("l_out", p.l_out);
  get("s_out_exp", p.s_out_exp);
  get("defer_requant", p.defer_requant);
  get("l_add", p.l_add);
  get("s_add_exp", p.s_add_exp);
  return p;
}

}  // namespace

std::string graph_to_json(const Graph& g) {
  json nodes = json::array();
  for (const Node& n : g.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["kind"] = node_kind_name(n.kind);
    jn["inputs"] = n.inputs;
    if (!n.layer.empty()) jn["layer"] = n.layer;
    if (n.msb_cost) jn["msb_cost"] = true;
    json p = params_to_json(n.p);
    if (!p.empty()) jn["params"] = p;
    nodes.push_back(jn);
  }
  json doc;
  doc["schema_version"] = 1;
  doc["nodes"] = nodes;
  return doc.dump(2);
}

Graph graph_from_json(const std::string& json_text) {
  json doc = json::parse(json_text);
  if (!doc.contains("schema_version") || doc.at("schema_version").get<int>() != 1) {
    throw std::invalid_argument("unsupported graph schema version");
  }
  Graph g;
  for (const json& jn : doc.at("nodes")) {
    Node n;
    n.kind = node_kind_from_name(jn.at("kind").get<std::string>());
    n.inputs = jn.at("inputs").get<std::vector<int>>();
    if (jn.contains("layer")) n.layer = jn.at("layer").get<std::string>();
    if (jn.contains("msb_cost")) n.msb_cost = jn.at("msb_cost").get<bool>();
    if (jn.contains("params")) n.p = params_from_json(jn.at("params"));
    g.add(n);
  }
  g.finalize();
  return g;
}

}  // namespace otwin
