#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "otwin/net.hpp"
#include "otwin/proto.hpp"
#include "otwin/winograd.hpp"

namespace otwin {

enum class NodeKind {
  Input,
  Output,
  Requant,
  Ext,
  Trunc,
  TR,
  LocalTransform,
  GemmOT,
  QWinConv,
  ResidualBaseline,
  ResidualSimplified,
  ReLU,
};

const char* node_kind_name(NodeKind k);
NodeKind node_kind_from_name(const std::string& name);

/// Union of per-kind parameters; unused fields stay at their defaults and are
/// omitted from the JSON form.
struct NodeParams {
  // Width/scale targets (Input meta, Ext/Requant/narrow targets).
  int l2 = 0;
  int s2_exp = 0;
  bool nonneg = false;  // Input only
  int shift = 0;        // Trunc / TR

  // Local transforms: "feature" (tile + B^T X B), "output" (A^T [.] A +
  // untile), "im2col", "flatten", "narrow".
  std::string local_op;

  // Geometry shared by conv-ish nodes.
  int64_t h = 0, w = 0, c = 0, k = 0;
  int m = 2, r = 3, stride = 1, pad = 1;

  // GemmOT: "winograd" | "im2col" | "fc".
  std::string gemm_kind;
  std::string weights_ref;
  int l_planes = 0;   // OT bit planes charged per weight entry
  int l_acc = 0;      // accumulator width
  int w_scale_exp = 0;

  // QWinConv composite.
  int l_a = 0, l_feature_ext = 0, l_out_ext = 0, l_out = 0, s_out_exp = 0;
  bool defer_requant = false;  // residual join absorbs the output requant

  // Residual nodes: baseline add point and the simplified target.
  int l_add = 0, s_add_exp = 0;

  friend bool operator==(const NodeParams&, const NodeParams&) = default;
};

struct Node {
  int id = -1;
  NodeKind kind = NodeKind::Input;
  std::vector<int> inputs;
  NodeParams p;
  std::string layer;  // meter scope

  // Pass-controlled: charge the MSB-known formulas.
  bool msb_cost = false;

  // Static annotations filled by Graph::finalize().
  BitWidthMeta out_meta;
  std::vector<int64_t> out_shape;
  int64_t out_elems = 0;
  bool value_nonneg = false;
};

/// DAG of protocol nodes in topological order (inputs always precede users).
class Graph {
 public:
  std::vector<Node> nodes;

  int add(Node n);
  const Node& at(int id) const { return nodes[static_cast<size_t>(id)]; }
  Node& at(int id) { return nodes[static_cast<size_t>(id)]; }

  int input_id() const;
  int output_id() const;

  /// Recompute shapes, metas and structural nonneg flags; validate width and
  /// scale chaining, acyclicity (topological id order) and the single-output
  /// invariant. Throws std::logic_error on violations.
  void finalize();

  /// Number of consumers of each node.
  std::vector<int> user_counts() const;
};

/// Weight storage referenced by GemmOT nodes.
struct WeightBank {
  std::map<std::string, WinogradWeights> winograd;
  std::map<std::string, QuantWeights> direct;
};

/// Lower composite nodes (QWinConv, Requant) to primitive protocol nodes.
/// Cost-neutral by construction: composites are only ever charged as the sum
/// of their parts. Idempotent.
Graph expand_composites(const Graph& g);

struct PassStats {
  std::string name;
  int rewrites = 0;
  int64_t bits_before = 0;
  int64_t bits_after = 0;
  std::vector<std::string> notes;  // e.g. refused residual rewrites
  int64_t saving() const { return bits_before - bits_after; }
};

Graph pass_decompose_trunc(const Graph& g, PassStats* stats = nullptr);
Graph pass_fuse_ext_ext(const Graph& g, PassStats* stats = nullptr);
Graph pass_fuse_trunc_ext(const Graph& g, PassStats* stats = nullptr);
Graph pass_simplify_residual(const Graph& g, PassStats* stats = nullptr);
Graph pass_msb_propagation(const Graph& g, PassStats* stats = nullptr);

struct OptimizeOptions {
  bool fuse = true;
  bool simplify_residual = true;
  bool msb = true;
};

struct OptimizeResult {
  Graph graph;
  std::vector<PassStats> passes;
};

/// Expand composites and run the enabled passes in pipeline order:
/// simplify_residual, decompose_trunc, fuse_ext_ext, fuse_trunc_ext, msb.
/// Enforces cost monotonicity of every rewriting pass.
OptimizeResult optimize(const Graph& g, const OptimizeOptions& opts,
                        const CostModel& model);

/// Static closed-form cost of a graph, keyed exactly like the runtime meter.
struct CostBreakdown {
  std::map<CommMeter::Key, int64_t> bits;
  int64_t total() const;
  int64_t phase_total(Phase p) const;
};

CostBreakdown predict_graph_cost(const Graph& g, const CostModel& model);

struct GraphRunResult {
  PlainTensor output;
  uint64_t checksum = 0;
};

/// Execute the graph over a two-party session: the input is secret-shared,
/// nodes run in topological order across both party threads, and the output
/// is reconstructed. The session meter ends up populated per layer and
/// protocol tag.
GraphRunResult run_graph(const Graph& g, const PlainTensor& input,
                         const WeightBank& bank, Session& session);

uint64_t tensor_checksum(const PlainTensor& t);

/// Versioned JSON form: node list with ids, kinds, edges and parameters.
std::string graph_to_json(const Graph& g);
Graph graph_from_json(const std::string& json_text);

}  // namespace otwin
