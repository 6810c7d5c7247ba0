#include <algorithm>
#include <optional>

#include "otwin/graph.hpp"

namespace otwin {

namespace {

bool is_narrow(const Node& n) {
  return n.kind == NodeKind::LocalTransform && n.p.local_op == "narrow";
}

bool is_hoistable_local(const Node& n) {
  // Width-polymorphic local lincombs/gathers the extension can move across.
  return n.kind == NodeKind::LocalTransform &&
         (n.p.local_op == "feature" || n.p.local_op == "output" ||
          n.p.local_op == "im2col" || n.p.local_op == "flatten");
}

/// Rebuild a graph after edits: nodes marked dead are dropped, and every edge
/// is chased through the redirect table.
Graph compact(const Graph& g, const std::vector<bool>& dead,
              const std::vector<int>& redirect) {
  auto resolve = [&](int id) {
    while (redirect[static_cast<size_t>(id)] != -1) {
      id = redirect[static_cast<size_t>(id)];
    }
    return id;
  };
  Graph out;
  std::vector<int> remap(g.nodes.size(), -1);
  for (const Node& n : g.nodes) {
    if (dead[static_cast<size_t>(n.id)]) continue;
    Node copy = n;
    copy.id = -1;
    copy.inputs.clear();
    for (int in : n.inputs) {
      copy.inputs.push_back(remap[static_cast<size_t>(resolve(in))]);
    }
    remap[static_cast<size_t>(n.id)] = out.add(copy);
  }
  out.finalize();
  return out;
}

}  // namespace

Graph pass_decompose_trunc(const Graph& g_in, PassStats* stats) {
  Graph g = g_in;
  g.finalize();
  Graph out;
  std::vector<int> remap(g.nodes.size(), -1);
  int rewrites = 0;
  for (const Node& n : g.nodes) {
    Node copy = n;
    copy.id = -1;
    copy.inputs.clear();
    for (int in : n.inputs) copy.inputs.push_back(remap[static_cast<size_t>(in)]);
    if (n.kind != NodeKind::Trunc) {
      remap[static_cast<size_t>(n.id)] = out.add(copy);
      continue;
    }
    // Trunc(l1, s) == Ext(l1-s, l1) . TR(l1, s)
    const int l1 = g.at(n.inputs[0]).out_meta.width;
    Node tr;
    tr.kind = NodeKind::TR;
    tr.p.shift = n.p.shift;
    tr.inputs = {copy.inputs[0]};
    tr.layer = n.layer;
    tr.msb_cost = n.msb_cost;
    int tr_id = out.add(tr);
    Node e;
    e.kind = NodeKind::Ext;
    e.p.l2 = l1;
    e.inputs = {tr_id};
    e.layer = n.layer;
    e.msb_cost = n.msb_cost;
    remap[static_cast<size_t>(n.id)] = out.add(e);
    ++rewrites;
  }
  out.finalize();
  if (stats) stats->rewrites += rewrites;
  return out;
}

Graph pass_fuse_ext_ext(const Graph& g_in, PassStats* stats) {
  Graph g = g_in;
  g.finalize();
  int rewrites = 0;
  for (;;) {
    auto users = g.user_counts();
    std::vector<bool> dead(g.nodes.size(), false);
    std::vector<int> redirect(g.nodes.size(), -1);
    bool changed = false;

    for (const Node& n : g.nodes) {
      // Collapse Ext(a->b) immediately followed by a narrow back to c: the
      // pair is a pure mod-2^c re-interpretation.
      if (is_narrow(n)) {
        const Node& e = g.at(n.inputs[0]);
        if (e.kind == NodeKind::Ext && users[static_cast<size_t>(e.id)] == 1) {
          const int a = g.at(e.inputs[0]).out_meta.width;
          const int c = n.p.l2;
          Graph edited = g;
          if (c <= a) {
            // Keep the narrow, drop the extension.
            edited.at(n.id).inputs[0] = e.inputs[0];
            dead[static_cast<size_t>(e.id)] = true;
          } else {
            // The narrow still widens relative to a: a single extension.
            edited.at(e.id).p.l2 = c;
            dead[static_cast<size_t>(n.id)] = true;
            redirect[static_cast<size_t>(n.id)] = e.id;
          }
          g = compact(edited, dead, redirect);
          changed = true;
          ++rewrites;
          break;
        }
      }
      if (n.kind != NodeKind::Ext) continue;
      // Walk up through single-use width-polymorphic locals to an earlier
      // extension; fuse the two and keep the earlier (cheaper) position.
      int p = n.inputs[0];
      while (is_hoistable_local(g.at(p)) && users[static_cast<size_t>(p)] == 1) {
        p = g.at(p).inputs[0];
      }
      const Node& origin = g.at(p);
      if (origin.kind != NodeKind::Ext || users[static_cast<size_t>(p)] != 1) {
        continue;
      }
      const int64_t early_elems = g.at(origin.inputs[0]).out_elems;
      const int64_t late_elems = g.at(n.inputs[0]).out_elems;
      if (early_elems > late_elems) continue;
      Graph edited = g;
      edited.at(p).p.l2 = n.p.l2;
      // Drop the later extension; its users read the (now wider) chain.
      dead[static_cast<size_t>(n.id)] = true;
      redirect[static_cast<size_t>(n.id)] = n.inputs[0];
      g = compact(edited, dead, redirect);
      changed = true;
      ++rewrites;
      break;
    }
    if (!changed) break;
  }
  if (stats) stats->rewrites += rewrites;
  return g;
}

Graph pass_fuse_trunc_ext(const Graph& g_in, PassStats* stats) {
  Graph g = g_in;
  g.finalize();
  int rewrites = 0;
  for (;;) {
    auto users = g.user_counts();
    bool changed = false;
    for (const Node& n : g.nodes) {
      if (n.kind != NodeKind::Ext) continue;
      // Ext following the truncation tail of a re-quantization, possibly
      // with local narrows in between.
      int p = n.inputs[0];
      std::vector<int> narrows;
      while (is_narrow(g.at(p)) && users[static_cast<size_t>(p)] == 1) {
        narrows.push_back(p);
        p = g.at(p).inputs[0];
      }
      const Node& t = g.at(p);
      if (t.kind != NodeKind::Trunc || users[static_cast<size_t>(p)] != 1) continue;

      const int l1 = g.at(t.inputs[0]).out_meta.width;
      const int shift = t.p.shift;
      const int l3 = n.p.l2;
      Graph edited = g;
      std::vector<bool> dead(g.nodes.size(), false);
      std::vector<int> redirect(g.nodes.size(), -1);
      // Trunc becomes TR; dropped high bits re-appear through the extension.
      edited.at(t.id).kind = NodeKind::TR;
      for (int nr : narrows) {
        dead[static_cast<size_t>(nr)] = true;
        redirect[static_cast<size_t>(nr)] = t.id;
      }
      if (l3 > l1 - shift) {
        // keep node n as Ext(l1-shift -> l3); input moves to the TR
        edited.at(n.id).inputs[0] = t.id;
      } else {
        // The target does not exceed the reduced width: a local narrow.
        edited.at(n.id).kind = NodeKind::LocalTransform;
        edited.at(n.id).p.local_op = "narrow";
        edited.at(n.id).inputs[0] = t.id;
      }
      g = compact(edited, dead, redirect);
      changed = true;
      ++rewrites;
      break;
    }
    if (!changed) break;
  }
  if (stats) stats->rewrites += rewrites;
  return g;
}

Graph pass_simplify_residual(const Graph& g_in, PassStats* stats) {
  Graph g = g_in;
  g.finalize();
  int rewrites = 0;
  for (Node& n : g.nodes) {
    if (n.kind != NodeKind::ResidualBaseline) continue;
    const Node& res = g.at(n.inputs[1]);
    if (n.p.l_out <= 0) {
      if (stats) stats->notes.push_back(n.layer + ": no simplified target declared");
      continue;
    }
    if (n.p.l_out < res.out_meta.width) {
      // The main-branch width cannot absorb the residual range.
      if (stats) {
        stats->notes.push_back(n.layer + ": refused, target width " +
                               std::to_string(n.p.l_out) +
                               " below residual width " +
                               std::to_string(res.out_meta.width));
      }
      continue;
    }
    n.kind = NodeKind::ResidualSimplified;
    ++rewrites;
  }
  g.finalize();
  if (stats) stats->rewrites += rewrites;
  return g;
}

Graph pass_msb_propagation(const Graph& g_in, PassStats* stats) {
  Graph g = g_in;
  g.finalize();  // recompute structural nonneg flags
  int rewrites = 0;
  for (Node& n : g.nodes) {
    const bool conversion = n.kind == NodeKind::Ext || n.kind == NodeKind::Trunc ||
                            n.kind == NodeKind::TR || n.kind == NodeKind::Requant;
    if (!conversion || n.msb_cost) continue;
    if (g.at(n.inputs[0]).value_nonneg) {
      n.msb_cost = true;
      ++rewrites;
    }
  }
  if (stats) stats->rewrites += rewrites;
  return g;
}

OptimizeResult optimize(const Graph& g, const OptimizeOptions& opts,
                        const CostModel& model) {
  OptimizeResult res;
  Graph cur = expand_composites(g);
  auto run_pass = [&](const char* name, Graph (*fn)(const Graph&, PassStats*),
                      bool enabled) {
    if (!enabled) return;
    PassStats st;
    st.name = name;
    st.bits_before = predict_graph_cost(cur, model).total();
    Graph next = fn(cur, &st);
    st.bits_after = predict_graph_cost(next, model).total();
    if (st.bits_after > st.bits_before) {
      throw std::logic_error(std::string("pass ") + name + " increased cost");
    }
    cur = std::move(next);
    res.passes.push_back(std::move(st));
  };
  // simplify_residual runs before the fusion family so the conversion chains
  // downstream of a residual join fuse against their final widths.
  run_pass("simplify_residual", pass_simplify_residual, opts.simplify_residual);
  run_pass("decompose_trunc", pass_decompose_trunc, opts.fuse);
  run_pass("fuse_ext_ext", pass_fuse_ext_ext, opts.fuse);
  run_pass("fuse_trunc_ext", pass_fuse_trunc_ext, opts.fuse);
  run_pass("msb_propagation", pass_msb_propagation, opts.msb);
  res.graph = std::move(cur);
  return res;
}

}  // namespace otwin
