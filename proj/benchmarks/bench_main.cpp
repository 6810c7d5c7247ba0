#include <benchmark/benchmark.h>

#include "otwin/commands.hpp"
#include "otwin/graph.hpp"
#include "otwin/network.hpp"
#include "otwin/winograd.hpp"

namespace {

using namespace otwin;

void BM_FeatureTransform(benchmark::State& state) {
  const int64_t c = state.range(0), h = 16, w = 16;
  TransformSet ts = transform_matrices(2, 3);
  TilePlan plan = make_tile_plan(h, w, c, 2, 3, 1);
  Rng rng(1);
  std::vector<uint64_t> x(static_cast<size_t>(c * h * w));
  for (auto& v : x) v = rng.next_ring(14);
  for (auto _ : state) {
    auto tiled = tile_gather(plan, x);
    auto out = sandwich_tiles(ts.b.transposed(), ts.b, tiled,
                              c * plan.tile_count(), plan.n, 14);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * c * plan.tile_count() * 16);
}
BENCHMARK(BM_FeatureTransform)->Arg(8)->Arg(32)->Arg(64);

void BM_GemmOtSession(benchmark::State& state) {
  const int64_t dim = state.range(0);
  Rng rng(2);
  PlainTensor x{{dim, dim}, {}, {16, 0, false}};
  for (int64_t i = 0; i < dim * dim; ++i) x.data.push_back(rng.next_ring(8));
  auto [xs, xc] = share(x, 3);
  std::vector<int64_t> wv(static_cast<size_t>(dim * dim));
  for (auto& v : wv) v = static_cast<int64_t>(rng.next_below(7)) - 3;
  QuantWeights w = make_weights(dim, dim, wv, 2, 0);
  for (auto _ : state) {
    TwoParty tp(4);
    ShareTensor ys, yc;
    tp.run([&](PartyCtx& ctx) { ys = gemm_ot(ctx, w, xs, 8, 16); },
           [&](PartyCtx& ctx) { yc = gemm_ot(ctx, w, xc, 8, 16); });
    benchmark::DoNotOptimize(ys.data.data());
  }
  state.SetItemsProcessed(state.iterations() * dim * dim * dim);
}
BENCHMARK(BM_GemmOtSession)->Arg(8)->Arg(16)->Arg(32);

void BM_OptimizePipeline(benchmark::State& state) {
  NetworkDescription d = preset_network("resnet32-block");
  NetworkInstance inst = make_instance(d, true);
  Graph g = build_graph(inst);
  CostModel model;
  for (auto _ : state) {
    auto r = optimize(g, OptimizeOptions{true, true, true}, model);
    benchmark::DoNotOptimize(r.graph.nodes.data());
  }
}
BENCHMARK(BM_OptimizePipeline);

void BM_IlpAssign(benchmark::State& state) {
  const size_t layers = static_cast<size_t>(state.range(0));
  Rng rng(5);
  PlanProblem p;
  int64_t min_total = 0;
  for (size_t i = 0; i < layers; ++i) {
    p.layer_names.push_back("l" + std::to_string(i));
    std::vector<PlanChoice> row;
    int64_t mn = INT64_MAX;
    for (int j = 0; j < 4; ++j) {
      PlanChoice ch{2 + j, 4, static_cast<int64_t>(100 + rng.next_below(900)) * (j + 1),
                    static_cast<double>(rng.next_below(1000)) / (j + 1.0)};
      row.push_back(ch);
      mn = std::min(mn, ch.cost_bits);
    }
    p.choices.push_back(row);
    min_total += mn;
  }
  p.budget_bits = min_total * 3 / 2;
  for (auto _ : state) {
    auto plan = ilp_assign(p);
    benchmark::DoNotOptimize(&plan);
  }
}
BENCHMARK(BM_IlpAssign)->Arg(8)->Arg(16)->Arg(24);

void BM_QWinConvProtocol(benchmark::State& state) {
  const int64_t c = state.range(0);
  NetworkDescription d = preset_network("resnet32-block");
  d.input.c = c;
  for (LayerSpec& l : d.layers) {
    if (l.type == "conv") l.out_channels = c;
  }
  NetworkInstance inst = make_instance(d, true);
  Graph g = optimize(build_graph(inst), OptimizeOptions{true, true, true},
                     CostModel{})
                .graph;
  PlainTensor x = random_network_input(d, 6);
  for (auto _ : state) {
    SessionConfig cfg{7, {}, true};
    Session session(cfg);
    auto run = run_graph(g, x, inst.bank, session);
    benchmark::DoNotOptimize(run.checksum);
  }
}
BENCHMARK(BM_QWinConvProtocol)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
