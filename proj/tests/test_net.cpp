#include <doctest.h>

#include <thread>

#include "otwin/net.hpp"

using namespace otwin;

TEST_CASE("exchange charges eight bits per byte") {
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        ctx.exchange(std::vector<uint8_t>(16, 0xab), "ping", Phase::Online);
      },
      [](PartyCtx& ctx) { ctx.recv_bytes(); });
  CHECK(tp.meter().tag_bits("ping") == 128);

  TwoParty tp0(1);
  tp0.run([](PartyCtx& ctx) { ctx.exchange({}, "empty", Phase::Online); },
          [](PartyCtx& ctx) { ctx.recv_bytes(); });
  CHECK(tp0.meter().tag_bits("empty") == 0);
}

TEST_CASE("alternating pings count one round each") {
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        ctx.exchange({1}, "ping", Phase::Online);
        ctx.recv_bytes();
      },
      [](PartyCtx& ctx) {
        ctx.recv_bytes();
        ctx.exchange({2}, "ping", Phase::Online);
      });
  CHECK(tp.meter().phase_rounds(Phase::Online) == 2);
}

TEST_CASE("a send burst in one direction is a single round") {
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        for (int i = 0; i < 5; ++i) ctx.send_bytes({static_cast<uint8_t>(i)});
      },
      [](PartyCtx& ctx) {
        for (int i = 0; i < 5; ++i) ctx.recv_bytes();
      });
  CHECK(tp.meter().total_rounds() == 1);
}

TEST_CASE("charge adds exactly the requested bits") {
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        ctx.charge("Ext", Phase::Online, 700);
        ctx.charge("Ext", Phase::Online, 0);
      },
      [](PartyCtx&) {});
  CHECK(tp.meter().tag_bits("Ext") == 700);
  CHECK(tp.meter().total_bits() == 700);
}

TEST_CASE("negative charges are rejected") {
  TwoParty tp(1);
  CHECK_THROWS_AS(tp.run([](PartyCtx& ctx) { ctx.charge("x", Phase::Online, -1); },
                         [](PartyCtx&) {}),
                  std::invalid_argument);
}

TEST_CASE("meter total equals offline plus online") {
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        ctx.charge("a", Phase::Offline, 10);
        ctx.charge("b", Phase::Online, 5);
        ctx.charge("a", Phase::Online, 3);
      },
      [](PartyCtx&) {});
  CHECK(tp.meter().phase_bits(Phase::Offline) == 10);
  CHECK(tp.meter().phase_bits(Phase::Online) == 8);
  CHECK(tp.meter().total_bits() == 18);
  CHECK(tp.meter().tag_bits("a") == 13);
}

TEST_CASE("latency model is bits over bandwidth plus rounds times rtt") {
  CommMeter empty;
  NetworkProfile p{377.0e6, 80.0e-3};
  auto est0 = estimate_latency(empty, p);
  CHECK(est0.total_s == 0.0);

  // 377 MB in one burst at 377 MBps and no further rounds: ~1 s of transfer
  // (the single send burst contributes one rtt).
  TwoParty tp(1);
  tp.run(
      [](PartyCtx& ctx) {
        ctx.charge("bulk", Phase::Online, int64_t{377000000} * 8);
      },
      [](PartyCtx&) {});
  auto est1 = estimate_latency(tp.meter(), NetworkProfile{377.0e6, 0.3e-3});
  CHECK(est1.online_s == doctest::Approx(1.0));

  // Rounds only: 10 rounds at 80 ms.
  CommMeter rounds_only;
  for (int i = 0; i < 10; ++i) rounds_only.add_round("", "", Phase::Online);
  auto est2 = estimate_latency(rounds_only, NetworkProfile{40.0e6, 80.0e-3});
  CHECK(est2.online_s == doctest::Approx(0.8));
}

TEST_CASE("network profile validation") {
  CHECK_THROWS_AS(estimate_latency(CommMeter{}, NetworkProfile{0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(estimate_latency(CommMeter{}, NetworkProfile{1, 0}),
                  std::invalid_argument);
}

TEST_CASE("disabling the meter leaves functional output unchanged") {
  auto run_once = [](bool metering) {
    SessionConfig cfg;
    cfg.seed = 11;
    cfg.metering = metering;
    TwoParty tp(cfg);
    std::vector<uint8_t> got;
    tp.run(
        [](PartyCtx& ctx) { ctx.exchange({9, 8, 7}, "t", Phase::Online); },
        [&](PartyCtx& ctx) { got = ctx.recv_bytes(); });
    return std::pair{got, tp.meter().total_bits()};
  };
  auto [with_meter, bits_on] = run_once(true);
  auto [without_meter, bits_off] = run_once(false);
  CHECK(with_meter == without_meter);
  CHECK(bits_on == 24);
  CHECK(bits_off == 0);
}

TEST_CASE("meter totals are reproducible across runs") {
  auto run_once = [] {
    TwoParty tp(5);
    tp.run(
        [](PartyCtx& ctx) {
          ctx.exchange({1, 2}, "a", Phase::Offline);
          ctx.charge("b", Phase::Online, 17);
        },
        [](PartyCtx& ctx) { ctx.recv_bytes(); });
    return tp.meter().bits();
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("distinct sessions run safely in parallel") {
  std::vector<std::thread> threads;
  std::vector<int64_t> totals(4, 0);
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([i, &totals] {
      TwoParty tp(static_cast<uint64_t>(i) + 1);
      tp.run([](PartyCtx& ctx) { ctx.charge("x", Phase::Online, 100); },
             [](PartyCtx&) {});
      totals[static_cast<size_t>(i)] = tp.meter().total_bits();
    });
  }
  for (auto& t : threads) t.join();
  for (int64_t v : totals) CHECK(v == 100);
}

TEST_CASE("cost model validation") {
  CostModel bad;
  bad.lambda = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
