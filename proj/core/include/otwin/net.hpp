#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "otwin/costs.hpp"
#include "otwin/ring.hpp"

namespace otwin {

enum class Phase : int { Offline = 0, Online = 1 };

inline const char* phase_name(Phase p) {
  return p == Phase::Offline ? "offline" : "online";
}

/// Per-protocol-tag bit counters split into offline/online phases, plus round
/// counters. Entries are additionally keyed by a scope string (the layer a
/// charge belongs to); an empty scope is fine for standalone protocol runs.
class CommMeter {
 public:
  struct Key {
    std::string scope;
    std::string tag;
    Phase phase;
    auto operator<=>(const Key&) const = default;
  };

  void add_bits(const std::string& scope, const std::string& tag, Phase phase,
                int64_t bits) {
    if (bits < 0) throw std::invalid_argument("cannot charge negative bits");
    bits_[{scope, tag, phase}] += bits;
  }

  void add_round(const std::string& scope, const std::string& tag, Phase phase) {
    rounds_[{scope, tag, phase}] += 1;
  }

  int64_t total_bits() const {
    int64_t t = 0;
    for (const auto& [k, v] : bits_) t += v;
    return t;
  }

  int64_t phase_bits(Phase phase) const {
    int64_t t = 0;
    for (const auto& [k, v] : bits_) {
      if (k.phase == phase) t += v;
    }
    return t;
  }

  int64_t tag_bits(const std::string& tag) const {
    int64_t t = 0;
    for (const auto& [k, v] : bits_) {
      if (k.tag == tag) t += v;
    }
    return t;
  }

  int64_t scope_bits(const std::string& scope) const {
    int64_t t = 0;
    for (const auto& [k, v] : bits_) {
      if (k.scope == scope) t += v;
    }
    return t;
  }

  int64_t phase_rounds(Phase phase) const {
    int64_t t = 0;
    for (const auto& [k, v] : rounds_) {
      if (k.phase == phase) t += v;
    }
    return t;
  }

  int64_t total_rounds() const {
    return phase_rounds(Phase::Offline) + phase_rounds(Phase::Online);
  }

  const std::map<Key, int64_t>& bits() const { return bits_; }
  const std::map<Key, int64_t>& rounds() const { return rounds_; }

 private:
  std::map<Key, int64_t> bits_;
  std::map<Key, int64_t> rounds_;
};

struct LatencyEstimate {
  double offline_s = 0;
  double online_s = 0;
  double total_s = 0;
};

/// bits/8/bandwidth + rounds * rtt, per phase.
LatencyEstimate estimate_latency(const CommMeter& meter,
                                 const NetworkProfile& profile);

struct SessionConfig {
  uint64_t seed = 1;
  CostModel cost;
  bool metering = true;
};

class Session;

/// One party's handle on a session: message endpoints, the party RNG and the
/// charging interface. Protocols are written once and branch on `party()`.
class PartyCtx {
 public:
  PartyCtx(Session& session, Party party, uint64_t seed)
      : session_(session), party_(party), rng_(seed) {}

  Party party() const { return party_; }
  bool is_server() const { return party_ == Party::Server; }
  Rng& rng() { return rng_; }
  Session& session() { return session_; }

  /// Functional payload delivery. Does not charge bits (protocol costs are
  /// charged through the closed-form model), but does advance round counting.
  void send(const std::vector<uint64_t>& payload, Phase phase = Phase::Online);
  std::vector<uint64_t> recv();

  void send_bytes(const std::vector<uint8_t>& payload, Phase phase = Phase::Online);
  std::vector<uint8_t> recv_bytes();

  /// Metered raw exchange: delivers the payload to the peer (who collects it
  /// with recv_bytes) and charges 8*len bits under `tag`.
  void exchange(const std::vector<uint8_t>& payload, const std::string& tag,
                Phase phase);

  /// Charge `bits` against the session meter under this party's scope.
  void charge(const std::string& tag, Phase phase, int64_t bits);

  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  /// Protocol tag used to attribute rounds of subsequent sends.
  void set_tag(std::string tag) { tag_ = std::move(tag); }
  const std::string& tag() const { return tag_; }

  const CostModel& cost_model() const;

 private:
  Session& session_;
  Party party_;
  Rng rng_;
  std::string scope_;
  std::string tag_;
};

/// Two-party session: a duplex in-process channel, the communication meter
/// and the cost model every protocol charges against. The two party agents
/// run as two concurrent threads that interact only through the channel.
class Session {
 public:
  explicit Session(const SessionConfig& config);

  /// Run the two party bodies to completion on separate threads.
  void run(const std::function<void(PartyCtx&)>& server_body,
           const std::function<void(PartyCtx&)>& client_body);

  PartyCtx& ctx(Party p) {
    return p == Party::Server ? server_ctx_ : client_ctx_;
  }

  const CommMeter& meter() const { return meter_; }
  const SessionConfig& config() const { return config_; }
  const CostModel& cost_model() const { return config_.cost; }

  // Channel internals used by PartyCtx.
  void channel_send(Party from, std::vector<uint8_t> payload, Phase phase,
                    const std::string& scope, const std::string& tag);
  std::vector<uint8_t> channel_recv(Party to);
  void meter_bits(const std::string& scope, const std::string& tag, Phase phase,
                  int64_t bits);

 private:
  enum class LastOp { None, Send, Recv };

  SessionConfig config_;
  CommMeter meter_;

  std::mutex chan_mu_;
  std::condition_variable chan_cv_;
  std::deque<std::vector<uint8_t>> queues_[2];  // indexed by receiving party
  bool done_[2] = {false, false};

  std::mutex meter_mu_;
  LastOp last_op_[2] = {LastOp::None, LastOp::None};

  PartyCtx server_ctx_;
  PartyCtx client_ctx_;
};

/// Test harness: run a server body and a client body against a fresh session
/// and hand back the session for meter inspection.
class TwoParty {
 public:
  explicit TwoParty(const SessionConfig& config) : session_(config) {}
  explicit TwoParty(uint64_t seed) : session_(SessionConfig{seed, {}, true}) {}

  void run(const std::function<void(PartyCtx&)>& server_body,
           const std::function<void(PartyCtx&)>& client_body) {
    session_.run(server_body, client_body);
  }

  Session& session() { return session_; }
  const CommMeter& meter() const { return session_.meter(); }

 private:
  Session session_;
};

// Payload packing helpers.
std::vector<uint8_t> pack_u64(const std::vector<uint64_t>& v);
std::vector<uint64_t> unpack_u64(const std::vector<uint8_t>& b);

}  // namespace otwin
