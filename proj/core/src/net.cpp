#include "otwin/net.hpp"

#include <thread>

namespace otwin {

LatencyEstimate estimate_latency(const CommMeter& meter,
                                 const NetworkProfile& profile) {
  profile.validate();
  LatencyEstimate est;
  auto phase_time = [&](Phase p) {
    double bytes = static_cast<double>(meter.phase_bits(p)) / 8.0;
    return bytes / profile.bandwidth_bytes_per_s +
           static_cast<double>(meter.phase_rounds(p)) * profile.rtt_s;
  };
  est.offline_s = phase_time(Phase::Offline);
  est.online_s = phase_time(Phase::Online);
  est.total_s = est.offline_s + est.online_s;
  return est;
}

std::vector<uint8_t> pack_u64(const std::vector<uint64_t>& v) {
  std::vector<uint8_t> out(v.size() * 8);
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<uint64_t> unpack_u64(const std::vector<uint8_t>& b) {
  if (b.size() % 8 != 0) throw std::invalid_argument("payload not u64-aligned");
  std::vector<uint64_t> out(b.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), b.data(), b.size());
  return out;
}

Session::Session(const SessionConfig& config)
    : config_(config),
      server_ctx_(*this, Party::Server, config.seed * 0x9e3779b97f4a7c15ULL + 1),
      client_ctx_(*this, Party::Client, config.seed * 0xc2b2ae3d27d4eb4fULL + 2) {
  config_.cost.validate();
}

void Session::run(const std::function<void(PartyCtx&)>& server_body,
                  const std::function<void(PartyCtx&)>& client_body) {
  done_[0] = done_[1] = false;
  std::exception_ptr server_err, client_err;
  auto finish = [this](Party p) {
    {
      std::lock_guard<std::mutex> lk(chan_mu_);
      done_[static_cast<int>(p)] = true;
    }
    chan_cv_.notify_all();
  };
  std::thread server_thread([&] {
    try {
      server_body(server_ctx_);
    } catch (...) {
      server_err = std::current_exception();
    }
    finish(Party::Server);
  });
  std::thread client_thread([&] {
    try {
      client_body(client_ctx_);
    } catch (...) {
      client_err = std::current_exception();
    }
    finish(Party::Client);
  });
  server_thread.join();
  client_thread.join();
  if (server_err) std::rethrow_exception(server_err);
  if (client_err) std::rethrow_exception(client_err);
}

void Session::channel_send(Party from, std::vector<uint8_t> payload, Phase phase,
                           const std::string& scope, const std::string& tag) {
  {
    std::lock_guard<std::mutex> lk(meter_mu_);
    // A send that does not continue a send burst from the same party starts a
    // new communication round (direction alternation rule).
    if (last_op_[static_cast<int>(from)] != LastOp::Send) {
      if (config_.metering) meter_.add_round(scope, tag, phase);
    }
    last_op_[static_cast<int>(from)] = LastOp::Send;
    last_op_[static_cast<int>(peer_of(from))] = LastOp::Recv;
  }
  {
    std::lock_guard<std::mutex> lk(chan_mu_);
    queues_[static_cast<int>(peer_of(from))].push_back(std::move(payload));
  }
  chan_cv_.notify_all();
}

std::vector<uint8_t> Session::channel_recv(Party to) {
  std::unique_lock<std::mutex> lk(chan_mu_);
  auto& q = queues_[static_cast<int>(to)];
  const int peer = static_cast<int>(peer_of(to));
  chan_cv_.wait(lk, [&] { return !q.empty() || done_[peer]; });
  if (q.empty()) {
    throw std::runtime_error("channel closed: peer exited with a pending recv");
  }
  std::vector<uint8_t> payload = std::move(q.front());
  q.pop_front();
  return payload;
}

void Session::meter_bits(const std::string& scope, const std::string& tag,
                         Phase phase, int64_t bits) {
  if (bits < 0) throw std::invalid_argument("cannot charge negative bits");
  if (!config_.metering) return;
  std::lock_guard<std::mutex> lk(meter_mu_);
  meter_.add_bits(scope, tag, phase, bits);
}

void PartyCtx::send(const std::vector<uint64_t>& payload, Phase phase) {
  session_.channel_send(party_, pack_u64(payload), phase, scope_, tag_);
}

std::vector<uint64_t> PartyCtx::recv() {
  return unpack_u64(session_.channel_recv(party_));
}

void PartyCtx::send_bytes(const std::vector<uint8_t>& payload, Phase phase) {
  session_.channel_send(party_, payload, phase, scope_, tag_);
}

std::vector<uint8_t> PartyCtx::recv_bytes() {
  return session_.channel_recv(party_);
}

void PartyCtx::exchange(const std::vector<uint8_t>& payload,
                        const std::string& tag, Phase phase) {
  session_.meter_bits(scope_, tag, phase, 8 * static_cast<int64_t>(payload.size()));
  session_.channel_send(party_, payload, phase, scope_, tag);
}

void PartyCtx::charge(const std::string& tag, Phase phase, int64_t bits) {
  session_.meter_bits(scope_, tag, phase, bits);
}

const CostModel& PartyCtx::cost_model() const { return session_.cost_model(); }

}  // namespace otwin
