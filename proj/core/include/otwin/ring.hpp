#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace otwin {

using i128 = __int128;

enum class Party : int { Server = 0, Client = 1 };

inline Party peer_of(Party p) {
  return p == Party::Server ? Party::Client : Party::Server;
}

inline const char* party_name(Party p) {
  return p == Party::Server ? "server" : "client";
}

/// Bit-width metadata of a tensor living in Z_2^width.
///
/// `scale_exp` is the power-of-two scale exponent: a stored integer q
/// represents the real value q / 2^scale_exp. `nonneg` marks tensors whose
/// reconstructed plaintext is known to be non-negative (post-ReLU); the
/// cheaper MSB-known conversion protocols are only sound under this flag.
struct BitWidthMeta {
  int width = 32;
  int scale_exp = 0;
  bool nonneg = false;

  friend bool operator==(const BitWidthMeta&, const BitWidthMeta&) = default;
};

inline void check_width(int width) {
  if (width < 1 || width > 64) {
    throw std::invalid_argument("ring width must be in [1,64], got " +
                                std::to_string(width));
  }
}

inline uint64_t width_mask(int width) {
  check_width(width);
  return width == 64 ? ~uint64_t{0} : ((uint64_t{1} << width) - 1);
}

inline uint64_t reduce(uint64_t v, int width) { return v & width_mask(width); }

/// Two's-complement interpretation of a ring element. Values flagged nonneg
/// are read as unsigned regardless of the top bit.
inline i128 signed_value(uint64_t x, const BitWidthMeta& meta) {
  const uint64_t m = width_mask(meta.width);
  x &= m;
  if (meta.nonneg || meta.width == 0) return i128(x);
  const uint64_t half = uint64_t{1} << (meta.width - 1);
  if (meta.width < 64 && x < half) return i128(x);
  if (meta.width == 64 && x < (uint64_t{1} << 63)) return i128(x);
  return i128(x) - (i128(1) << meta.width);
}

/// Inverse of signed_value: reduce an arbitrary integer into Z_2^width.
inline uint64_t from_signed(i128 v, int width) {
  return reduce(static_cast<uint64_t>(static_cast<unsigned __int128>(v)), width);
}

struct PlainTensor {
  std::vector<int64_t> shape;
  std::vector<uint64_t> data;  // values reduced mod 2^meta.width
  BitWidthMeta meta;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

struct ShareTensor {
  Party party = Party::Server;
  std::vector<int64_t> shape;
  std::vector<uint64_t> data;
  BitWidthMeta meta;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

/// Deterministic PRNG used everywhere randomness is needed. splitmix64 core;
/// normal variates via Box-Muller so sequences are pinned independent of the
/// standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t next_ring(int width) { return reduce(next_u64(), width); }

  /// Uniform in [0, bound)
  uint64_t next_below(uint64_t bound) { return bound ? next_u64() % bound : 0; }

  double next_unit() {  // (0,1]
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Additively share a plaintext tensor: the server share is uniform under
/// `seed`, the client share is the mod-2^width complement.
std::pair<ShareTensor, ShareTensor> share(const PlainTensor& x, uint64_t seed);

PlainTensor reconstruct(const ShareTensor& a, const ShareTensor& b);

/// Per-party linear combination: out = sum_k coeffs[k] * shares[k] mod 2^w.
/// Coefficients are plaintext integers (known to both parties).
ShareTensor local_lincomb(const std::vector<const ShareTensor*>& shares,
                          const std::vector<int64_t>& coeffs);

}  // namespace otwin
