#include "otwin/ring.hpp"

namespace otwin {

namespace {

void check_same_meta(const ShareTensor& a, const ShareTensor& b) {
  if (a.meta.width != b.meta.width) {
    throw std::invalid_argument("share width mismatch");
  }
  if (a.shape != b.shape) {
    throw std::invalid_argument("share shape mismatch");
  }
}

}  // namespace

std::pair<ShareTensor, ShareTensor> share(const PlainTensor& x, uint64_t seed) {
  check_width(x.meta.width);
  Rng rng(seed);
  ShareTensor s{Party::Server, x.shape, {}, x.meta};
  ShareTensor c{Party::Client, x.shape, {}, x.meta};
  s.data.resize(x.data.size());
  c.data.resize(x.data.size());
  const int w = x.meta.width;
  for (size_t i = 0; i < x.data.size(); ++i) {
    s.data[i] = rng.next_ring(w);
    c.data[i] = reduce(x.data[i] - s.data[i], w);
  }
  return {std::move(s), std::move(c)};
}

PlainTensor reconstruct(const ShareTensor& a, const ShareTensor& b) {
  check_same_meta(a, b);
  if (a.party == b.party) {
    throw std::invalid_argument("reconstruct needs one share per party");
  }
  PlainTensor out{a.shape, {}, a.meta};
  out.data.resize(a.data.size());
  const int w = a.meta.width;
  for (size_t i = 0; i < a.data.size(); ++i) {
    out.data[i] = reduce(a.data[i] + b.data[i], w);
  }
  return out;
}

ShareTensor local_lincomb(const std::vector<const ShareTensor*>& shares,
                          const std::vector<int64_t>& coeffs) {
  if (shares.empty() || shares.size() != coeffs.size()) {
    throw std::invalid_argument("lincomb needs one coefficient per share");
  }
  const ShareTensor& first = *shares.front();
  for (const ShareTensor* s : shares) {
    if (s->party != first.party) {
      throw std::invalid_argument("lincomb shares must belong to one party");
    }
    if (s->meta.width != first.meta.width) {
      throw std::invalid_argument("lincomb shares must have one width");
    }
    if (s->numel() != first.numel()) {
      throw std::invalid_argument("lincomb shares must be shape-compatible");
    }
  }
  ShareTensor out{first.party, first.shape, {}, first.meta};
  out.data.assign(first.data.size(), 0);
  const int w = first.meta.width;
  // The result is only provably non-negative if every term is: all inputs
  // flagged nonneg, no negative coefficient, and the sum cannot wrap.
  bool nonneg = true;
  i128 bound = 0;
  for (size_t k = 0; k < shares.size(); ++k) {
    const uint64_t coeff = static_cast<uint64_t>(coeffs[k]);
    const auto& d = shares[k]->data;
    for (size_t i = 0; i < d.size(); ++i) {
      out.data[i] = reduce(out.data[i] + coeff * d[i], w);
    }
    if (!shares[k]->meta.nonneg || coeffs[k] < 0) nonneg = false;
    bound += i128(coeffs[k] < 0 ? -coeffs[k] : coeffs[k]) * i128(width_mask(w));
  }
  out.meta.nonneg = nonneg && bound <= i128(width_mask(w));
  return out;
}

}  // namespace otwin
