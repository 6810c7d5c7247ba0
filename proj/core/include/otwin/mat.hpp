#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace otwin {

/// Dense row-major integer matrix, sized for transform matrices and tiles.
struct IMat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<int64_t> v;

  IMat() = default;
  IMat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0) {}
  IMat(int64_t r, int64_t c, std::vector<int64_t> data)
      : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != static_cast<size_t>(r * c)) {
      throw std::invalid_argument("matrix data size mismatch");
    }
  }

  int64_t& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  int64_t at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

  IMat transposed() const {
    IMat t(cols, rows);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
    return t;
  }
};

struct DMat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  DMat() = default;
  DMat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0) {}
  DMat(int64_t r, int64_t c, std::vector<double> data)
      : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != static_cast<size_t>(r * c)) {
      throw std::invalid_argument("matrix data size mismatch");
    }
  }

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

  DMat transposed() const {
    DMat t(cols, rows);
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
    return t;
  }
};

inline DMat dmul(const DMat& a, const DMat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul shape mismatch");
  DMat out(a.rows, b.cols);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t k = 0; k < a.cols; ++k) {
      double av = a.at(i, k);
      if (av == 0) continue;
      for (int64_t j = 0; j < b.cols; ++j) out.at(i, j) += av * b.at(k, j);
    }
  return out;
}

inline DMat to_dmat(const IMat& m) {
  DMat out(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = static_cast<double>(m.v[i]);
  return out;
}

}  // namespace otwin
