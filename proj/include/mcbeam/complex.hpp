// Complex matrix algebra in two forms.
//
// CTensor is a (re, im) pair of real tensors: every complex operation lowers
// to real primitives, so complex quantities are differentiable end-to-end
// through the tape with no extra machinery.
//
// CMatrix is a plain std::complex matrix for forward-only paths (instance
// storage, baselines, evaluation loops) where taping would only cost time.
#pragma once

#include <complex>
#include <vector>

#include "mcbeam/tensor.hpp"

namespace mcbeam {

// ---------------------------------------------------------------------------
// Plain complex matrices
// ---------------------------------------------------------------------------

struct CMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::complex<double>> a;

  CMatrix() = default;
  CMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c) {}

  static CMatrix identity(int n) {
    CMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::complex<double>& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  const std::complex<double>& operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline CMatrix cmul(const CMatrix& x, const CMatrix& y) {
  if (x.cols != y.rows) throw ShapeError("cmul: inner dimensions disagree");
  CMatrix out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int k = 0; k < x.cols; ++k) {
      const std::complex<double> v = x(i, k);
      if (v == 0.0) continue;
      for (int j = 0; j < y.cols; ++j) out(i, j) += v * y(k, j);
    }
  }
  return out;
}

inline CMatrix chermitian(const CMatrix& x) {
  CMatrix out(x.cols, x.rows);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) out(j, i) = std::conj(x(i, j));
  }
  return out;
}

inline CMatrix cadd(const CMatrix& x, const CMatrix& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw ShapeError("cadd: shape mismatch");
  CMatrix out = x;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += y.a[i];
  return out;
}

inline CMatrix csub(const CMatrix& x, const CMatrix& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw ShapeError("csub: shape mismatch");
  CMatrix out = x;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] -= y.a[i];
  return out;
}

inline CMatrix cscale(const CMatrix& x, std::complex<double> s) {
  CMatrix out = x;
  for (auto& v : out.a) v *= s;
  return out;
}

inline double fro_norm2(const CMatrix& x) {
  double s = 0.0;
  for (const auto& v : x.a) s += std::norm(v);
  return s;
}

inline CMatrix col(const CMatrix& x, int j) {
  CMatrix out(x.rows, 1);
  for (int i = 0; i < x.rows; ++i) out(i, 0) = x(i, j);
  return out;
}

// X solving A X = B by complex partial-pivot LU.
inline CMatrix csolve(const CMatrix& A, const CMatrix& B) {
  if (A.rows != A.cols) throw ShapeError("csolve: A must be square");
  if (A.rows != B.rows) throw ShapeError("csolve: row counts disagree");
  const int n = A.rows;
  CMatrix f = A;
  std::vector<int> piv(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::abs(f(k, k));
    for (int i = k + 1; i < n; ++i) {
      if (std::abs(f(i, k)) > best) {
        best = std::abs(f(i, k));
        p = i;
      }
    }
    piv[static_cast<std::size_t>(k)] = p;
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(f(k, j), f(p, j));
    }
    if (f(k, k) == 0.0) throw NumericError("csolve: singular system");
    for (int i = k + 1; i < n; ++i) {
      const std::complex<double> m = f(i, k) / f(k, k);
      f(i, k) = m;
      if (m == 0.0) continue;
      for (int j = k + 1; j < n; ++j) f(i, j) -= m * f(k, j);
    }
  }
  CMatrix x = B;
  for (int j = 0; j < x.cols; ++j) {
    for (int k = 0; k < n; ++k) {
      if (piv[static_cast<std::size_t>(k)] != k) std::swap(x(k, j), x(piv[static_cast<std::size_t>(k)], j));
    }
    for (int i = 1; i < n; ++i) {
      std::complex<double> s = x(i, j);
      for (int t = 0; t < i; ++t) s -= f(i, t) * x(t, j);
      x(i, j) = s;
    }
    for (int i = n - 1; i >= 0; --i) {
      std::complex<double> s = x(i, j);
      for (int t = i + 1; t < n; ++t) s -= f(i, t) * x(t, j);
      x(i, j) = s / f(i, i);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Taped complex tensors
// ---------------------------------------------------------------------------

struct CTensor {
  Tensor re;
  Tensor im;

  int rows() const { return re.rows(); }
  int cols() const { return re.cols(); }

  static CTensor constant(const CMatrix& m) {
    std::vector<double> r(static_cast<std::size_t>(m.rows) * m.cols);
    std::vector<double> i(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) {
      r[k] = m.a[k].real();
      i[k] = m.a[k].imag();
    }
    return {Tensor::constant({m.rows, m.cols}, std::move(r)), Tensor::constant({m.rows, m.cols}, std::move(i))};
  }

  static CTensor identity(int n) { return constant(CMatrix::identity(n)); }

  CMatrix values() const {
    CMatrix m(rows(), cols());
    for (std::size_t k = 0; k < m.a.size(); ++k) m.a[k] = {re.vals()[k], im.vals()[k]};
    return m;
  }
};

namespace detail {

inline void require_cpair(const CTensor& x, const char* op) {
  if (x.re.shape != x.im.shape) throw ShapeError(std::string(op) + ": re/im shapes disagree");
}

}  // namespace detail

inline CTensor cadd(const CTensor& x, const CTensor& y) {
  return {add(x.re, y.re), add(x.im, y.im)};
}

inline CTensor csub(const CTensor& x, const CTensor& y) {
  return {sub(x.re, y.re), sub(x.im, y.im)};
}

inline CTensor cmatmul(const CTensor& x, const CTensor& y) {
  detail::require_cpair(x, "cmatmul");
  detail::require_cpair(y, "cmatmul");
  return {sub(matmul(x.re, y.re), matmul(x.im, y.im)),
          add(matmul(x.re, y.im), matmul(x.im, y.re))};
}

inline CTensor chermitian(const CTensor& x) {
  detail::require_cpair(x, "chermitian");
  return {transpose(x.re), neg(transpose(x.im))};
}

// x * s for a real 1x1 tensor s
inline CTensor cscale_real(const CTensor& x, const Tensor& s) {
  return {scale(x.re, s), scale(x.im, s)};
}

// x * (pr + i pi) for real 1x1 tensors pr, pi
inline CTensor cscale_complex(const CTensor& x, const Tensor& pr, const Tensor& pi) {
  return {sub(scale(x.re, pr), scale(x.im, pi)),
          add(scale(x.re, pi), scale(x.im, pr))};
}

inline CTensor csmul(const CTensor& x, double s) { return {smul(x.re, s), smul(x.im, s)}; }

inline CTensor cconcat_cols(const std::vector<CTensor>& parts) {
  std::vector<Tensor> rs, is;
  rs.reserve(parts.size());
  is.reserve(parts.size());
  for (const auto& p : parts) {
    rs.push_back(p.re);
    is.push_back(p.im);
  }
  return {concat_cols(rs), concat_cols(is)};
}

inline CTensor cslice_cols(const CTensor& x, int start, int len) {
  return {slice_cols(x.re, start, len), slice_cols(x.im, start, len)};
}

// a^H b for column vectors; returns the (re, im) pair as 1x1 tensors
inline CTensor cinner(const CTensor& a, const CTensor& b) {
  if (a.cols() != 1 || b.cols() != 1 || a.rows() != b.rows()) {
    throw ShapeError("cinner: vectors of equal length required");
  }
  Tensor art = transpose(a.re), ait = transpose(a.im);
  return {add(matmul(art, b.re), matmul(ait, b.im)),
          sub(matmul(art, b.im), matmul(ait, b.re))};
}

// |a^H b|^2 as a real 1x1 tensor
inline Tensor cabs2(const CTensor& a, const CTensor& b) {
  CTensor p = cinner(a, b);
  return add(square(p.re), square(p.im));
}

// Frobenius norm squared
inline Tensor cfro_norm2(const CTensor& x) {
  return add(sum_all(square(x.re)), sum_all(square(x.im)));
}

// X solving A X = B, lowered to the equivalent 2N x 2N real block system
// [[Ar, -Ai], [Ai, Ar]] [Xr; Xi] = [Br; Bi].
inline CTensor csolve(const CTensor& A, const CTensor& B) {
  detail::require_cpair(A, "csolve");
  detail::require_cpair(B, "csolve");
  if (A.rows() != A.cols()) throw ShapeError("csolve: A must be square");
  if (A.rows() != B.rows()) throw ShapeError("csolve: row counts disagree");
  const int n = A.rows();
  Tensor top = concat_cols({A.re, neg(A.im)});
  Tensor bot = concat_cols({A.im, A.re});
  Tensor block = concat_rows(top, bot);
  Tensor rhs = concat_rows(B.re, B.im);
  Tensor x = solve(block, rhs);
  return {slice_rows(x, 0, n), slice_rows(x, n, n)};
}

}  // namespace mcbeam
