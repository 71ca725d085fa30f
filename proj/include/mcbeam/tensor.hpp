// Reverse-mode automatic differentiation over dense real matrices.
//
// A Tape records every primitive applied to tensors that live on it; backward
// replays the nodes in reverse insertion order exactly once. Tensors that are
// not attached to a tape are constants: the same primitives evaluate eagerly
// and record nothing, so forward-only code pays no taping cost.
//
// All storage is 64-bit and every primitive checks its output for NaN/Inf --
// a non-finite value anywhere is treated as an error state, not a warning.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mcbeam {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shape {
  int rows = 0;
  int cols = 0;
  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rows == b.rows && a.cols == b.cols;
  }
  friend bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }
};

class Tape;

struct Tensor {
  Shape shape{0, 0};
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;

  int rows() const { return shape.rows; }
  int cols() const { return shape.cols; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(shape.rows) * shape.cols;
  }
  bool on_tape() const { return tape != nullptr && node >= 0; }
  bool is_scalar() const { return shape.rows == 1 && shape.cols == 1; }

  // Ref-qualified so `temp().vals()` cannot dangle in a range-for.
  const std::vector<double>& vals() const& { return *data; }
  const std::vector<double>& vals() const&& = delete;
  double at(int i, int j) const { return (*data)[static_cast<std::size_t>(i) * shape.cols + j]; }
  double scalar() const {
    if (!is_scalar()) throw ShapeError("Tensor::scalar: tensor is not 1x1");
    return (*data)[0];
  }

  static Tensor constant(Shape s, std::vector<double> values);
  static Tensor zeros(Shape s) { return constant(s, std::vector<double>(static_cast<std::size_t>(s.rows) * s.cols, 0.0)); }
  static Tensor full(Shape s, double v) { return constant(s, std::vector<double>(static_cast<std::size_t>(s.rows) * s.cols, v)); }
  static Tensor identity(int n) {
    std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
    return constant({n, n}, std::move(v));
  }
};

namespace detail {

inline void ensure_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

}  // namespace detail

inline Tensor Tensor::constant(Shape s, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != static_cast<std::int64_t>(s.rows) * s.cols) {
    throw ShapeError("Tensor::constant: data length does not match shape");
  }
  detail::ensure_finite(values, "constant");
  Tensor t;
  t.shape = s;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

// Gradient buffers keyed by tape node. Untouched nodes read back as zero.
class Gradients {
 public:
  explicit Gradients(std::size_t node_count) : bufs_(node_count) {}

  std::vector<double>& acc(int node, std::int64_t size) {
    auto& b = bufs_[static_cast<std::size_t>(node)];
    if (b.empty()) b.assign(static_cast<std::size_t>(size), 0.0);
    return b;
  }

  bool touched(int node) const {
    return node >= 0 && !bufs_[static_cast<std::size_t>(node)].empty();
  }

  // Gradient of the backward root w.r.t. tensor t (zeros if the root does not
  // depend on it). Returned as a constant tensor.
  Tensor of(const Tensor& t) const {
    if (!t.on_tape()) throw std::invalid_argument("Gradients::of: tensor is not on a tape");
    const auto& b = bufs_[static_cast<std::size_t>(t.node)];
    if (b.empty()) return Tensor::zeros(t.shape);
    return Tensor::constant(t.shape, b);
  }

 private:
  friend class Tape;
  std::vector<std::vector<double>> bufs_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>&, Gradients&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Shape s, std::shared_ptr<std::vector<double>> values) {
    if (!values || static_cast<std::int64_t>(values->size()) != static_cast<std::int64_t>(s.rows) * s.cols) {
      throw ShapeError("Tape::leaf: data length does not match shape");
    }
    detail::ensure_finite(*values, "leaf");
    Tensor t;
    t.shape = s;
    t.data = std::move(values);
    t.tape = this;
    t.node = emplace(t.size(), BackwardFn{});
    return t;
  }

  Tensor leaf(Shape s, std::vector<double> values) {
    return leaf(s, std::make_shared<std::vector<double>>(std::move(values)));
  }

  Tensor record(Shape s, std::vector<double> values, BackwardFn back) {
    detail::ensure_finite(values, "primitive");
    Tensor t;
    t.shape = s;
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.tape = this;
    t.node = emplace(t.size(), std::move(back));
    return t;
  }

  // Reverse sweep from a scalar root. Every node is visited at most once, in
  // reverse insertion order.
  Gradients backward(const Tensor& root) const {
    if (!root.is_scalar()) throw std::invalid_argument("backward: root must be a 1x1 tensor");
    if (root.tape != this || root.node < 0) {
      throw std::invalid_argument("backward: root does not live on this tape");
    }
    Gradients g(nodes_.size());
    g.acc(root.node, 1)[0] = 1.0;
    for (int i = root.node; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.back || !g.touched(i)) continue;
      n.back(g.bufs_[static_cast<std::size_t>(i)], g);
    }
    return g;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BackwardFn back;  // empty for leaves
    std::int64_t size;
  };

  int emplace(std::int64_t size, BackwardFn back) {
    nodes_.push_back(Node{std::move(back), size});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape* result_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) throw ShapeError(std::string(op) + ": shape mismatch");
}

// C (r x c) += or = A (r x k) * B (k x c), row-major.
inline void gemm_nn(const double* a, const double* b, double* c, int r, int k, int cc) {
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * cc;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * cc;
      for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (r x c) += A (k x r)^T * B (k x c)
inline void gemm_tn(const double* a, const double* b, double* c, int k, int r, int cc) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * r;
    const double* brow = b + static_cast<std::size_t>(p) * cc;
    for (int i = 0; i < r; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(i) * cc;
      for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (r x c) += A (r x k) * B (c x k)^T
inline void gemm_nt(const double* a, const double* b, double* c, int r, int k, int cc) {
  for (int i = 0; i < r; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * cc;
    for (int j = 0; j < cc; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// Partial-pivot LU of a square matrix, kept around for the solve backward
// rule. cond is a cheap diagonal-ratio estimate, enough to reject systems the
// 64-bit solve cannot answer meaningfully.
struct Lu {
  int n = 0;
  std::vector<double> f;     // packed L\U factors
  std::vector<int> pivots;   // row swapped with k at step k
};

inline Lu lu_factor(const double* a, int n) {
  Lu lu;
  lu.n = n;
  lu.f.assign(a, a + static_cast<std::size_t>(n) * n);
  lu.pivots.resize(static_cast<std::size_t>(n));
  auto& f = lu.f;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::fabs(f[static_cast<std::size_t>(k) * n + k]);
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(f[static_cast<std::size_t>(i) * n + k]);
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    lu.pivots[static_cast<std::size_t>(k)] = piv;
    if (piv != k) {
      for (int j = 0; j < n; ++j) {
        std::swap(f[static_cast<std::size_t>(k) * n + j], f[static_cast<std::size_t>(piv) * n + j]);
      }
    }
    const double d = f[static_cast<std::size_t>(k) * n + k];
    if (d == 0.0) throw NumericError("solve: singular system");
    for (int i = k + 1; i < n; ++i) {
      double m = f[static_cast<std::size_t>(i) * n + k] / d;
      f[static_cast<std::size_t>(i) * n + k] = m;
      if (m == 0.0) continue;
      for (int j = k + 1; j < n; ++j) {
        f[static_cast<std::size_t>(i) * n + j] -= m * f[static_cast<std::size_t>(k) * n + j];
      }
    }
  }
  double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    double v = std::fabs(f[static_cast<std::size_t>(i) * n + i]);
    dmax = std::max(dmax, v);
    dmin = std::min(dmin, v);
  }
  if (!(dmin > 0.0) || dmax / dmin > 1e12) {
    throw NumericError("solve: system condition estimate above 1e12");
  }
  return lu;
}

// x := A^{-1} x for one vector
inline void lu_solve_vec(const Lu& lu, double* x) {
  const int n = lu.n;
  const auto& f = lu.f;
  for (int k = 0; k < n; ++k) {
    if (lu.pivots[static_cast<std::size_t>(k)] != k) std::swap(x[k], x[lu.pivots[static_cast<std::size_t>(k)]]);
  }
  for (int i = 1; i < n; ++i) {
    double s = x[i];
    for (int j = 0; j < i; ++j) s -= f[static_cast<std::size_t>(i) * n + j] * x[j];
    x[i] = s;
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = x[i];
    for (int j = i + 1; j < n; ++j) s -= f[static_cast<std::size_t>(i) * n + j] * x[j];
    x[i] = s / f[static_cast<std::size_t>(i) * n + i];
  }
}

// x := A^{-T} x for one vector
inline void lu_solve_vec_t(const Lu& lu, double* x) {
  const int n = lu.n;
  const auto& f = lu.f;
  for (int i = 0; i < n; ++i) {  // U^T z = x (forward)
    double s = x[i];
    for (int j = 0; j < i; ++j) s -= f[static_cast<std::size_t>(j) * n + i] * x[j];
    x[i] = s / f[static_cast<std::size_t>(i) * n + i];
  }
  for (int i = n - 2; i >= 0; --i) {  // L^T w = z (backward, unit diagonal)
    double s = x[i];
    for (int j = i + 1; j < n; ++j) s -= f[static_cast<std::size_t>(j) * n + i] * x[j];
    x[i] = s;
  }
  for (int k = n - 1; k >= 0; --k) {
    if (lu.pivots[static_cast<std::size_t>(k)] != k) std::swap(x[k], x[lu.pivots[static_cast<std::size_t>(k)]]);
  }
}

// X (n x m, row-major) := A^{-1} X, column by column
inline void lu_solve_mat(const Lu& lu, double* xs, int m, bool transposed) {
  const int n = lu.n;
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = xs[static_cast<std::size_t>(i) * m + j];
    if (transposed) {
      lu_solve_vec_t(lu, col.data());
    } else {
      lu_solve_vec(lu, col.data());
    }
    for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i) * m + j] = col[static_cast<std::size_t>(i)];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tape* t = detail::result_tape(a, b, "add");
  std::vector<double> out(a.vals());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.vals()[i];
  if (!t) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node, pb = b.node;
  const std::int64_t n = a.size();
  return t->record(a.shape, std::move(out), [pa, pb, n](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {
      auto& ga = gr.acc(pa, n);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb >= 0) {
      auto& gb = gr.acc(pb, n);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tape* t = detail::result_tape(a, b, "sub");
  std::vector<double> out(a.vals());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.vals()[i];
  if (!t) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node, pb = b.node;
  const std::int64_t n = a.size();
  return t->record(a.shape, std::move(out), [pa, pb, n](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {
      auto& ga = gr.acc(pa, n);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb >= 0) {
      auto& gb = gr.acc(pb, n);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tape* t = detail::result_tape(a, b, "mul");
  std::vector<double> out(a.vals());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.vals()[i];
  if (!t) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node, pb = b.node;
  const std::int64_t n = a.size();
  auto da = a.data, db = b.data;
  return t->record(a.shape, std::move(out), [pa, pb, n, da, db](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {
      auto& ga = gr.acc(pa, n);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*db)[i];
    }
    if (pb >= 0) {
      auto& gb = gr.acc(pb, n);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*da)[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "div");
  Tape* t = detail::result_tape(a, b, "div");
  std::vector<double> out(a.vals());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.vals()[i];
  if (!t) {
    return Tensor::constant(a.shape, std::move(out));
  }
  const int pa = a.node, pb = b.node;
  const std::int64_t n = a.size();
  auto da = a.data, db = b.data;
  return t->record(a.shape, std::move(out), [pa, pb, n, da, db](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {
      auto& ga = gr.acc(pa, n);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (*db)[i];
    }
    if (pb >= 0) {
      auto& gb = gr.acc(pb, n);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] -= g[i] * (*da)[i] / ((*db)[i] * (*db)[i]);
      }
    }
  });
}

// scale * a + shift with plain-double coefficients
inline Tensor affine(const Tensor& a, double scale, double shift) {
  std::vector<double> out(a.vals());
  for (double& x : out) x = scale * x + shift;
  if (!a.tape) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node;
  const std::int64_t n = a.size();
  return a.tape->record(a.shape, std::move(out), [pa, n, scale](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

inline Tensor smul(const Tensor& a, double s) { return affine(a, s, 0.0); }
inline Tensor neg(const Tensor& a) { return affine(a, -1.0, 0.0); }

// a * s where s is a 1x1 tensor (gradient flows into both)
inline Tensor scale(const Tensor& a, const Tensor& s) {
  if (!s.is_scalar()) throw ShapeError("scale: scale factor must be 1x1");
  Tape* t = detail::result_tape(a, s, "scale");
  const double sv = s.vals()[0];
  std::vector<double> out(a.vals());
  for (double& x : out) x *= sv;
  if (!t) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node, ps = s.node;
  const std::int64_t n = a.size();
  auto da = a.data;
  return t->record(a.shape, std::move(out), [pa, ps, n, sv, da](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {
      auto& ga = gr.acc(pa, n);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += sv * g[i];
    }
    if (ps >= 0) {
      auto& gs = gr.acc(ps, 1);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*da)[i];
      gs[0] += acc;
    }
  });
}

// m (r x c) + v (r x 1) broadcast across columns
inline Tensor add_bias(const Tensor& m, const Tensor& v) {
  if (v.cols() != 1 || v.rows() != m.rows()) {
    throw ShapeError("add_bias: bias must be a column vector matching rows");
  }
  Tape* t = detail::result_tape(m, v, "add_bias");
  const int r = m.rows(), c = m.cols();
  std::vector<double> out(m.vals());
  for (int i = 0; i < r; ++i) {
    const double b = v.vals()[static_cast<std::size_t>(i)];
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += b;
  }
  if (!t) return Tensor::constant(m.shape, std::move(out));
  const int pm = m.node, pv = v.node;
  return t->record(m.shape, std::move(out), [pm, pv, r, c](const std::vector<double>& g, Gradients& gr) {
    if (pm >= 0) {
      auto& gm = gr.acc(pm, static_cast<std::int64_t>(r) * c);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (pv >= 0) {
      auto& gv = gr.acc(pv, r);
      for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += g[static_cast<std::size_t>(i) * c + j];
        gv[static_cast<std::size_t>(i)] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.vals());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  if (!a.tape) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node;
  const std::int64_t n = a.size();
  auto da = a.data;
  // subgradient at 0 is 0
  return a.tape->record(a.shape, std::move(out), [pa, n, da](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*da)[i] > 0.0) ga[i] += g[i];
    }
  });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.vals());
  for (double& x : out) x = std::exp(x);
  if (!a.tape) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node;
  const std::int64_t n = a.size();
  auto y = std::make_shared<std::vector<double>>(out);
  return a.tape->record(a.shape, std::move(out), [pa, n, y](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*y)[i];
  });
}

// Domain is x >= 0. The derivative at exactly 0 is taken as 0, mirroring the
// ReLU convention, so sqrt(relu(x)) stays differentiable at the boundary.
inline Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.vals());
  for (double& x : out) {
    if (x < 0.0) throw NumericError("sqrt: negative input");
    x = std::sqrt(x);
  }
  if (!a.tape) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node;
  const std::int64_t n = a.size();
  auto y = std::make_shared<std::vector<double>>(out);
  return a.tape->record(a.shape, std::move(out), [pa, n, y](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*y)[i] > 0.0) ga[i] += g[i] / (2.0 * (*y)[i]);
    }
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.vals());
  for (double& x : out) x *= x;
  if (!a.tape) return Tensor::constant(a.shape, std::move(out));
  const int pa = a.node;
  const std::int64_t n = a.size();
  auto da = a.data;
  return a.tape->record(a.shape, std::move(out), [pa, n, da](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * (*da)[i] * g[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions disagree");
  Tape* t = detail::result_tape(a, b, "matmul");
  const int r = a.rows(), k = a.cols(), c = b.cols();
  std::vector<double> out(static_cast<std::size_t>(r) * c, 0.0);
  detail::gemm_nn(a.vals().data(), b.vals().data(), out.data(), r, k, c);
  if (!t) return Tensor::constant({r, c}, std::move(out));
  const int pa = a.node, pb = b.node;
  auto da = a.data, db = b.data;
  return t->record({r, c}, std::move(out), [pa, pb, r, k, c, da, db](const std::vector<double>& g, Gradients& gr) {
    if (pa >= 0) {  // gA += g * B^T
      auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * k);
      detail::gemm_nt(g.data(), db->data(), ga.data(), r, c, k);
    }
    if (pb >= 0) {  // gB += A^T * g
      auto& gb = gr.acc(pb, static_cast<std::int64_t>(k) * c);
      detail::gemm_tn(da->data(), g.data(), gb.data(), r, k, c);
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.vals()[static_cast<std::size_t>(i) * c + j];
  }
  if (!a.tape) return Tensor::constant({c, r}, std::move(out));
  const int pa = a.node;
  return a.tape->record({c, r}, std::move(out), [pa, r, c](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < r; ++j) ga[static_cast<std::size_t>(j) * c + i] += g[static_cast<std::size_t>(i) * r + j];
    }
  });
}

// X solving A X = B. A must be square and decently conditioned; the backward
// rule reuses the forward LU factors (adjoint solves, no explicit inverse).
inline Tensor solve(const Tensor& a, const Tensor& b) {
  if (a.rows() != a.cols()) throw ShapeError("solve: A must be square");
  if (a.rows() != b.rows()) throw ShapeError("solve: row counts disagree");
  Tape* t = detail::result_tape(a, b, "solve");
  const int n = a.rows(), m = b.cols();
  auto lu = std::make_shared<detail::Lu>(detail::lu_factor(a.vals().data(), n));
  std::vector<double> x(b.vals());
  detail::lu_solve_mat(*lu, x.data(), m, false);
  detail::ensure_finite(x, "solve");
  if (!t) return Tensor::constant({n, m}, std::move(x));
  const int pa = a.node, pb = b.node;
  auto xs = std::make_shared<std::vector<double>>(x);
  return t->record({n, m}, std::move(x), [pa, pb, n, m, lu, xs](const std::vector<double>& g, Gradients& gr) {
    std::vector<double> gb(g);
    detail::lu_solve_mat(*lu, gb.data(), m, true);  // gB = A^{-T} g
    if (pb >= 0) {
      auto& acc = gr.acc(pb, static_cast<std::int64_t>(n) * m);
      for (std::size_t i = 0; i < gb.size(); ++i) acc[i] += gb[i];
    }
    if (pa >= 0) {  // gA -= gB * X^T
      auto& acc = gr.acc(pa, static_cast<std::int64_t>(n) * n);
      std::vector<double> tmp(static_cast<std::size_t>(n) * n, 0.0);
      detail::gemm_nt(gb.data(), xs->data(), tmp.data(), n, m, n);
      for (std::size_t i = 0; i < tmp.size(); ++i) acc[i] -= tmp[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Structure: concat / slice
// ---------------------------------------------------------------------------

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int r = parts[0].rows();
  int c = 0;
  Tape* t = nullptr;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row counts disagree");
    c += p.cols();
    if (p.tape) {
      if (t && t != p.tape) throw std::invalid_argument("concat_cols: operands live on different tapes");
      t = p.tape;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.cols();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < pc; ++j) {
        out[static_cast<std::size_t>(i) * c + off + j] = p.vals()[static_cast<std::size_t>(i) * pc + j];
      }
    }
    off += pc;
  }
  if (!t) return Tensor::constant({r, c}, std::move(out));
  struct Part {
    int node;
    int cols;
  };
  std::vector<Part> meta;
  meta.reserve(parts.size());
  for (const auto& p : parts) meta.push_back({p.node, p.cols()});
  return t->record({r, c}, std::move(out), [meta, r, c](const std::vector<double>& g, Gradients& gr) {
    int off = 0;
    for (const auto& p : meta) {
      if (p.node >= 0) {
        auto& gp = gr.acc(p.node, static_cast<std::int64_t>(r) * p.cols);
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < p.cols; ++j) {
            gp[static_cast<std::size_t>(i) * p.cols + j] += g[static_cast<std::size_t>(i) * c + off + j];
          }
        }
      }
      off += p.cols;
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = parts[0].cols();
  int r = 0;
  Tape* t = nullptr;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column counts disagree");
    r += p.rows();
    if (p.tape) {
      if (t && t != p.tape) throw std::invalid_argument("concat_rows: operands live on different tapes");
      t = p.tape;
    }
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(r) * c);
  for (const auto& p : parts) out.insert(out.end(), p.vals().begin(), p.vals().end());
  if (!t) return Tensor::constant({r, c}, std::move(out));
  struct Part {
    int node;
    int rows;
  };
  std::vector<Part> meta;
  meta.reserve(parts.size());
  for (const auto& p : parts) meta.push_back({p.node, p.rows()});
  return t->record({r, c}, std::move(out), [meta, c](const std::vector<double>& g, Gradients& gr) {
    std::size_t off = 0;
    for (const auto& p : meta) {
      const std::size_t len = static_cast<std::size_t>(p.rows) * c;
      if (p.node >= 0) {
        auto& gp = gr.acc(p.node, static_cast<std::int64_t>(len));
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) { return concat_rows(std::vector<Tensor>{a, b}); }

inline Tensor slice_cols(const Tensor& a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(r) * len);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < len; ++j) out[static_cast<std::size_t>(i) * len + j] = a.vals()[static_cast<std::size_t>(i) * c + start + j];
  }
  if (!a.tape) return Tensor::constant({r, len}, std::move(out));
  const int pa = a.node;
  return a.tape->record({r, len}, std::move(out), [pa, r, c, start, len](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < len; ++j) ga[static_cast<std::size_t>(i) * c + start + j] += g[static_cast<std::size_t>(i) * len + j];
    }
  });
}

inline Tensor slice_rows(const Tensor& a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const int c = a.cols(), r = a.rows();
  std::vector<double> out(a.vals().begin() + static_cast<std::ptrdiff_t>(start) * c,
                          a.vals().begin() + static_cast<std::ptrdiff_t>(start + len) * c);
  if (!a.tape) return Tensor::constant({len, c}, std::move(out));
  const int pa = a.node;
  return a.tape->record({len, c}, std::move(out), [pa, r, c, start, len](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(start) * c + i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.vals()) s += x;
  if (!a.tape) return Tensor::constant({1, 1}, {s});
  const int pa = a.node;
  const std::int64_t n = a.size();
  return a.tape->record({1, 1}, {s}, [pa, n](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, n);
    for (auto& x : ga) x += g[0];
  });
}

namespace detail {

inline Tensor reduce_cols(const Tensor& a, bool mean) {
  const int r = a.rows(), c = a.cols();
  const double w = mean ? 1.0 / c : 1.0;
  std::vector<double> out(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a.vals()[static_cast<std::size_t>(i) * c + j];
    out[static_cast<std::size_t>(i)] = s * w;
  }
  if (!a.tape) return Tensor::constant({r, 1}, std::move(out));
  const int pa = a.node;
  return a.tape->record({r, 1}, std::move(out), [pa, r, c, w](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += w * g[static_cast<std::size_t>(i)];
    }
  });
}

inline Tensor reduce_rows(const Tensor& a, bool mean) {
  const int r = a.rows(), c = a.cols();
  const double w = mean ? 1.0 / r : 1.0;
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j)] += a.vals()[static_cast<std::size_t>(i) * c + j] * w;
  }
  if (!a.tape) return Tensor::constant({1, c}, std::move(out));
  const int pa = a.node;
  return a.tape->record({1, c}, std::move(out), [pa, r, c, w](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += w * g[static_cast<std::size_t>(j)];
    }
  });
}

}  // namespace detail

inline Tensor sum_cols(const Tensor& a) { return detail::reduce_cols(a, false); }
inline Tensor mean_cols(const Tensor& a) { return detail::reduce_cols(a, true); }
inline Tensor sum_rows(const Tensor& a) { return detail::reduce_rows(a, false); }
inline Tensor mean_rows(const Tensor& a) { return detail::reduce_rows(a, true); }

// ---------------------------------------------------------------------------
// Column-wise normalizations
// ---------------------------------------------------------------------------

inline Tensor softmax_cols(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  for (int j = 0; j < c; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < r; ++i) mx = std::max(mx, a.vals()[static_cast<std::size_t>(i) * c + j]);
    double z = 0.0;
    for (int i = 0; i < r; ++i) {
      double e = std::exp(a.vals()[static_cast<std::size_t>(i) * c + j] - mx);
      out[static_cast<std::size_t>(i) * c + j] = e;
      z += e;
    }
    for (int i = 0; i < r; ++i) out[static_cast<std::size_t>(i) * c + j] /= z;
  }
  if (!a.tape) return Tensor::constant({r, c}, std::move(out));
  const int pa = a.node;
  auto y = std::make_shared<std::vector<double>>(out);
  return a.tape->record({r, c}, std::move(out), [pa, r, c, y](const std::vector<double>& g, Gradients& gr) {
    if (pa < 0) return;
    auto& ga = gr.acc(pa, static_cast<std::int64_t>(r) * c);
    for (int j = 0; j < c; ++j) {
      double dot = 0.0;
      for (int i = 0; i < r; ++i) dot += g[static_cast<std::size_t>(i) * c + j] * (*y)[static_cast<std::size_t>(i) * c + j];
      for (int i = 0; i < r; ++i) {
        const std::size_t k = static_cast<std::size_t>(i) * c + j;
        ga[k] += (*y)[k] * (g[k] - dot);
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-column normalization: zero mean, unit variance over the feature axis,
// then a trainable per-feature affine (gain, bias are r x 1).
inline Tensor layernorm_cols(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const int r = x.rows(), c = x.cols();
  if (gain.rows() != r || gain.cols() != 1 || bias.rows() != r || bias.cols() != 1) {
    throw ShapeError("layernorm_cols: gain/bias must be r x 1");
  }
  Tape* t = x.tape;
  for (const Tensor* p : {&gain, &bias}) {
    if (p->tape) {
      if (t && t != p->tape) throw std::invalid_argument("layernorm_cols: operands live on different tapes");
      t = p->tape;
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) * c);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  for (int j = 0; j < c; ++j) {
    double m = 0.0;
    for (int i = 0; i < r; ++i) m += x.vals()[static_cast<std::size_t>(i) * c + j];
    m /= r;
    double v = 0.0;
    for (int i = 0; i < r; ++i) {
      const double d = x.vals()[static_cast<std::size_t>(i) * c + j] - m;
      v += d * d;
    }
    v /= r;
    const double s = 1.0 / std::sqrt(v + kLayerNormEps);
    (*inv_std)[static_cast<std::size_t>(j)] = s;
    for (int i = 0; i < r; ++i) {
      const std::size_t k = static_cast<std::size_t>(i) * c + j;
      const double xh = (x.vals()[k] - m) * s;
      (*xhat)[k] = xh;
      out[k] = gain.vals()[static_cast<std::size_t>(i)] * xh + bias.vals()[static_cast<std::size_t>(i)];
    }
  }
  if (!t) return Tensor::constant({r, c}, std::move(out));
  const int px = x.node, pg = gain.node, pb = bias.node;
  auto gv = gain.data;
  return t->record({r, c}, std::move(out), [px, pg, pb, r, c, xhat, inv_std, gv](const std::vector<double>& g, Gradients& gr) {
    if (pg >= 0) {
      auto& gg = gr.acc(pg, r);
      for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += g[static_cast<std::size_t>(i) * c + j] * (*xhat)[static_cast<std::size_t>(i) * c + j];
        gg[static_cast<std::size_t>(i)] += s;
      }
    }
    if (pb >= 0) {
      auto& gb = gr.acc(pb, r);
      for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += g[static_cast<std::size_t>(i) * c + j];
        gb[static_cast<std::size_t>(i)] += s;
      }
    }
    if (px >= 0) {
      auto& gx = gr.acc(px, static_cast<std::int64_t>(r) * c);
      for (int j = 0; j < c; ++j) {
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < r; ++i) {
          const std::size_t k = static_cast<std::size_t>(i) * c + j;
          const double gh = g[k] * (*gv)[static_cast<std::size_t>(i)];
          m1 += gh;
          m2 += gh * (*xhat)[k];
        }
        m1 /= r;
        m2 /= r;
        const double s = (*inv_std)[static_cast<std::size_t>(j)];
        for (int i = 0; i < r; ++i) {
          const std::size_t k = static_cast<std::size_t>(i) * c + j;
          const double gh = g[k] * (*gv)[static_cast<std::size_t>(i)];
          gx[k] += s * (gh - m1 - (*xhat)[k] * m2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

using GraphBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of a scalar-valued builder against central
// finite differences on every coordinate of every leaf. Reports the max of
// |autodiff - fd| / (|fd| + 1e-12); never throws on disagreement.
inline double grad_check(const GraphBuilder& build, const std::vector<Tensor>& point,
                         double step_scale = 1e-6) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const auto& p : point) leaves.push_back(tape.leaf(p.shape, p.vals()));
  Tensor root = build(tape, leaves);
  if (!root.is_scalar()) throw std::invalid_argument("grad_check: builder must return a scalar");
  Gradients grads = tape.backward(root);

  auto eval_at = [&](const std::vector<Tensor>& pt) {
    Tape t2;
    std::vector<Tensor> ls;
    ls.reserve(pt.size());
    for (const auto& p : pt) ls.push_back(t2.leaf(p.shape, p.vals()));
    return build(t2, ls).scalar();
  };

  double worst = 0.0;
  std::vector<Tensor> work = point;
  for (std::size_t li = 0; li < point.size(); ++li) {
    const Tensor ag = grads.of(leaves[li]);
    for (std::size_t i = 0; i < point[li].vals().size(); ++i) {
      const double x0 = point[li].vals()[i];
      const double h = step_scale * (1.0 + std::fabs(x0));
      auto set = [&](double v) {
        std::vector<double> vals = point[li].vals();
        vals[i] = v;
        work[li] = Tensor::constant(point[li].shape, std::move(vals));
      };
      set(x0 + h);
      const double fp = eval_at(work);
      set(x0 - h);
      const double fm = eval_at(work);
      work[li] = point[li];
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::fabs(ag.vals()[i] - fd) / (std::fabs(fd) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mcbeam
