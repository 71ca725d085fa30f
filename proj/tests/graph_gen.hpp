// Seeded generator of random composed graphs over the full primitive set.
// A plan is generated once (shapes tracked so every step is valid) and can be
// replayed on any tape, which is what the finite-difference oracle needs:
// the same deterministic function evaluated at perturbed points.
//
// Generation keeps intermediate magnitudes near O(1) by interleaving exact
// power-of-two rescales; without that, squaring and saturation chains push
// values toward denormals where a central-difference quotient is pure
// rounding noise and certifies nothing.
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mcbeam/rng.hpp"
#include "mcbeam/tensor.hpp"

namespace mcbeam::testgen {

enum class OpKind {
  Add,
  Sub,
  Mul,
  DivSafe,     // a / (b^2 + 1/2)
  Affine,
  MatMul,
  Transpose,
  ReluShift,   // relu(a + shift)
  ExpSmall,    // exp(0.3 a)
  SqrtSafe,    // sqrt(a^2 + 0.3)
  Square,
  SoftmaxCols,
  LayerNorm,   // unit gain, zero bias
  ConcatCols,
  SliceCols,
  MeanColsBias,  // add_bias(a, mean_cols(b))
  SumColsTerm,
  Solve,       // solve(a a^T + 2 I, b)
  ScaleBySum,  // scale(a, 0.05 * sum_all(b))
  Rescale,     // exact power-of-two stabilizer
};

struct PlanStep {
  OpKind kind;
  int a = -1;
  int b = -1;
  double param = 0.0;
  int start = 0;
  int len = 0;
};

struct GraphPlan {
  std::vector<Shape> leaf_shapes;
  std::vector<PlanStep> steps;

  Tensor replay(Tape&, const std::vector<Tensor>& leaves) const {
    std::vector<Tensor> pool(leaves);
    for (const auto& s : steps) pool.push_back(apply_step(pool, s));
    // fold the last few entries into one scalar so most of the graph is live
    Tensor root = sum_all(pool.back());
    const int extra = std::min<int>(3, static_cast<int>(pool.size()) - 1);
    for (int i = 0; i < extra; ++i) {
      root = add(root, smul(sum_all(pool[pool.size() - 2 - static_cast<std::size_t>(i)]), 0.25));
    }
    return root;
  }

  static Tensor apply_step(const std::vector<Tensor>& pool, const PlanStep& s) {
    const Tensor& a = pool[static_cast<std::size_t>(s.a)];
    switch (s.kind) {
      case OpKind::Add: return add(a, pool[static_cast<std::size_t>(s.b)]);
      case OpKind::Sub: return sub(a, pool[static_cast<std::size_t>(s.b)]);
      case OpKind::Mul: return mul(a, pool[static_cast<std::size_t>(s.b)]);
      case OpKind::DivSafe: return div(a, affine(square(pool[static_cast<std::size_t>(s.b)]), 1.0, 0.5));
      case OpKind::Affine: return affine(a, s.param, 0.1);
      case OpKind::MatMul: return matmul(a, pool[static_cast<std::size_t>(s.b)]);
      case OpKind::Transpose: return transpose(a);
      case OpKind::ReluShift: return relu(affine(a, 1.0, s.param));
      case OpKind::ExpSmall: return exp(smul(a, 0.3));
      case OpKind::SqrtSafe: return sqrt(affine(square(a), 1.0, 0.3));
      case OpKind::Square: return square(a);
      case OpKind::SoftmaxCols: return softmax_cols(a);
      case OpKind::LayerNorm:
        return layernorm_cols(a, Tensor::full({a.rows(), 1}, 1.0), Tensor::zeros({a.rows(), 1}));
      case OpKind::ConcatCols: return concat_cols({a, pool[static_cast<std::size_t>(s.b)]});
      case OpKind::SliceCols: return slice_cols(a, s.start, s.len);
      case OpKind::MeanColsBias: return add_bias(a, mean_cols(pool[static_cast<std::size_t>(s.b)]));
      case OpKind::SumColsTerm: return sum_cols(a);
      case OpKind::Solve: {
        Tensor spd = add(matmul(a, transpose(a)), smul(Tensor::identity(a.rows()), 2.0));
        return solve(spd, pool[static_cast<std::size_t>(s.b)]);
      }
      case OpKind::ScaleBySum: return scale(a, smul(sum_all(pool[static_cast<std::size_t>(s.b)]), 0.05));
      case OpKind::Rescale: return affine(a, s.param, 0.0);
    }
    throw std::logic_error("unreachable");
  }
};

namespace detail {

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.vals()) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace detail

// Builds a plan together with the evaluation point, inserting Rescale steps
// whenever an intermediate drifts away from O(1).
inline std::pair<GraphPlan, std::vector<Tensor>> make_stabilized_plan(Rng& rng, int n_leaves, int n_steps) {
  GraphPlan plan;
  std::vector<Tensor> point;
  std::vector<Tensor> pool;
  const int dims[] = {2, 3, 4};
  for (int i = 0; i < n_leaves; ++i) {
    Shape s{dims[rng.uniform_int(0, 2)], dims[rng.uniform_int(0, 2)]};
    plan.leaf_shapes.push_back(s);
    std::vector<double> v(static_cast<std::size_t>(s.rows) * s.cols);
    for (double& x : v) x = rng.uniform(-1.5, 1.5);
    Tensor t = Tensor::constant(s, std::move(v));
    point.push_back(t);
    pool.push_back(t);
  }
  auto pick = [&](auto pred) -> int {
    for (int tries = 0; tries < 64; ++tries) {
      int i = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
      if (pred(pool[static_cast<std::size_t>(i)].shape)) return i;
    }
    return -1;
  };
  int made = 0;
  while (made < n_steps) {
    PlanStep st;
    st.kind = static_cast<OpKind>(rng.uniform_int(0, 18));
    st.a = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    const Shape sa = pool[static_cast<std::size_t>(st.a)].shape;
    switch (st.kind) {
      case OpKind::Add:
      case OpKind::Sub:
      case OpKind::Mul:
      case OpKind::DivSafe:
        st.b = pick([&](Shape s) { return s == sa; });
        break;
      case OpKind::Affine:
        st.param = rng.uniform(0.4, 1.6);
        break;
      case OpKind::MatMul:
        st.b = pick([&](Shape s) { return s.rows == sa.cols; });
        break;
      case OpKind::ReluShift:
        st.param = rng.uniform(-1.0, 1.0);
        break;
      case OpKind::ConcatCols:
        st.b = pick([&](Shape s) { return s.rows == sa.rows; });
        break;
      case OpKind::SliceCols:
        if (sa.cols < 2) { st.b = -2; break; }
        st.start = rng.uniform_int(0, sa.cols - 2);
        st.len = rng.uniform_int(1, sa.cols - 1 - st.start);
        break;
      case OpKind::MeanColsBias:
        st.b = pick([&](Shape s) { return s.rows == sa.rows; });
        break;
      case OpKind::Solve:
        st.b = pick([&](Shape s) { return s.rows == sa.rows; });
        break;
      case OpKind::ScaleBySum:
        st.b = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
        break;
      default:
        break;
    }
    const bool needs_b = st.kind == OpKind::Add || st.kind == OpKind::Sub || st.kind == OpKind::Mul ||
                         st.kind == OpKind::DivSafe || st.kind == OpKind::MatMul ||
                         st.kind == OpKind::ConcatCols || st.kind == OpKind::MeanColsBias ||
                         st.kind == OpKind::Solve || st.kind == OpKind::ScaleBySum;
    if ((needs_b && st.b < 0) || st.b == -2 || st.kind == OpKind::Rescale) continue;
    Tensor out;
    try {
      out = GraphPlan::apply_step(pool, st);
    } catch (const NumericError&) {
      continue;
    }
    const double mx = detail::max_abs(out);
    // a nearly-cancelled intermediate would need a huge rescale, which turns
    // the graph chaotic (tiny input perturbations reach O(1)); skip those
    if (mx > 0.0 && mx < 1.0 / 64.0) continue;
    plan.steps.push_back(st);
    pool.push_back(out);
    ++made;
    if (mx > 0.0 && (mx < 0.25 || mx > 4.0)) {
      PlanStep fix;
      fix.kind = OpKind::Rescale;
      fix.a = static_cast<int>(pool.size()) - 1;
      fix.param = std::exp2(std::round(std::log2(1.0 / mx)));
      pool.push_back(GraphPlan::apply_step(pool, fix));
      plan.steps.push_back(fix);
    }
  }
  return {plan, point};
}

// A point qualifies for the finite-difference oracle when no ReLU input sits
// near its kink, no ReLU flips for any single-coordinate perturbation of size
// h (so both difference evaluations see the same smooth branch), and no leaf
// coordinate carries a tiny-but-nonzero gradient, where the per-coordinate
// relative error formula amplifies rounding noise past any tolerance.
inline bool fd_checkable(const GraphPlan& plan, const std::vector<Tensor>& point, double step_scale = 1e-6) {
  struct Probe {
    bool ok = false;
    std::vector<bool> pattern;
    double root = 0.0;
  };
  auto probe_at = [&](const std::vector<Tensor>& pt, bool check_margin) -> Probe {
    Probe pr;
    try {
      std::vector<Tensor> pool(pt);
      for (const auto& s : plan.steps) {
        if (s.kind == OpKind::ReluShift) {
          for (double v : pool[static_cast<std::size_t>(s.a)].vals()) {
            if (check_margin && std::fabs(v + s.param) < 1e-2) return pr;
            pr.pattern.push_back(v + s.param > 0.0);
          }
        }
        pool.push_back(GraphPlan::apply_step(pool, s));
        if (detail::max_abs(pool.back()) > 64.0) return pr;
      }
      Tape unused;
      pr.root = plan.replay(unused, pt).scalar();
    } catch (const NumericError&) {
      return pr;
    }
    pr.ok = true;
    return pr;
  };

  const Probe base = probe_at(point, true);
  if (!base.ok) return false;

  Tape tape;
  std::vector<Tensor> leaves;
  for (const auto& p : point) leaves.push_back(tape.leaf(p.shape, p.vals()));
  Gradients g = tape.backward(plan.replay(tape, leaves));
  std::vector<Tensor> ad;
  for (const auto& l : leaves) {
    const Tensor gl = g.of(l);
    for (double v : gl.vals()) {
      const double a = std::fabs(v);
      if (a > 1e4) return false;
      if (v != 0.0 && a < 1e-3) return false;
    }
    ad.push_back(gl);
  }

  std::vector<Tensor> work = point;
  for (std::size_t li = 0; li < point.size(); ++li) {
    for (std::size_t i = 0; i < point[li].vals().size(); ++i) {
      const double x0 = point[li].vals()[i];
      const double h = step_scale * (1.0 + std::fabs(x0));
      double roots[2];
      int side = 0;
      for (double v : {x0 + h, x0 - h}) {
        std::vector<double> vals = point[li].vals();
        vals[i] = v;
        work[li] = Tensor::constant(point[li].shape, std::move(vals));
        const Probe p = probe_at(work, false);
        if (!p.ok || p.pattern != base.pattern) return false;
        roots[side++] = p.root;
      }
      work[li] = point[li];
      // a dead coordinate must evaluate bit-identically on both sides;
      // otherwise the difference quotient is rounding noise over zero
      if (ad[li].vals()[i] == 0.0 && roots[0] != roots[1]) return false;
    }
  }
  return true;
}

// Draws plans until one qualifies at its point; deterministic in seed.
inline std::pair<GraphPlan, std::vector<Tensor>> smooth_random_graph(std::uint64_t seed, int n_steps) {
  for (std::uint64_t k = 0;; ++k) {
    Rng rng(mix_seed(seed, k));
    auto [plan, pt] = make_stabilized_plan(rng, 3, n_steps);
    if (fd_checkable(plan, pt)) return {plan, pt};
  }
}

}  // namespace mcbeam::testgen
