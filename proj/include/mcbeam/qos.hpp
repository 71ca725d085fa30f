// Problem semantics: per-user SINR, transmit power, the constraint-violation
// functional V (squared ReLU shortfalls), the CV metric, and the analytic
// gradient of V under the convention grad_W V = 2 dV/dW*, i.e. the gradient
// of V with respect to the stacked (Re W, Im W) repacked as a complex matrix.
//
// Every quantity exists twice: on plain complex matrices for forward-only
// evaluation, and as a taped graph so V and grad_W V can themselves be
// differentiated (training runs through unrolled gradient steps, which needs
// second-order terms).
#pragma once

#include <complex>
#include <vector>

#include "mcbeam/complex.hpp"
#include "mcbeam/scenario.hpp"

namespace mcbeam {

using Beamformer = CMatrix;  // N x M, one column per multicast group

// ---------------------------------------------------------------------------
// Plain evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline void require_dims(const ChannelInstance& inst, int w_rows, int w_cols, const char* op) {
  if (w_rows != inst.n() || w_cols != inst.groups()) {
    throw ShapeError(std::string(op) + ": beamformer must be N x M for this instance");
  }
}

}  // namespace detail

// |h_u^H w_j|^2 for every user u and group j
inline std::vector<std::vector<double>> signal_powers(const ChannelInstance& inst, const Beamformer& W) {
  detail::require_dims(inst, W.rows, W.cols, "signal_powers");
  std::vector<std::vector<double>> s(static_cast<std::size_t>(inst.users()),
                                     std::vector<double>(static_cast<std::size_t>(inst.groups())));
  for (int u = 0; u < inst.users(); ++u) {
    for (int j = 0; j < inst.groups(); ++j) {
      std::complex<double> p = 0.0;
      for (int a = 0; a < inst.n(); ++a) p += std::conj(inst.H(a, u)) * W(a, j);
      s[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)] = std::norm(p);
    }
  }
  return s;
}

inline std::vector<double> sinr(const ChannelInstance& inst, const Beamformer& W) {
  const auto s = signal_powers(inst, W);
  std::vector<double> out(static_cast<std::size_t>(inst.users()));
  for (int u = 0; u < inst.users(); ++u) {
    const int m = inst.group_of(u);
    double den = inst.sigma2[static_cast<std::size_t>(u)];
    for (int j = 0; j < inst.groups(); ++j) {
      if (j != m) den += s[static_cast<std::size_t>(u)][static_cast<std::size_t>(j)];
    }
    out[static_cast<std::size_t>(u)] = s[static_cast<std::size_t>(u)][static_cast<std::size_t>(m)] / den;
  }
  return out;
}

inline double total_power(const Beamformer& W) { return fro_norm2(W); }

inline double violation_mk(const ChannelInstance& inst, const Beamformer& W, int m, int k) {
  const auto s = sinr(inst, W);
  const int u = inst.offsets[static_cast<std::size_t>(m)] + k;
  const double v = inst.gamma_lin[static_cast<std::size_t>(m)] - s[static_cast<std::size_t>(u)];
  return v > 0.0 ? v : 0.0;
}

inline double violation_total(const ChannelInstance& inst, const Beamformer& W) {
  const auto s = sinr(inst, W);
  double total = 0.0;
  for (int u = 0; u < inst.users(); ++u) {
    const double v = inst.gamma_lin[static_cast<std::size_t>(inst.group_of(u))] - s[static_cast<std::size_t>(u)];
    if (v > 0.0) total += v * v;
  }
  return total;
}

inline double cv(const ChannelInstance& inst, const Beamformer& W) {
  const auto s = sinr(inst, W);
  double total = 0.0;
  for (int u = 0; u < inst.users(); ++u) {
    const double gamma = inst.gamma_lin[static_cast<std::size_t>(inst.group_of(u))];
    const double v = gamma - s[static_cast<std::size_t>(u)];
    if (v > 0.0) total += v / gamma;
  }
  return total / inst.users();
}

// grad_W V. Derivation per user u in group m with c = h_u, p_j = c^H w_j,
// s_j = |p_j|^2, D = sigma^2 + sum_{j != m} s_j, v = ReLU(gamma - s_m / D):
//   d/dw_m:  -4 (v / D) c p_m
//   d/dw_j:  +4 (v s_m / D^2) c p_j        (j != m)
// Exactly zero wherever every constraint holds (v = 0 kills both factors).
inline CMatrix grad_violation(const ChannelInstance& inst, const Beamformer& W) {
  detail::require_dims(inst, W.rows, W.cols, "grad_violation");
  CMatrix G(inst.n(), inst.groups());
  for (int u = 0; u < inst.users(); ++u) {
    const int m = inst.group_of(u);
    const double gamma = inst.gamma_lin[static_cast<std::size_t>(m)];
    std::vector<std::complex<double>> p(static_cast<std::size_t>(inst.groups()));
    for (int j = 0; j < inst.groups(); ++j) {
      std::complex<double> acc = 0.0;
      for (int a = 0; a < inst.n(); ++a) acc += std::conj(inst.H(a, u)) * W(a, j);
      p[static_cast<std::size_t>(j)] = acc;
    }
    double den = inst.sigma2[static_cast<std::size_t>(u)];
    for (int j = 0; j < inst.groups(); ++j) {
      if (j != m) den += std::norm(p[static_cast<std::size_t>(j)]);
    }
    const double s_m = std::norm(p[static_cast<std::size_t>(m)]);
    const double v = gamma - s_m / den;
    if (v <= 0.0) continue;
    const double own = -4.0 * v / den;
    const double cross = 4.0 * v * s_m / (den * den);
    for (int j = 0; j < inst.groups(); ++j) {
      const double coef = (j == m) ? own : cross;
      const std::complex<double> w = coef * p[static_cast<std::size_t>(j)];
      for (int a = 0; a < inst.n(); ++a) G(a, j) += w * inst.H(a, u);
    }
  }
  return G;
}

struct MrtSolution {
  Beamformer W;
  double power = 0.0;
};

// Closed-form optimum for one group with one user: w = sqrt(gamma sigma^2)
// h / ||h||^2, meeting the SINR target with equality at minimal power.
inline MrtSolution mrt_oracle(const ChannelInstance& inst) {
  if (inst.groups() != 1 || inst.users() != 1) {
    throw std::invalid_argument("mrt_oracle: exactly one group with one user required");
  }
  const double gamma = inst.gamma_lin[0];
  const double sig2 = inst.sigma2[0];
  double h2 = 0.0;
  for (int a = 0; a < inst.n(); ++a) h2 += std::norm(inst.H(a, 0));
  if (!(h2 > 0.0)) throw NumericError("mrt_oracle: zero channel");
  MrtSolution out;
  out.W = CMatrix(inst.n(), 1);
  const double amp = std::sqrt(gamma * sig2) / h2;
  for (int a = 0; a < inst.n(); ++a) out.W(a, 0) = amp * inst.H(a, 0);
  out.power = gamma * sig2 / h2;
  return out;
}

// ---------------------------------------------------------------------------
// Taped evaluation
// ---------------------------------------------------------------------------

inline CTensor channel_column(const ChannelInstance& inst, int u) {
  std::vector<double> re(static_cast<std::size_t>(inst.n()));
  std::vector<double> im(re.size());
  for (int a = 0; a < inst.n(); ++a) {
    re[static_cast<std::size_t>(a)] = inst.H(a, u).real();
    im[static_cast<std::size_t>(a)] = inst.H(a, u).imag();
  }
  return {Tensor::constant({inst.n(), 1}, std::move(re)), Tensor::constant({inst.n(), 1}, std::move(im))};
}

// Per-user building blocks shared by the taped V, CV and grad_W V graphs.
struct UserSinrNodes {
  std::vector<CTensor> p;  // h_u^H w_j, 1x1 complex, per group
  Tensor own;              // |h_u^H w_m|^2
  Tensor den;              // interference plus noise
  Tensor sinr;
  Tensor violation;        // ReLU(gamma - sinr)
};

inline UserSinrNodes user_sinr_nodes(const ChannelInstance& inst, const CTensor& W, int u) {
  const int m = inst.group_of(u);
  const CTensor h = channel_column(inst, u);
  UserSinrNodes nodes;
  std::vector<Tensor> interference;
  for (int j = 0; j < inst.groups(); ++j) {
    CTensor p = cinner(h, cslice_cols(W, j, 1));
    Tensor s = add(square(p.re), square(p.im));
    if (j == m) {
      nodes.own = s;
    } else {
      interference.push_back(s);
    }
    nodes.p.push_back(p);
  }
  Tensor den = Tensor::constant({1, 1}, {inst.sigma2[static_cast<std::size_t>(u)]});
  for (const auto& s : interference) den = add(den, s);
  nodes.den = den;
  nodes.sinr = div(nodes.own, den);
  nodes.violation = relu(affine(nodes.sinr, -1.0, inst.gamma_lin[static_cast<std::size_t>(m)]));
  return nodes;
}

inline Tensor sinr(const ChannelInstance& inst, const CTensor& W) {
  detail::require_dims(inst, W.rows(), W.cols(), "sinr");
  std::vector<Tensor> rows;
  for (int u = 0; u < inst.users(); ++u) rows.push_back(user_sinr_nodes(inst, W, u).sinr);
  return concat_rows(rows);
}

inline Tensor total_power(const CTensor& W) { return cfro_norm2(W); }

inline Tensor violation_total(const ChannelInstance& inst, const CTensor& W) {
  detail::require_dims(inst, W.rows(), W.cols(), "violation_total");
  Tensor total = Tensor::zeros({1, 1});
  for (int u = 0; u < inst.users(); ++u) {
    total = add(total, square(user_sinr_nodes(inst, W, u).violation));
  }
  return total;
}

inline Tensor cv(const ChannelInstance& inst, const CTensor& W) {
  detail::require_dims(inst, W.rows(), W.cols(), "cv");
  Tensor total = Tensor::zeros({1, 1});
  for (int u = 0; u < inst.users(); ++u) {
    const double gamma = inst.gamma_lin[static_cast<std::size_t>(inst.group_of(u))];
    total = add(total, smul(user_sinr_nodes(inst, W, u).violation, 1.0 / gamma));
  }
  return smul(total, 1.0 / inst.users());
}

// Taped grad_W V, same formula as the plain version but expressed through
// primitives so a loss can backpropagate through it.
inline CTensor grad_violation(const ChannelInstance& inst, const CTensor& W) {
  detail::require_dims(inst, W.rows(), W.cols(), "grad_violation");
  const int n = inst.n(), groups = inst.groups();
  std::vector<std::vector<CTensor>> terms(static_cast<std::size_t>(groups));
  for (int u = 0; u < inst.users(); ++u) {
    const int m = inst.group_of(u);
    UserSinrNodes nodes = user_sinr_nodes(inst, W, u);
    const CTensor h = channel_column(inst, u);
    Tensor own = smul(div(nodes.violation, nodes.den), -4.0);
    Tensor cross = smul(div(mul(nodes.violation, nodes.sinr), nodes.den), 4.0);
    for (int j = 0; j < groups; ++j) {
      const CTensor hp = cscale_complex(h, nodes.p[static_cast<std::size_t>(j)].re,
                                        nodes.p[static_cast<std::size_t>(j)].im);
      terms[static_cast<std::size_t>(j)].push_back(cscale_real(hp, j == m ? own : cross));
    }
  }
  std::vector<CTensor> cols;
  for (int j = 0; j < groups; ++j) {
    CTensor acc = CTensor::constant(CMatrix(n, 1));
    for (const auto& t : terms[static_cast<std::size_t>(j)]) acc = cadd(acc, t);
    cols.push_back(acc);
  }
  return cconcat_cols(cols);
}

}  // namespace mcbeam
