// Encoding block: channel matrix -> (alpha, lambda).
//
// embedding (split re/im, linear projection)
//   -> L hierarchical layers (per-group self-attention with shared weights,
//      then self-attention across all users)
//   -> de-embedding (3 rows per user: Re alpha, Im alpha, lambda via ReLU).
//
// No parameter shape depends on the number of users or groups, so one set of
// weights runs at any K and M. Columns are processed identically everywhere,
// which is what makes the block equivariant to user permutations within each
// group and to group permutations.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcbeam/complex.hpp"
#include "mcbeam/params.hpp"

namespace mcbeam {

struct EncoderHyper {
  int d = 128;     // embedding size
  int layers = 2;  // hierarchical layers
  int heads = 4;   // attention heads
  int dff = 512;   // feed-forward hidden width

  int head_dim() const {
    if (d % heads != 0) throw std::invalid_argument("encoder: d must be divisible by the head count");
    return d / heads;
  }
};

struct AttentionWeights {
  struct Head {
    Tensor wq, wk, wv, wo;
  };
  std::vector<Head> heads;
  Tensor w1, b1, w2, b2;                        // component-wise feed-forward
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct EncoderWeights {
  Tensor w_em, b_em;
  std::vector<std::pair<AttentionWeights, AttentionWeights>> layers;  // (u1, u2)
  Tensor w_de, b_de;
};

// One self-attention block, Z = Norm(Y + CFF(Y)) with Y = Norm(X + MHA(X)).
inline Tensor self_attention(const Tensor& x, const AttentionWeights& w) {
  const int dprime = w.heads.front().wq.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dprime));
  Tensor mha;
  bool first = true;
  for (const auto& h : w.heads) {
    Tensor q = matmul(h.wq, x);
    Tensor k = matmul(h.wk, x);
    Tensor v = matmul(h.wv, x);
    Tensor компat = smul(matmul(transpose(k), q), scale);
    Tensor weights = softmax_cols(компat);
    Tensor head_out = matmul(h.wo, matmul(v, weights));
    mha = first ? head_out : add(mha, head_out);
    first = false;
  }
  Tensor y = layernorm_cols(add(x, mha), w.ln1_gain, w.ln1_bias);
  Tensor cff = add_bias(matmul(w.w2, relu(add_bias(matmul(w.w1, y), w.b1))), w.b2);
  return layernorm_cols(add(y, cff), w.ln2_gain, w.ln2_bias);
}

// Per-group attention with shared weights, then attention across all users.
inline Tensor hierarchical_layer(const Tensor& x, const std::vector<int>& k_per_group,
                                 const AttentionWeights& u1, const AttentionWeights& u2) {
  int total = 0;
  for (int km : k_per_group) total += km;
  if (total != x.cols()) throw ShapeError("hierarchical_layer: group sizes do not match column count");
  std::vector<Tensor> blocks;
  int off = 0;
  for (int km : k_per_group) {
    blocks.push_back(self_attention(slice_cols(x, off, km), u1));
    off += km;
  }
  return self_attention(concat_cols(blocks), u2);
}

inline Tensor embed(const CTensor& h, const Tensor& w_em, const Tensor& b_em) {
  if (w_em.cols() != 2 * h.rows()) throw ShapeError("embed: weight sized for a different antenna count");
  return add_bias(matmul(w_em, concat_rows(h.re, h.im)), b_em);
}

struct Encoded {
  CTensor alpha;  // K x 1 complex weights
  Tensor lambda;  // K x 1, nonnegative
};

inline Encoded deembed(const Tensor& x, const Tensor& w_de, const Tensor& b_de) {
  Tensor de = add_bias(matmul(w_de, x), b_de);  // 3 x K
  Encoded out;
  out.alpha = {transpose(slice_rows(de, 0, 1)), transpose(slice_rows(de, 1, 1))};
  out.lambda = transpose(relu(slice_rows(de, 2, 1)));
  return out;
}

inline Encoded encode(const CTensor& h, const EncoderWeights& w, const std::vector<int>& k_per_group) {
  Tensor x = embed(h, w.w_em, w.b_em);
  for (const auto& layer : w.layers) {
    x = hierarchical_layer(x, k_per_group, layer.first, layer.second);
  }
  return deembed(x, w.w_de, w.b_de);
}

// Trainable-array count as a closed formula; independent of K and M.
inline std::int64_t encoder_param_count(int n_antennas, const EncoderHyper& hyper) {
  const std::int64_t d = hyper.d, dp = hyper.head_dim(), dff = hyper.dff;
  const std::int64_t per_sublayer = hyper.heads * (3 * dp * d + d * dp)  // q, k, v, o
                                    + (dff * d + dff + d * dff + d)      // feed-forward
                                    + 4 * d;                             // two norms
  return d * 2 * n_antennas + d + 2LL * hyper.layers * per_sublayer + 3 * d + 3;
}

class EncoderModel {
 public:
  EncoderModel() = default;

  static EncoderModel create(int n_antennas, const EncoderHyper& hyper, std::uint64_t seed) {
    EncoderModel model;
    model.n_antennas_ = n_antennas;
    model.hyper_ = hyper;
    Rng rng(seed, 0x656e63);  // encoder stream
    auto& p = model.params_;
    const int d = hyper.d, dp = hyper.head_dim(), dff = hyper.dff;
    p.add("w_em", {d, 2 * n_antennas}, uniform_init(rng, {d, 2 * n_antennas}, 2 * n_antennas));
    p.add("b_em", {d, 1}, const_init({d, 1}, 0.0));
    for (int l = 0; l < hyper.layers; ++l) {
      for (const char* sub : {"u1", "u2"}) {
        const std::string base = "l" + std::to_string(l) + "." + sub + ".";
        for (int t = 0; t < hyper.heads; ++t) {
          const std::string hb = base + "h" + std::to_string(t) + ".";
          p.add(hb + "wq", {dp, d}, uniform_init(rng, {dp, d}, d));
          p.add(hb + "wk", {dp, d}, uniform_init(rng, {dp, d}, d));
          p.add(hb + "wv", {dp, d}, uniform_init(rng, {dp, d}, d));
          p.add(hb + "wo", {d, dp}, uniform_init(rng, {d, dp}, dp));
        }
        p.add(base + "w1", {dff, d}, uniform_init(rng, {dff, d}, d));
        p.add(base + "b1", {dff, 1}, const_init({dff, 1}, 0.0));
        p.add(base + "w2", {d, dff}, uniform_init(rng, {d, dff}, dff));
        p.add(base + "b2", {d, 1}, const_init({d, 1}, 0.0));
        p.add(base + "ln1_gain", {d, 1}, const_init({d, 1}, 1.0));
        p.add(base + "ln1_bias", {d, 1}, const_init({d, 1}, 0.0));
        p.add(base + "ln2_gain", {d, 1}, const_init({d, 1}, 1.0));
        p.add(base + "ln2_bias", {d, 1}, const_init({d, 1}, 0.0));
      }
    }
    p.add("w_de", {3, d}, uniform_init(rng, {3, d}, d));
    p.add("b_de", {3, 1}, const_init({3, 1}, 0.0));
    return model;
  }

  struct Bound {
    EncoderWeights weights;
    std::vector<Tensor> flat;  // aligned with ParamStore entries
  };

  Bound bind(Tape& tape) const {
    Bound b;
    b.flat = params_.bind(tape);
    int i = 0;
    auto next = [&]() { return b.flat[static_cast<std::size_t>(i++)]; };
    b.weights.w_em = next();
    b.weights.b_em = next();
    for (int l = 0; l < hyper_.layers; ++l) {
      std::pair<AttentionWeights, AttentionWeights> layer;
      for (AttentionWeights* sub : {&layer.first, &layer.second}) {
        for (int t = 0; t < hyper_.heads; ++t) {
          AttentionWeights::Head head;
          head.wq = next();
          head.wk = next();
          head.wv = next();
          head.wo = next();
          sub->heads.push_back(head);
        }
        sub->w1 = next();
        sub->b1 = next();
        sub->w2 = next();
        sub->b2 = next();
        sub->ln1_gain = next();
        sub->ln1_bias = next();
        sub->ln2_gain = next();
        sub->ln2_bias = next();
      }
      b.weights.layers.push_back(std::move(layer));
    }
    b.weights.w_de = next();
    b.weights.b_de = next();
    return b;
  }

  int n_antennas() const { return n_antennas_; }
  const EncoderHyper& hyper() const { return hyper_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

 private:
  int n_antennas_ = 0;
  EncoderHyper hyper_;
  ParamStore params_;
};

}  // namespace mcbeam
