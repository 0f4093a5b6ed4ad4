#pragma once

#include <string>
#include <vector>

#include "vremd/tensor.hpp"

namespace vremd {

inline constexpr double kInitStd = 0.02;

// Dense layer. Weight (in, out); applies to the last axis of the input,
// batched over everything in front.
template <class Real>
struct Linear {
  Tensor<Real> weight;
  Tensor<Real> bias;  // undefined when bias-free
  bool has_bias = true;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(Tensor<Real>::trunc_normal({in, out}, rng, kInitStd)),
        has_bias(with_bias) {
    if (with_bias) bias = Tensor<Real>::zeros({out}, true);
  }

  static Linear zero_init(std::size_t in, std::size_t out,
                          bool with_bias = true) {
    Linear l;
    l.weight = Tensor<Real>::zeros({in, out}, true);
    l.has_bias = with_bias;
    if (with_bias) l.bias = Tensor<Real>::zeros({out}, true);
    return l;
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    Tensor<Real> y = matmul(x, weight);
    if (has_bias) y = add(y, bias);
    return y;
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (has_bias) out.push_back({prefix + ".bias", bias});
  }
};

template <class Real>
struct LayerNorm {
  Tensor<Real> gamma;
  Tensor<Real> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim)
      : gamma(Tensor<Real>::from_data({dim},
                                      std::vector<Real>(dim, Real(1)), true)),
        beta(Tensor<Real>::zeros({dim}, true)) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    return add(mul(layer_norm(x), gamma), beta);
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

template <class Real>
struct Mlp {
  Linear<Real> fc1;
  Linear<Real> fc2;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    return fc2.forward(gelu(fc1.forward(x)));
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
  }
};

// Multi-head self attention over a (T, D) token sequence.
template <class Real>
struct SelfAttention {
  Linear<Real> qkv;
  Linear<Real> proj;
  std::size_t heads = 1;
  std::size_t dim = 0;

  SelfAttention() = default;
  SelfAttention(std::size_t d, std::size_t h, Rng& rng)
      : qkv(d, 3 * d, rng), proj(d, d, rng), heads(h), dim(d) {
    if (d % h != 0)
      throw std::invalid_argument("attention dim " + std::to_string(d) +
                                  " not divisible by heads " +
                                  std::to_string(h));
  }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    const std::size_t t = x.shape()[0];
    const std::size_t hd = dim / heads;
    Tensor<Real> qkv_out = qkv.forward(x);  // (T, 3D)
    auto split_heads = [&](std::size_t which) {
      Tensor<Real> part = slice(qkv_out, 1, which * dim, dim);
      // (T, D) -> (heads, T, hd)
      return transpose(reshape(part, {t, heads, hd}), 0, 1);
    };
    Tensor<Real> q = split_heads(0);
    Tensor<Real> k = split_heads(1);
    Tensor<Real> v = split_heads(2);
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
    Tensor<Real> logits = mul_scalar(matmul(q, transpose(k)), scale);
    Tensor<Real> attn = softmax(logits, 2);        // (heads, T, T)
    Tensor<Real> ctx = matmul(attn, v);            // (heads, T, hd)
    Tensor<Real> merged = reshape(transpose(ctx, 0, 1), {t, dim});
    return proj.forward(merged);
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    qkv.params(prefix + ".qkv", out);
    proj.params(prefix + ".proj", out);
  }
};

// Pre-norm transformer encoder block.
template <class Real>
struct TransformerBlock {
  LayerNorm<Real> norm1;
  SelfAttention<Real> attn;
  LayerNorm<Real> norm2;
  Mlp<Real> mlp;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                   Rng& rng)
      : norm1(dim),
        attn(dim, heads, rng),
        norm2(dim),
        mlp(dim, dim * mlp_ratio, dim, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x) const {
    Tensor<Real> h = add(x, attn.forward(norm1.forward(x)));
    return add(h, mlp.forward(norm2.forward(h)));
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    norm1.params(prefix + ".norm1", out);
    attn.params(prefix + ".attn", out);
    norm2.params(prefix + ".norm2", out);
    mlp.params(prefix + ".mlp", out);
  }
};

// Single-head cross attention: queries from one sequence, keys/values from
// another.
template <class Real>
struct CrossAttention {
  Linear<Real> wq, wk, wv, wo;
  std::size_t dim = 0;

  CrossAttention() = default;
  CrossAttention(std::size_t d, Rng& rng)
      : wq(d, d, rng, false),
        wk(d, d, rng, false),
        wv(d, d, rng, false),
        wo(d, d, rng, false),
        dim(d) {}

  Tensor<Real> forward(const Tensor<Real>& query_src,
                       const Tensor<Real>& kv_src) const {
    Tensor<Real> q = wq.forward(query_src);
    Tensor<Real> k = wk.forward(kv_src);
    Tensor<Real> v = wv.forward(kv_src);
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dim));
    Tensor<Real> attn = softmax(mul_scalar(matmul(q, transpose(k)), scale), 1);
    return wo.forward(matmul(attn, v));
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    wq.params(prefix + ".wq", out);
    wk.params(prefix + ".wk", out);
    wv.params(prefix + ".wv", out);
    wo.params(prefix + ".wo", out);
  }
};

// ---------------------------------------------------------------------------
// grid helpers (features laid out as (H, W, C))
// ---------------------------------------------------------------------------

// Zero padding of one ring around the spatial extent.
template <class Real>
Tensor<Real> pad_grid(const Tensor<Real>& g) {
  const std::size_t h = g.shape()[0], w = g.shape()[1], c = g.shape()[2];
  Tensor<Real> rows_pad = Tensor<Real>::zeros({1, w, c});
  Tensor<Real> v = concat<Real>({rows_pad, g, rows_pad}, 0);
  Tensor<Real> cols_pad = Tensor<Real>::zeros({h + 2, 1, c});
  return concat<Real>({cols_pad, v, cols_pad}, 1);
}

// 3x3 same-padding convolution expressed as nine shifted matmuls, so its
// gradient falls out of the existing ops. Weight layout (3, 3, Cin, Cout).
template <class Real>
struct Conv3x3 {
  Tensor<Real> weight;
  Tensor<Real> bias;

  Conv3x3() = default;
  Conv3x3(std::size_t cin, std::size_t cout, Rng& rng)
      : weight(Tensor<Real>::trunc_normal({3, 3, cin, cout}, rng, kInitStd)),
        bias(Tensor<Real>::zeros({cout}, true)) {}

  Tensor<Real> forward(const Tensor<Real>& g) const {
    const std::size_t h = g.shape()[0], w = g.shape()[1], cin = g.shape()[2];
    const std::size_t cout = weight.shape()[3];
    Tensor<Real> padded = pad_grid(g);  // (h+2, w+2, cin)
    Tensor<Real> out;
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) {
        Tensor<Real> window =
            slice(slice(padded, 0, dy, h), 1, dx, w);  // (h, w, cin)
        Tensor<Real> tap =
            reshape(slice(slice(weight, 0, dy, 1), 1, dx, 1), {cin, cout});
        Tensor<Real> term = matmul(reshape(window, {h * w, cin}), tap);
        out = out.defined() ? add(out, term) : term;
      }
    out = add(out, bias);
    return reshape(out, {h, w, cout});
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

// Doubles the spatial extent by zero insertion (samples land on even
// indices). Followed by a 3x3 convolution this is a stride-2 transposed
// convolution with a 3x3 kernel.
template <class Real>
Tensor<Real> zero_upsample2x(const Tensor<Real>& g) {
  const std::size_t h = g.shape()[0], w = g.shape()[1], c = g.shape()[2];
  Tensor<Real> rows = reshape(g, {h, 1, w * c});
  Tensor<Real> zr = Tensor<Real>::zeros({h, 1, w * c});
  Tensor<Real> tall = reshape(concat<Real>({rows, zr}, 1), {2 * h, w, c});
  Tensor<Real> cols = reshape(tall, {2 * h, w, 1, c});
  Tensor<Real> zc = Tensor<Real>::zeros({2 * h, w, 1, c});
  return reshape(concat<Real>({cols, zc}, 2), {2 * h, 2 * w, c});
}

}  // namespace vremd
