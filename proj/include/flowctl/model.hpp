#pragma once

// The frozen-base network: a small diffusion transformer mapping
// (noisy sample, masked sample, tokens, flow step) to a predicted vector
// field over F x T features.
//
// Per frame, the three F-row inputs are concatenated with the frame's token
// embedding into a 3F vector and projected to width D. Blocks are pre-norm
// residual transformer blocks whose norms are modulated by a learned
// scale/shift derived from the flow-step embedding. Skipped blocks are exactly
// the identity on the residual stream; optional per-block additive injections
// are the attachment point for the control branch.
//
// Everything is templated on the scalar so training runs in float while
// gradient checking runs the identical code in double. Forward passes record
// a tape of the activations each backward step needs; backward accumulates
// parameter gradients and, when requested, gradients w.r.t. the injections.

#include "flowctl/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flowctl {

struct ModelConfig {
  int F = 16;         // feature rows
  int D = 64;         // model width
  int B = 8;          // block count
  int heads = 1;
  int mlp_ratio = 4;
  int V = 16;         // vocabulary (excludes the reserved/filler id V)
  int L = 4;          // frames per token
  int max_T = 128;

  int filler_token() const { return V; }

  void validate() const {
    if (F < 4 || D < 2 || B < 1 || heads < 1 || mlp_ratio < 1 || V < 1 || L < 1 || max_T < L) {
      throw std::invalid_argument("model config: non-positive dimension");
    }
    if (D % heads != 0) throw std::invalid_argument("model config: D must be divisible by heads");
  }
};

template <typename S>
struct LinearT {
  Mat<S> w;     // in x out
  RowVec<S> b;  // 1 x out

  void resize(int in, int out) {
    w.resize(in, out);
    b.resize(out);
  }
};

template <typename S>
struct BlockParamsT {
  LinearT<S> mod;       // D -> 4D conditioning (scale/shift for both pre-norms)
  LinearT<S> qkv;       // D -> 3D
  LinearT<S> attn_out;  // D -> D
  LinearT<S> mlp_in;    // D -> mlp_ratio * D
  LinearT<S> mlp_out;   // mlp_ratio * D -> D
};

template <typename S>
struct BaseParamsT {
  ModelConfig cfg;
  Mat<S> tok_emb;          // (V + 1) x F, last row is the filler token
  LinearT<S> input_proj;   // 3F -> D
  LinearT<S> time_in;      // D -> D
  LinearT<S> time_out;     // D -> D
  std::vector<BlockParamsT<S>> blocks;
  LinearT<S> out_head;     // D -> F
};

using BaseParams = BaseParamsT<float>;

// ---------------------------------------------------------------------------
// Named tensor registry

template <typename S>
struct TensorView {
  std::string name;
  S* data;
  long rows;
  long cols;
  long size() const { return rows * cols; }
};

template <typename S, typename M>
void push_view(std::vector<TensorView<S>>& out, const std::string& name, M& m) {
  out.push_back(TensorView<S>{name, const_cast<S*>(m.data()), m.rows(), m.cols()});
}

template <typename S>
void append_block_views(std::vector<TensorView<S>>& out, const std::string& prefix,
                        BlockParamsT<S>& blk) {
  push_view(out, prefix + ".mod.w", blk.mod.w);
  push_view(out, prefix + ".mod.b", blk.mod.b);
  push_view(out, prefix + ".qkv.w", blk.qkv.w);
  push_view(out, prefix + ".qkv.b", blk.qkv.b);
  push_view(out, prefix + ".attn_out.w", blk.attn_out.w);
  push_view(out, prefix + ".attn_out.b", blk.attn_out.b);
  push_view(out, prefix + ".mlp_in.w", blk.mlp_in.w);
  push_view(out, prefix + ".mlp_in.b", blk.mlp_in.b);
  push_view(out, prefix + ".mlp_out.w", blk.mlp_out.w);
  push_view(out, prefix + ".mlp_out.b", blk.mlp_out.b);
}

template <typename S>
std::vector<TensorView<S>> tensor_views(BaseParamsT<S>& p) {
  std::vector<TensorView<S>> out;
  push_view(out, "tok_emb", p.tok_emb);
  push_view(out, "input_proj.w", p.input_proj.w);
  push_view(out, "input_proj.b", p.input_proj.b);
  push_view(out, "time_in.w", p.time_in.w);
  push_view(out, "time_in.b", p.time_in.b);
  push_view(out, "time_out.w", p.time_out.w);
  push_view(out, "time_out.b", p.time_out.b);
  for (size_t k = 0; k < p.blocks.size(); ++k) {
    append_block_views(out, "block" + std::to_string(k), p.blocks[k]);
  }
  push_view(out, "out_head.w", p.out_head.w);
  push_view(out, "out_head.b", p.out_head.b);
  return out;
}

template <typename S>
uint64_t hash_views(const std::vector<TensorView<S>>& views) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& v : views) {
    h = fnv1a64(v.name.data(), v.name.size(), h);
    h = fnv1a64(v.data, static_cast<size_t>(v.size()) * sizeof(S), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Initialization

template <typename S>
void alloc_block(BlockParamsT<S>& blk, const ModelConfig& c) {
  blk.mod.resize(c.D, 4 * c.D);
  blk.qkv.resize(c.D, 3 * c.D);
  blk.attn_out.resize(c.D, c.D);
  blk.mlp_in.resize(c.D, c.mlp_ratio * c.D);
  blk.mlp_out.resize(c.mlp_ratio * c.D, c.D);
}

template <typename S>
void fill_linear(LinearT<S>& lin, Rng& rng, double scale_mult = 1.0) {
  const double scale = scale_mult / std::sqrt(static_cast<double>(lin.w.rows()));
  for (long r = 0; r < lin.w.rows(); ++r) {
    for (long c = 0; c < lin.w.cols(); ++c) lin.w(r, c) = static_cast<S>(rng.normal() * scale);
  }
  lin.b.setZero();
}

// Deterministic scaled-normal initialization. Conditioning projections start
// at zero so every pre-norm is initially an unmodulated layer norm.
template <typename S>
BaseParamsT<S> init_base_t(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  BaseParamsT<S> p;
  p.cfg = cfg;
  p.tok_emb.resize(cfg.V + 1, cfg.F);
  p.input_proj.resize(3 * cfg.F, cfg.D);
  p.time_in.resize(cfg.D, cfg.D);
  p.time_out.resize(cfg.D, cfg.D);
  p.blocks.resize(cfg.B);
  for (auto& blk : p.blocks) alloc_block(blk, cfg);
  p.out_head.resize(cfg.D, cfg.F);

  Rng rng(derive_seed(seed, 0x62617365));
  for (long r = 0; r < p.tok_emb.rows(); ++r) {
    for (long c = 0; c < p.tok_emb.cols(); ++c) p.tok_emb(r, c) = static_cast<S>(rng.normal() * 0.5);
  }
  fill_linear(p.input_proj, rng);
  fill_linear(p.time_in, rng);
  fill_linear(p.time_out, rng);
  for (auto& blk : p.blocks) {
    blk.mod.w.setZero();
    blk.mod.b.setZero();
    fill_linear(blk.qkv, rng);
    fill_linear(blk.attn_out, rng);
    fill_linear(blk.mlp_in, rng);
    fill_linear(blk.mlp_out, rng);
  }
  fill_linear(p.out_head, rng, 0.1);
  return p;
}

inline BaseParams init_base(const ModelConfig& cfg, uint64_t seed) {
  return init_base_t<float>(cfg, seed);
}

template <typename Dst, typename Src>
BaseParamsT<Dst> convert_base(const BaseParamsT<Src>& p) {
  BaseParamsT<Dst> out = init_base_t<Dst>(p.cfg, 0);
  auto src = tensor_views(const_cast<BaseParamsT<Src>&>(p));
  auto dst = tensor_views(out);
  for (size_t i = 0; i < src.size(); ++i) {
    for (long j = 0; j < src[i].size(); ++j) dst[i].data[j] = static_cast<Dst>(src[i].data[j]);
  }
  return out;
}

template <typename S>
void zero_views(std::vector<TensorView<S>>& views) {
  for (auto& v : views) std::fill(v.data, v.data + v.size(), static_cast<S>(0));
}

// ---------------------------------------------------------------------------
// Activations and layer primitives

template <typename S>
S gelu_scalar(S x) {
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  S u = k * (x + static_cast<S>(0.044715) * x * x * x);
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(u));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S k = static_cast<S>(0.7978845608028654);
  S u = k * (x + static_cast<S>(0.044715) * x * x * x);
  S th = std::tanh(u);
  S sech2 = static_cast<S>(1) - th * th;
  return static_cast<S>(0.5) * (static_cast<S>(1) + th) +
         static_cast<S>(0.5) * x * sech2 * k *
             (static_cast<S>(1) + static_cast<S>(3) * static_cast<S>(0.044715) * x * x);
}

template <typename S>
S silu_scalar(S x) {
  return x / (static_cast<S>(1) + std::exp(-x));
}

template <typename S>
S silu_grad_scalar(S x) {
  S sig = static_cast<S>(1) / (static_cast<S>(1) + std::exp(-x));
  return sig * (static_cast<S>(1) + x * (static_cast<S>(1) - sig));
}

constexpr double kLnEps = 1e-5;

// Non-affine layer norm over each row. Returns xhat and stores 1/sigma per row.
template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, ColVec<S>& inv_sigma) {
  const long T = x.rows(), D = x.cols();
  Mat<S> xhat(T, D);
  inv_sigma.resize(T);
  for (long i = 0; i < T; ++i) {
    S mu = x.row(i).mean();
    S var = (x.row(i).array() - mu).square().sum() / static_cast<S>(D);
    S is = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLnEps));
    inv_sigma(i) = is;
    xhat.row(i) = (x.row(i).array() - mu) * is;
  }
  return xhat;
}

// Gradient through non-affine layer norm given xhat and 1/sigma.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dxhat, const Mat<S>& xhat, const ColVec<S>& inv_sigma) {
  const long T = xhat.rows(), D = xhat.cols();
  Mat<S> dx(T, D);
  for (long i = 0; i < T; ++i) {
    S mean_dy = dxhat.row(i).mean();
    S mean_dyx = (dxhat.row(i).array() * xhat.row(i).array()).sum() / static_cast<S>(D);
    dx.row(i) = inv_sigma(i) * (dxhat.row(i).array() - mean_dy - xhat.row(i).array() * mean_dyx);
  }
  return dx;
}

template <typename S>
Mat<S> linear_forward(const Mat<S>& x, const LinearT<S>& lin) {
  return ((x * lin.w).rowwise() + lin.b).eval();
}

// Accumulates dW, db into grads (if non-null) and returns dx.
template <typename S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const LinearT<S>& lin, LinearT<S>* grads) {
  if (grads) {
    grads->w.noalias() += x.transpose() * dy;
    grads->b += dy.colwise().sum();
  }
  return (dy * lin.w.transpose()).eval();
}

// ---------------------------------------------------------------------------
// Transformer block

template <typename S>
struct BlockTape {
  bool skipped = false;
  Mat<S> in;            // T x D residual stream at entry
  RowVec<S> mod;        // 1 x 4D conditioning output [sa | ba | sm | bm]
  Mat<S> n1hat;         // layer norm output before attention
  ColVec<S> inv_sigma1;
  Mat<S> u1;            // modulated attention input
  Mat<S> qkv;           // T x 3D
  std::vector<Mat<S>> attn;  // per head, T x T softmax weights
  Mat<S> attn_concat;   // T x D heads concatenated (before output projection)
  Mat<S> h_mid;         // after attention residual
  Mat<S> n2hat;
  ColVec<S> inv_sigma2;
  Mat<S> u2;            // modulated MLP input
  Mat<S> mlp_pre;       // T x (mlp_ratio * D) pre-activation
};

template <typename S>
void softmax_rows_inplace(Mat<S>& x) {
  for (long i = 0; i < x.rows(); ++i) {
    S mx = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - mx).exp();
    x.row(i) /= x.row(i).sum();
  }
}

template <typename S>
Mat<S> block_forward(const Mat<S>& h_in, const BlockParamsT<S>& blk, const RowVec<S>& cond,
                     const ModelConfig& cfg, BlockTape<S>& tape) {
  const long T = h_in.rows();
  const int D = cfg.D, H = cfg.heads, dh = cfg.D / cfg.heads;
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  tape.in = h_in;
  tape.mod = cond * blk.mod.w + blk.mod.b;
  auto sa = tape.mod.segment(0, D);
  auto ba = tape.mod.segment(D, D);
  auto sm = tape.mod.segment(2 * D, D);
  auto bm = tape.mod.segment(3 * D, D);

  tape.n1hat = layer_norm_forward(h_in, tape.inv_sigma1);
  tape.u1 = ((tape.n1hat.array().rowwise() * (sa.array() + static_cast<S>(1))).rowwise() + ba.array()).matrix();

  tape.qkv = linear_forward(tape.u1, blk.qkv);
  tape.attn.assign(H, Mat<S>());
  tape.attn_concat.resize(T, D);
  for (int h = 0; h < H; ++h) {
    auto Q = tape.qkv.block(0, h * dh, T, dh);
    auto K = tape.qkv.block(0, D + h * dh, T, dh);
    auto Vv = tape.qkv.block(0, 2 * D + h * dh, T, dh);
    Mat<S> scores = (Q * K.transpose()) * inv_sqrt_dh;
    softmax_rows_inplace(scores);
    tape.attn[h] = std::move(scores);
    tape.attn_concat.block(0, h * dh, T, dh).noalias() = tape.attn[h] * Vv;
  }
  Mat<S> attn_out = linear_forward(tape.attn_concat, blk.attn_out);
  tape.h_mid = h_in + attn_out;

  tape.n2hat = layer_norm_forward(tape.h_mid, tape.inv_sigma2);
  tape.u2 = ((tape.n2hat.array().rowwise() * (sm.array() + static_cast<S>(1))).rowwise() + bm.array()).matrix();
  tape.mlp_pre = linear_forward(tape.u2, blk.mlp_in);
  Mat<S> act = tape.mlp_pre.unaryExpr([](S x) { return gelu_scalar(x); });
  Mat<S> mlp_out = linear_forward(act, blk.mlp_out);
  return tape.h_mid + mlp_out;
}

// Backward through one block. Accumulates parameter gradients into `grads`
// and the conditioning gradient into `dcond` when they are non-null; always
// returns the gradient w.r.t. the block input.
template <typename S>
Mat<S> block_backward(const Mat<S>& dh_out, const BlockParamsT<S>& blk, const RowVec<S>& cond,
                      const ModelConfig& cfg, const BlockTape<S>& tape, BlockParamsT<S>* grads,
                      RowVec<S>* dcond) {
  const long T = tape.in.rows();
  const int D = cfg.D, H = cfg.heads, dh = cfg.D / cfg.heads;
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  auto sa = tape.mod.segment(0, D);
  auto sm = tape.mod.segment(2 * D, D);
  RowVec<S> dmod = RowVec<S>::Zero(4 * D);

  // MLP branch: h_out = h_mid + mlp_out(u2).
  Mat<S> act = tape.mlp_pre.unaryExpr([](S x) { return gelu_scalar(x); });
  Mat<S> dact = linear_backward(dh_out, act, blk.mlp_out, grads ? &grads->mlp_out : nullptr);
  Mat<S> dpre =
      (dact.array() * tape.mlp_pre.unaryExpr([](S x) { return gelu_grad_scalar(x); }).array()).matrix();
  Mat<S> du2 = linear_backward(dpre, tape.u2, blk.mlp_in, grads ? &grads->mlp_in : nullptr);

  // Modulation of the second pre-norm.
  Mat<S> dn2 = (du2.array().rowwise() * (sm.array() + static_cast<S>(1))).matrix();
  dmod.segment(2 * D, D) = (du2.array() * tape.n2hat.array()).colwise().sum();
  dmod.segment(3 * D, D) = du2.colwise().sum();
  Mat<S> dh_mid = dh_out + layer_norm_backward(dn2, tape.n2hat, tape.inv_sigma2);

  // Attention branch: h_mid = in + attn_out(u1).
  Mat<S> dconcat = linear_backward(dh_mid, tape.attn_concat, blk.attn_out,
                                   grads ? &grads->attn_out : nullptr);
  Mat<S> dqkv = Mat<S>::Zero(T, 3 * D);
  for (int h = 0; h < H; ++h) {
    auto Q = tape.qkv.block(0, h * dh, T, dh);
    auto K = tape.qkv.block(0, D + h * dh, T, dh);
    auto Vv = tape.qkv.block(0, 2 * D + h * dh, T, dh);
    auto dO = dconcat.block(0, h * dh, T, dh);
    const Mat<S>& A = tape.attn[h];
    Mat<S> dA = dO * Vv.transpose();
    dqkv.block(0, 2 * D + h * dh, T, dh).noalias() = A.transpose() * dO;
    // Softmax backward per row.
    Mat<S> dS(T, T);
    for (long i = 0; i < T; ++i) {
      S dot = A.row(i).dot(dA.row(i));
      dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
    }
    dqkv.block(0, h * dh, T, dh).noalias() = dS * K * inv_sqrt_dh;
    dqkv.block(0, D + h * dh, T, dh).noalias() = dS.transpose() * Q * inv_sqrt_dh;
  }
  Mat<S> du1 = linear_backward(dqkv, tape.u1, blk.qkv, grads ? &grads->qkv : nullptr);

  // Modulation of the first pre-norm.
  Mat<S> dn1 = (du1.array().rowwise() * (sa.array() + static_cast<S>(1))).matrix();
  dmod.segment(0, D) = (du1.array() * tape.n1hat.array()).colwise().sum();
  dmod.segment(D, D) = du1.colwise().sum();
  Mat<S> dh_in = dh_mid + layer_norm_backward(dn1, tape.n1hat, tape.inv_sigma1);

  if (grads) {
    grads->mod.w.noalias() += cond.transpose() * dmod;
    grads->mod.b += dmod;
  }
  if (dcond) *dcond += dmod * blk.mod.w.transpose();
  return dh_in;
}

// ---------------------------------------------------------------------------
// Flow-step conditioning

template <typename S>
struct TimeTape {
  RowVec<S> sin_emb;  // sinusoidal embedding of t
  RowVec<S> pre1;     // time_in output, pre-activation
  RowVec<S> act1;
  RowVec<S> pre2;     // time_out output (pre final activation)
  RowVec<S> cond;     // silu(pre2), consumed by block modulations
};

template <typename S>
RowVec<S> sinusoidal_embedding(double t, int dim) {
  RowVec<S> emb(dim);
  const int half = dim / 2;
  const double scaled = t * 1000.0;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    emb(i) = static_cast<S>(std::cos(scaled * freq));
    emb(half + i) = static_cast<S>(std::sin(scaled * freq));
  }
  if (dim % 2 == 1) emb(dim - 1) = static_cast<S>(1);
  return emb;
}

template <typename S>
void time_forward(double t, const BaseParamsT<S>& p, TimeTape<S>& tape) {
  tape.sin_emb = sinusoidal_embedding<S>(t, p.cfg.D);
  tape.pre1 = tape.sin_emb * p.time_in.w + p.time_in.b;
  tape.act1 = tape.pre1.unaryExpr([](S x) { return silu_scalar(x); });
  tape.pre2 = tape.act1 * p.time_out.w + p.time_out.b;
  tape.cond = tape.pre2.unaryExpr([](S x) { return silu_scalar(x); });
}

template <typename S>
void time_backward(const RowVec<S>& dcond, const BaseParamsT<S>& p, const TimeTape<S>& tape,
                   BaseParamsT<S>& grads) {
  RowVec<S> dpre2 =
      (dcond.array() * tape.pre2.unaryExpr([](S x) { return silu_grad_scalar(x); }).array()).matrix();
  grads.time_out.w.noalias() += tape.act1.transpose() * dpre2;
  grads.time_out.b += dpre2;
  RowVec<S> dact1 = dpre2 * p.time_out.w.transpose();
  RowVec<S> dpre1 =
      (dact1.array() * tape.pre1.unaryExpr([](S x) { return silu_grad_scalar(x); }).array()).matrix();
  grads.time_in.w.noalias() += tape.sin_emb.transpose() * dpre1;
  grads.time_in.b += dpre1;
}

// ---------------------------------------------------------------------------
// Full base pipeline

template <typename S>
int token_at_frame(const std::vector<int>& tokens, int frame, const ModelConfig& cfg) {
  size_t idx = static_cast<size_t>(frame / cfg.L);
  return idx < tokens.size() ? tokens[idx] : cfg.filler_token();
}

// Per-frame concatenation [x_t | masked | token embedding], T x 3F rows.
template <typename S>
Mat<S> assemble_rows(const Mat<S>& x_t, const Mat<S>& masked, const std::vector<int>& tokens,
                     const BaseParamsT<S>& p, std::vector<int>* frame_tokens_out) {
  const ModelConfig& c = p.cfg;
  if (x_t.rows() != c.F || masked.rows() != c.F || x_t.cols() != masked.cols()) {
    throw std::invalid_argument("assemble: feature shape mismatch");
  }
  const int T = static_cast<int>(x_t.cols());
  if (T > c.max_T) throw std::invalid_argument("assemble: frame count exceeds max_T");
  // Shorter token sequences are padded with the filler id frame-wise.
  if (static_cast<int>(tokens.size()) * c.L > T) {
    throw std::invalid_argument("assemble: token sequence longer than frame span");
  }
  for (int tok : tokens) {
    if (tok < 0 || tok > c.V) throw std::invalid_argument("assemble: token id out of range");
  }
  Mat<S> rows(T, 3 * c.F);
  if (frame_tokens_out) frame_tokens_out->resize(T);
  for (int t = 0; t < T; ++t) {
    int tok = token_at_frame<S>(tokens, t, c);
    if (frame_tokens_out) (*frame_tokens_out)[t] = tok;
    rows.row(t).segment(0, c.F) = x_t.col(t).transpose();
    rows.row(t).segment(c.F, c.F) = masked.col(t).transpose();
    rows.row(t).segment(2 * c.F, c.F) = p.tok_emb.row(tok);
  }
  return rows;
}

// Spec-level operation: concatenate and project to the model width.
template <typename S>
Mat<S> assemble_input(const Mat<S>& x_t, const Mat<S>& masked, const std::vector<int>& tokens,
                      const BaseParamsT<S>& p) {
  return linear_forward(assemble_rows(x_t, masked, tokens, p, nullptr), p.input_proj);
}

template <typename S>
struct BaseTape {
  Mat<S> input_rows;             // T x 3F
  std::vector<int> frame_tokens;
  TimeTape<S> time;
  std::vector<BlockTape<S>> blocks;
  std::vector<bool> has_injection;
  Mat<S> final_nhat;
  ColVec<S> final_inv_sigma;
  std::vector<Mat<S>> block_outputs;  // residual stream after each block (and injection)
  Mat<S> field;                       // F x T
};

inline std::vector<bool> skip_flags(const std::vector<int>& skip_set, int B) {
  std::vector<bool> skip(B, false);
  for (int k : skip_set) {
    if (k < 0 || k >= B) throw std::invalid_argument("skip set: block index out of range");
    skip[k] = true;
  }
  return skip;
}

// Runs blocks and head over an already-projected hidden sequence.
// `injections`, when non-null, holds one T x D additive term per block (empty
// matrices mean none); injection k is added to block k's output.
template <typename S>
void forward_from_hidden(const Mat<S>& h0, double t, const BaseParamsT<S>& p,
                         const std::vector<int>& skip_set, const std::vector<Mat<S>>* injections,
                         BaseTape<S>& tape) {
  const ModelConfig& c = p.cfg;
  if (injections && static_cast<int>(injections->size()) != c.B) {
    throw std::invalid_argument("forward: injection list size must equal block count");
  }
  std::vector<bool> skip = skip_flags(skip_set, c.B);
  time_forward(t, p, tape.time);
  tape.blocks.assign(c.B, BlockTape<S>());
  tape.has_injection.assign(c.B, false);
  tape.block_outputs.assign(c.B, Mat<S>());

  Mat<S> h = h0;
  for (int k = 0; k < c.B; ++k) {
    if (skip[k]) {
      tape.blocks[k].skipped = true;
    } else {
      h = block_forward(h, p.blocks[k], tape.time.cond, c, tape.blocks[k]);
    }
    if (injections && (*injections)[k].size() != 0) {
      if ((*injections)[k].rows() != h.rows() || (*injections)[k].cols() != h.cols()) {
        throw std::invalid_argument("forward: injection shape mismatch");
      }
      h += (*injections)[k];
      tape.has_injection[k] = true;
    }
    tape.block_outputs[k] = h;
  }
  tape.final_nhat = layer_norm_forward(h, tape.final_inv_sigma);
  Mat<S> field_rows = linear_forward(tape.final_nhat, p.out_head);
  tape.field = field_rows.transpose();
}

// Full forward pass from raw inputs; records the tape needed by backward.
template <typename S>
const Mat<S>& forward_base(const Mat<S>& x_t, const Mat<S>& masked, const std::vector<int>& tokens,
                           double t, const BaseParamsT<S>& p, const std::vector<int>& skip_set,
                           BaseTape<S>& tape, const std::vector<Mat<S>>* injections = nullptr) {
  tape.input_rows = assemble_rows(x_t, masked, tokens, p, &tape.frame_tokens);
  Mat<S> h0 = linear_forward(tape.input_rows, p.input_proj);
  forward_from_hidden(h0, t, p, skip_set, injections, tape);
  return tape.field;
}

// Backward through the recorded forward. Accumulates into `grads` when
// non-null; when `dinjections` is non-null it receives the gradient w.r.t.
// each provided injection (empty matrices elsewhere).
template <typename S>
void backward_base(const BaseTape<S>& tape, const Mat<S>& dfield, const BaseParamsT<S>& p,
                   BaseParamsT<S>* grads, std::vector<Mat<S>>* dinjections = nullptr) {
  const ModelConfig& c = p.cfg;
  Mat<S> dfield_rows = dfield.transpose();
  Mat<S> dnf;
  {
    // Head: field_rows = LN(h_B) * Wout + bout.
    dnf = linear_backward(dfield_rows, tape.final_nhat, p.out_head,
                          grads ? &grads->out_head : nullptr);
  }
  Mat<S> dh = layer_norm_backward(dnf, tape.final_nhat, tape.final_inv_sigma);

  RowVec<S> dcond = RowVec<S>::Zero(c.D);
  if (dinjections) dinjections->assign(c.B, Mat<S>());
  for (int k = c.B - 1; k >= 0; --k) {
    if (tape.has_injection[k] && dinjections) (*dinjections)[k] = dh;
    if (!tape.blocks[k].skipped) {
      dh = block_backward(dh, p.blocks[k], tape.time.cond, c, tape.blocks[k],
                          grads ? &grads->blocks[k] : nullptr, grads ? &dcond : nullptr);
    }
  }
  if (!grads) return;

  time_backward(dcond, p, tape.time, *grads);
  Mat<S> dinput_rows = linear_backward(dh, tape.input_rows, p.input_proj, &grads->input_proj);
  for (long t = 0; t < dinput_rows.rows(); ++t) {
    grads->tok_emb.row(tape.frame_tokens[t]) += dinput_rows.row(t).segment(2 * c.F, c.F);
  }
}

}  // namespace flowctl
