#pragma once

// The trainable control branch: copies of selected base blocks driven by an
// emotion-conditioned input path, joined to the frozen base through
// zero-initialized per-frame projections, masked blending and a control scale.
//
// The branch is self-contained: the copied blocks run sequentially on their
// own stream (in ascending selected order), and after each copied block a
// zero-initialized D -> D projection emits the feature injected into the
// corresponding base block's output. Because those projections start as the
// zero map, a freshly initialized branch leaves the base field bit-identical.

#include "flowctl/model.hpp"
#include "flowctl/synthdata.hpp"

namespace flowctl {

constexpr int kEmotionChannels = 2;

struct CtrlConfig {
  std::vector<int> blocks;        // selected base block indices, sorted ascending
  double t_emo = 0.3;             // control applies for flow steps t < t_emo
  double lambda_default = 1.0;
  int emo_window = 8;             // sliding window for conditioning tracks

  void validate(int B) const {
    if (blocks.empty()) throw std::invalid_argument("ctrl config: empty block selection");
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i] < 0 || blocks[i] >= B) throw std::invalid_argument("ctrl config: block index out of range");
      if (i > 0 && blocks[i] <= blocks[i - 1]) {
        throw std::invalid_argument("ctrl config: blocks must be sorted ascending and unique");
      }
    }
    if (!(t_emo > 0.0 && t_emo <= 1.0)) throw std::invalid_argument("ctrl config: t_emo outside (0, 1]");
    if (lambda_default < 0.0) throw std::invalid_argument("ctrl config: negative lambda");
    if (emo_window < 1) throw std::invalid_argument("ctrl config: emo_window must be >= 1");
  }

  static std::vector<int> all_blocks(int B) {
    std::vector<int> s(B);
    for (int i = 0; i < B; ++i) s[i] = i;
    return s;
  }
};

template <typename S>
struct CtrlParamsT {
  CtrlConfig cfg;
  ModelConfig model_cfg;
  LinearT<S> emo_proj;                   // 2 -> 3F, small random
  LinearT<S> input_proj;                 // 3F -> D, copied from the base
  std::vector<BlockParamsT<S>> blocks;   // copies of the selected base blocks
  std::vector<LinearT<S>> zero_proj;     // one D -> D zero-initialized map per selected block
};

using CtrlParams = CtrlParamsT<float>;

template <typename S>
std::vector<TensorView<S>> tensor_views(CtrlParamsT<S>& p) {
  std::vector<TensorView<S>> out;
  push_view(out, "emo_proj.w", p.emo_proj.w);
  push_view(out, "emo_proj.b", p.emo_proj.b);
  push_view(out, "ctrl_input_proj.w", p.input_proj.w);
  push_view(out, "ctrl_input_proj.b", p.input_proj.b);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string tag = std::to_string(p.cfg.blocks[i]);
    append_block_views(out, "ctrl_block" + tag, p.blocks[i]);
    push_view(out, "zero_proj" + tag + ".w", p.zero_proj[i].w);
    push_view(out, "zero_proj" + tag + ".b", p.zero_proj[i].b);
  }
  return out;
}

// Copies the selected base blocks and input projection bit-exactly, zeroes the
// output projections, and draws a small random emotion projection.
template <typename S>
CtrlParamsT<S> init_ctrlnet_t(const BaseParamsT<S>& base, const CtrlConfig& cfg, uint64_t seed) {
  cfg.validate(base.cfg.B);
  CtrlParamsT<S> p;
  p.cfg = cfg;
  p.model_cfg = base.cfg;
  p.input_proj = base.input_proj;
  p.blocks.reserve(cfg.blocks.size());
  p.zero_proj.resize(cfg.blocks.size());
  for (size_t i = 0; i < cfg.blocks.size(); ++i) {
    p.blocks.push_back(base.blocks[cfg.blocks[i]]);
    p.zero_proj[i].resize(base.cfg.D, base.cfg.D);
    p.zero_proj[i].w.setZero();
    p.zero_proj[i].b.setZero();
  }
  p.emo_proj.resize(kEmotionChannels, 3 * base.cfg.F);
  Rng rng(derive_seed(seed, 0x6374726cull));
  for (long r = 0; r < p.emo_proj.w.rows(); ++r) {
    for (long c = 0; c < p.emo_proj.w.cols(); ++c) {
      p.emo_proj.w(r, c) = static_cast<S>(rng.normal() * 0.1);
    }
  }
  p.emo_proj.b.setZero();
  return p;
}

inline CtrlParams init_ctrlnet(const BaseParams& base, const CtrlConfig& cfg, uint64_t seed) {
  return init_ctrlnet_t<float>(base, cfg, seed);
}

template <typename Dst, typename Src>
CtrlParamsT<Dst> convert_ctrl(const CtrlParamsT<Src>& p, const BaseParamsT<Dst>& base) {
  CtrlParamsT<Dst> out = init_ctrlnet_t<Dst>(base, p.cfg, 0);
  auto src = tensor_views(const_cast<CtrlParamsT<Src>&>(p));
  auto dst = tensor_views(out);
  for (size_t i = 0; i < src.size(); ++i) {
    for (long j = 0; j < src[i].size(); ++j) dst[i].data[j] = static_cast<Dst>(src[i].data[j]);
  }
  return out;
}

// Masked, scaled block blending: Z_new = base_out + lambda * (m ⊙ ctrl).
template <typename S>
Mat<S> blend(const Mat<S>& base_out, const Mat<S>& ctrl_feature, const TemporalMask& mask,
             double lambda) {
  if (base_out.rows() != ctrl_feature.rows() || base_out.cols() != ctrl_feature.cols() ||
      mask.size() != base_out.rows()) {
    throw std::invalid_argument("blend: shape mismatch");
  }
  Mat<S> out = base_out;
  for (long t = 0; t < out.rows(); ++t) {
    if (mask(t) == 0.f) continue;
    out.row(t) += static_cast<S>(lambda) * ctrl_feature.row(t);
  }
  return out;
}

// Per-frame injection term lambda * (m ⊙ z), rows are frames.
template <typename S>
Mat<S> masked_scaled(const Mat<S>& z, const TemporalMask& mask, double lambda) {
  Mat<S> out(z.rows(), z.cols());
  for (long t = 0; t < z.rows(); ++t) {
    out.row(t) = mask(t) == 0.f ? RowVec<S>::Zero(z.cols()) : (z.row(t) * static_cast<S>(lambda)).eval();
  }
  return out;
}

template <typename S>
struct CtrlTape {
  Mat<S> emo_rows;                // T x 2 emotion input
  Mat<S> input_rows;              // T x 3F, base concatenation plus projected emotion
  std::vector<BlockTape<S>> blocks;
  std::vector<Mat<S>> stream;     // h after each copied block (zero-projection inputs)
  std::vector<Mat<S>> features;   // zero-projection outputs, one per selected block
};

// Runs the control stream. `base_rows` is the base concatenation (T x 3F),
// `cond` the base flow-step conditioning vector; both come from the frozen
// base and receive no gradient here.
template <typename S>
void forward_ctrl_rows(const Mat<S>& base_rows, const RowVec<S>& cond, const EmotionTrack& emotion,
                       const BaseParamsT<S>& base, const CtrlParamsT<S>& ctrl, CtrlTape<S>& tape) {
  const ModelConfig& c = base.cfg;
  if (emotion.rows() != kEmotionChannels || emotion.cols() != base_rows.rows()) {
    throw std::invalid_argument("forward_ctrl: emotion track length mismatch");
  }
  tape.emo_rows = emotion.transpose().template cast<S>();
  tape.input_rows = base_rows + linear_forward(tape.emo_rows, ctrl.emo_proj);
  Mat<S> h = linear_forward(tape.input_rows, ctrl.input_proj);
  tape.blocks.assign(ctrl.blocks.size(), BlockTape<S>());
  tape.stream.assign(ctrl.blocks.size(), Mat<S>());
  tape.features.assign(ctrl.blocks.size(), Mat<S>());
  for (size_t i = 0; i < ctrl.blocks.size(); ++i) {
    h = block_forward(h, ctrl.blocks[i], cond, c, tape.blocks[i]);
    tape.stream[i] = h;
    tape.features[i] = linear_forward(h, ctrl.zero_proj[i]);
  }
}

// Spec-level operation: control features per selected block from raw inputs.
template <typename S>
std::vector<Mat<S>> forward_ctrl(const Mat<S>& x_t, const Mat<S>& masked,
                                 const std::vector<int>& tokens, const EmotionTrack& emotion,
                                 double t, const BaseParamsT<S>& base, const CtrlParamsT<S>& ctrl) {
  Mat<S> rows = assemble_rows(x_t, masked, tokens, base, nullptr);
  TimeTape<S> tt;
  time_forward(t, base, tt);
  CtrlTape<S> tape;
  forward_ctrl_rows(rows, tt.cond, emotion, base, ctrl, tape);
  return tape.features;
}

template <typename S>
struct JointTape {
  BaseTape<S> base;
  CtrlTape<S> ctrl;
  std::vector<Mat<S>> injections;  // per base block; empty when control inactive
  double lambda_eff = 0.0;
  bool ctrl_active = false;
};

// Combined field. The effective control scale is the caller's lambda for
// t < t_emo and zero otherwise; the gate lives here so no caller can apply
// control outside the trained interval. With lambda_eff = 0 the control
// stream is not evaluated at all and the result is the base field bit-exact.
template <typename S>
const Mat<S>& forward_joint(const Mat<S>& x_t, const Mat<S>& masked, const std::vector<int>& tokens,
                            const EmotionTrack& emotion, double t, const BaseParamsT<S>& base,
                            const CtrlParamsT<S>& ctrl, const TemporalMask& mask, double lambda,
                            JointTape<S>& tape) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("forward_joint: t outside [0, 1]");
  if (mask.size() != x_t.cols()) throw std::invalid_argument("forward_joint: mask length mismatch");
  tape.lambda_eff = t < ctrl.cfg.t_emo ? lambda : 0.0;
  tape.ctrl_active = tape.lambda_eff != 0.0;

  if (!tape.ctrl_active) {
    forward_base(x_t, masked, tokens, t, base, {}, tape.base);
    return tape.base.field;
  }

  tape.base.input_rows = assemble_rows(x_t, masked, tokens, base, &tape.base.frame_tokens);
  time_forward(t, base, tape.base.time);
  forward_ctrl_rows(tape.base.input_rows, tape.base.time.cond, emotion, base, ctrl, tape.ctrl);

  tape.injections.assign(base.cfg.B, Mat<S>());
  for (size_t i = 0; i < ctrl.cfg.blocks.size(); ++i) {
    tape.injections[ctrl.cfg.blocks[i]] = masked_scaled(tape.ctrl.features[i], mask, tape.lambda_eff);
  }
  Mat<S> h0 = linear_forward(tape.base.input_rows, base.input_proj);
  forward_from_hidden(h0, t, base, {}, &tape.injections, tape.base);
  return tape.base.field;
}

// Backward through the joint forward. Control gradients accumulate into
// `ctrl_grads`; base gradients only into `base_grads` when non-null (training
// the control branch passes nullptr, which is what keeps the base frozen).
template <typename S>
void backward_joint(const JointTape<S>& tape, const Mat<S>& dfield, const BaseParamsT<S>& base,
                    const CtrlParamsT<S>& ctrl, const TemporalMask& mask,
                    CtrlParamsT<S>* ctrl_grads, BaseParamsT<S>* base_grads = nullptr) {
  if (!tape.ctrl_active) {
    backward_base(tape.base, dfield, base, base_grads);
    return;
  }
  std::vector<Mat<S>> dinj;
  backward_base(tape.base, dfield, base, base_grads, &dinj);
  if (!ctrl_grads) return;

  const ModelConfig& c = base.cfg;
  RowVec<S> dcond_sink = RowVec<S>::Zero(c.D);  // frozen time path; discarded
  Mat<S> dh = Mat<S>::Zero(tape.base.input_rows.rows(), c.D);
  for (int i = static_cast<int>(ctrl.cfg.blocks.size()) - 1; i >= 0; --i) {
    int k = ctrl.cfg.blocks[i];
    // inj_k = lambda * (m ⊙ z_i) and z_i = zero_proj_i(stream_i).
    Mat<S> dz = masked_scaled(dinj[k], mask, tape.lambda_eff);
    dh += linear_backward(dz, tape.ctrl.stream[i], ctrl.zero_proj[i], &ctrl_grads->zero_proj[i]);
    dh = block_backward(dh, ctrl.blocks[i], tape.base.time.cond, c, tape.ctrl.blocks[i],
                        &ctrl_grads->blocks[i], &dcond_sink);
  }
  Mat<S> dinput_rows = linear_backward(dh, tape.ctrl.input_rows, ctrl.input_proj,
                                       &ctrl_grads->input_proj);
  // input_rows = base_rows + emo_rows * Wemo + bemo; only the emotion path is
  // trainable here.
  ctrl_grads->emo_proj.w.noalias() += tape.ctrl.emo_rows.transpose() * dinput_rows;
  ctrl_grads->emo_proj.b += dinput_rows.colwise().sum();
}

}  // namespace flowctl
