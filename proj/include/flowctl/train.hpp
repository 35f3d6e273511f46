#pragma once

// Two-phase training: base pretraining on the masked infilling objective over
// t in [0, 1], then control-branch training over t in [0, t_emo] with the
// base bit-frozen. Gradients are accumulated per sample into fixed-size
// chunks that are reduced in index order, so results are independent of the
// number of worker threads.

#include "flowctl/ctrlnet.hpp"
#include "flowctl/flow.hpp"
#include "flowctl/model.hpp"
#include "flowctl/synthdata.hpp"

#include <functional>

namespace flowctl {

struct TrainConfig {
  enum class Phase { base, ctrlnet };

  Phase phase = Phase::base;
  int steps = 1;
  int batch_frames = 2048;      // frame budget per optimizer step
  double learning_rate = 1e-3;  // desk scale; full-scale reference is 1e-5
  FlowStepInterval flow_interval{0.0, 1.0};
  uint64_t seed = 1;
  int log_every = 50;
  double mask_ratio_lo = 0.7;
  double mask_ratio_hi = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int threads = 0;  // <= 0: hardware default

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
    if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (batch_frames < 1) throw std::invalid_argument("train config: batch_frames must be >= 1");
    if (log_every < 1) throw std::invalid_argument("train config: log_every must be >= 1");
    flow_interval.validate();
  }
};

struct TrainLog {
  struct Record {
    int step;
    double loss;
    double wall_ms;  // cumulative wall time at this step
  };
  std::vector<Record> records;

  std::string to_csv() const;
};

// ---------------------------------------------------------------------------
// Adam over tensor views (shared by both phases)

template <typename S>
void adam_update(std::vector<TensorView<S>>& params, const std::vector<TensorView<S>>& grads,
                 std::vector<TensorView<S>>& m, std::vector<TensorView<S>>& v,
                 const TrainConfig& cfg, int step_one_based) {
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, step_one_based);
  const double bc2 = 1.0 - std::pow(b2, step_one_based);
  for (size_t i = 0; i < params.size(); ++i) {
    S* p = params[i].data;
    const S* g = grads[i].data;
    S* mi = m[i].data;
    S* vi = v[i].data;
    const long n = params[i].size();
    for (long j = 0; j < n; ++j) {
      double gj = static_cast<double>(g[j]);
      double mj = b1 * static_cast<double>(mi[j]) + (1.0 - b1) * gj;
      double vj = b2 * static_cast<double>(vi[j]) + (1.0 - b2) * gj * gj;
      mi[j] = static_cast<S>(mj);
      vi[j] = static_cast<S>(vj);
      p[j] -= static_cast<S>(cfg.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Per-sample objective (templated so gradient checking can run it in double)

// Infilling CFM loss for one sample through the base network. Accumulates
// parameter gradients when `grads` is non-null.
template <typename S>
double base_sample_loss(const Mat<S>& x1, const std::vector<int>& tokens, const TemporalMask& mask,
                        double t, const Mat<S>& x0, const BaseParamsT<S>& params,
                        BaseParamsT<S>* grads) {
  Mat<S> x_t = interpolate_flow<S>(x0, x1, t);
  Mat<S> masked_in = x1;
  for (long c = 0; c < masked_in.cols(); ++c) {
    if (mask(c) != 0.f) masked_in.col(c).setZero();
  }
  BaseTape<S> tape;
  forward_base(x_t, masked_in, tokens, t, params, {}, tape);
  Mat<S> target = cfm_target<S>(x0, x1);
  double loss = cfm_loss<S>(tape.field, target, mask);
  if (grads) {
    Mat<S> dfield = cfm_loss_grad<S>(tape.field, target, mask);
    backward_base(tape, dfield, params, grads);
  }
  return loss;
}

// Same objective through the combined model with control scale 1; gradients
// flow only into the control parameters.
template <typename S>
double ctrl_sample_loss(const Mat<S>& x1, const std::vector<int>& tokens,
                        const EmotionTrack& emotion, const TemporalMask& mask, double t,
                        const Mat<S>& x0, const BaseParamsT<S>& base, const CtrlParamsT<S>& ctrl,
                        CtrlParamsT<S>* grads) {
  Mat<S> x_t = interpolate_flow<S>(x0, x1, t);
  Mat<S> masked_in = x1;
  for (long c = 0; c < masked_in.cols(); ++c) {
    if (mask(c) != 0.f) masked_in.col(c).setZero();
  }
  JointTape<S> tape;
  forward_joint(x_t, masked_in, tokens, emotion, t, base, ctrl, mask, 1.0, tape);
  Mat<S> target = cfm_target<S>(x0, x1);
  double loss = cfm_loss<S>(tape.base.field, target, mask);
  if (grads) {
    Mat<S> dfield = cfm_loss_grad<S>(tape.base.field, target, mask);
    backward_joint(tape, dfield, base, ctrl, mask, grads);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Drivers

struct PretrainResult {
  BaseParams params;
  TrainLog log;
};

PretrainResult pretrain_base(const std::vector<SynthUtterance>& dataset, const TrainConfig& cfg,
                             const ModelConfig& model_cfg);

struct CtrlTrainResult {
  CtrlParams params;
  TrainLog log;
};

// Emotion conditioning tracks are extracted from the (possibly noisy) dataset
// features with the configured window before training starts. Throws if any
// base tensor changes during the run.
CtrlTrainResult train_ctrlnet(const std::vector<SynthUtterance>& dataset, const BaseParams& base,
                              const CtrlConfig& ctrl_cfg, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification

// Compares analytic gradients against central differences at `trials`
// randomly selected scalar parameters; returns the maximum relative error
// |analytic - numeric| / max(|numeric|, 1e-8).
template <typename S>
double grad_check(std::vector<TensorView<S>> params, std::vector<TensorView<S>> grads,
                  const std::function<double()>& loss_fn, const std::function<void()>& grad_fn,
                  double eps, int trials, Rng& rng) {
  for (auto& g : grads) std::fill(g.data, g.data + g.size(), static_cast<S>(0));
  grad_fn();

  long total = 0;
  for (const auto& p : params) total += p.size();
  double max_rel = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    long pick = static_cast<long>(rng.uniform() * static_cast<double>(total));
    if (pick >= total) pick = total - 1;
    size_t ti = 0;
    while (pick >= params[ti].size()) {
      pick -= params[ti].size();
      ++ti;
    }
    S* slot = params[ti].data + pick;
    const S saved = *slot;
    *slot = saved + static_cast<S>(eps);
    double lp = loss_fn();
    *slot = saved - static_cast<S>(eps);
    double lm = loss_fn();
    *slot = saved;
    double numeric = (lp - lm) / (2.0 * eps);
    double analytic = static_cast<double>(grads[ti].data[pick]);
    double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace flowctl
