#pragma once

// Conditional flow-matching primitives: straight-line interpolation paths,
// the (x1 - x0) target field, the masked squared-error objective, restricted
// flow-step sampling, contiguous temporal masks, and an explicit-Euler ODE
// sampler with a control-application interval.

#include "flowctl/common.hpp"
#include "flowctl/synthdata.hpp"

#include <functional>

namespace flowctl {

struct FlowStepInterval {
  double lo = 0.0;
  double hi = 1.0;

  void validate() const {
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
      throw std::invalid_argument("flow step interval must satisfy 0 <= lo < hi <= 1");
    }
  }
};

struct SampleSchedule {
  int nfe = 32;
  double lambda = 0.0;
  FlowStepInterval interval{0.0, 1.0};  // control is applied for t < interval.hi
};

template <typename S>
Mat<S> interpolate_flow(const Mat<S>& x0, const Mat<S>& x1, double t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) {
    throw std::invalid_argument("interpolate_flow: shape mismatch");
  }
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate_flow: t outside [0, 1]");
  return (x0 * static_cast<S>(1.0 - t) + x1 * static_cast<S>(t)).eval();
}

template <typename S>
Mat<S> cfm_target(const Mat<S>& x0, const Mat<S>& x1) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) {
    throw std::invalid_argument("cfm_target: shape mismatch");
  }
  return x1 - x0;
}

// Mean squared error over entries in masked (m = 1) frames only.
template <typename S>
double cfm_loss(const Mat<S>& pred, const Mat<S>& target, const TemporalMask& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || mask.size() != pred.cols()) {
    throw std::invalid_argument("cfm_loss: shape mismatch");
  }
  double sum = 0.0;
  long active = 0;
  for (long t = 0; t < pred.cols(); ++t) {
    if (mask(t) == 0.f) continue;
    ++active;
    for (long f = 0; f < pred.rows(); ++f) {
      double e = static_cast<double>(pred(f, t)) - static_cast<double>(target(f, t));
      sum += e * e;
    }
  }
  if (active == 0) throw std::invalid_argument("cfm_loss: empty mask");
  return sum / (static_cast<double>(active) * static_cast<double>(pred.rows()));
}

// d(cfm_loss)/d(pred); zero outside the mask.
template <typename S>
Mat<S> cfm_loss_grad(const Mat<S>& pred, const Mat<S>& target, const TemporalMask& mask) {
  long active = 0;
  for (long t = 0; t < mask.size(); ++t)
    if (mask(t) != 0.f) ++active;
  if (active == 0) throw std::invalid_argument("cfm_loss_grad: empty mask");
  const S scale = static_cast<S>(2.0 / (static_cast<double>(active) * static_cast<double>(pred.rows())));
  Mat<S> g = Mat<S>::Zero(pred.rows(), pred.cols());
  for (long t = 0; t < pred.cols(); ++t) {
    if (mask(t) == 0.f) continue;
    g.col(t) = (pred.col(t) - target.col(t)) * scale;
  }
  return g;
}

inline double sample_flowstep(const FlowStepInterval& interval, Rng& rng) {
  interval.validate();
  return rng.uniform(interval.lo, interval.hi);
}

// Contiguous span of ceil(r * T) frames set to 1, r uniform in [ratio_lo,
// ratio_hi], at a uniform random start.
inline TemporalMask sample_mask(int T, Rng& rng, double ratio_lo = 0.7, double ratio_hi = 1.0) {
  if (T < 2) throw std::invalid_argument("sample_mask: need T >= 2");
  if (!(ratio_lo > 0.0 && ratio_lo <= ratio_hi && ratio_hi <= 1.0)) {
    throw std::invalid_argument("sample_mask: bad ratio range");
  }
  double r = rng.uniform(ratio_lo, ratio_hi);
  int len = static_cast<int>(std::ceil(r * T));
  len = std::min(std::max(len, 1), T);
  int start = rng.uniform_int(T - len + 1);
  TemporalMask m = TemporalMask::Zero(T);
  m.segment(start, len).setOnes();
  return m;
}

// field_fn(x, t, lambda) -> predicted field. The schedule's lambda is passed
// for t < interval.hi and 0 otherwise; the joint model applies the same gate
// internally, so the double gating is idempotent.
using FieldFn = std::function<Matf(const Matf&, double, double)>;

Matf integrate_ode(const FieldFn& field_fn, const Matf& x0, const SampleSchedule& schedule);

// Draws x0 ~ N(0, I), forms x_t = (1-t_start) x0 + t_start x1 and integrates
// the remaining uniform grid of [t_start, 1]. t_start = 1 returns x1 bit-exact.
Matf partial_resample(const Matf& x1, double t_start, const FieldFn& field_fn, int nfe_total,
                      Rng& rng);

inline Matf gaussian_matrix(int rows, int cols, Rng& rng) {
  Matf x(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) x(r, c) = static_cast<float>(rng.normal());
  }
  return x;
}

}  // namespace flowctl
