#include "flowctl/flow.hpp"

#include <cmath>

namespace flowctl {

namespace {

void check_finite(const Matf& x, int step_index) {
  if (!x.allFinite()) {
    throw std::runtime_error("integrate_ode: non-finite field at step " + std::to_string(step_index));
  }
}

}  // namespace

Matf integrate_ode(const FieldFn& field_fn, const Matf& x0, const SampleSchedule& schedule) {
  if (schedule.nfe < 1) throw std::invalid_argument("integrate_ode: nfe must be >= 1");
  Matf x = x0;
  const double h = 1.0 / schedule.nfe;
  for (int i = 0; i < schedule.nfe; ++i) {
    const double t = static_cast<double>(i) / schedule.nfe;
    const double lambda = t < schedule.interval.hi ? schedule.lambda : 0.0;
    Matf field = field_fn(x, t, lambda);
    check_finite(field, i);
    x += static_cast<float>(h) * field;
  }
  return x;
}

Matf partial_resample(const Matf& x1, double t_start, const FieldFn& field_fn, int nfe_total,
                      Rng& rng) {
  if (t_start < 0.0 || t_start > 1.0) throw std::invalid_argument("partial_resample: t_start outside [0, 1]");
  if (nfe_total < 1) throw std::invalid_argument("partial_resample: nfe must be >= 1");
  if (t_start == 1.0) return x1;

  Matf x0 = gaussian_matrix(static_cast<int>(x1.rows()), static_cast<int>(x1.cols()), rng);
  Matf x = interpolate_flow<float>(x0, x1, t_start);

  // Breakpoints: t_start, then every grid point i/nfe above it, then 1.
  std::vector<double> ts;
  ts.push_back(t_start);
  for (int i = 0; i < nfe_total; ++i) {
    double t = static_cast<double>(i) / nfe_total;
    if (t > t_start) ts.push_back(t);
  }
  ts.push_back(1.0);
  for (size_t i = 0; i + 1 < ts.size(); ++i) {
    Matf field = field_fn(x, ts[i], 0.0);
    check_finite(field, static_cast<int>(i));
    x += static_cast<float>(ts[i + 1] - ts[i]) * field;
  }
  return x;
}

}  // namespace flowctl
