#pragma once

#include <iosfwd>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/tensor.hpp"

namespace maskdiff {

/// Per-timestep diffusion coefficients over 0-based steps [0, T).
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_variance;

  static constexpr double kMaxBeta = 0.999;

  // Builds alpha, alpha_bar (cumulative product) and posterior variances from
  // betas. Throws if any beta is outside (0, kMaxBeta].
  static NoiseSchedule from_betas(std::vector<double> betas);

  void write_table(std::ostream& os) const;
};

// Cosine schedule: alpha_bar target f(t+1)/f(0) with
// f(u) = cos^2(((u/T + s) / (1 + s)) * pi/2). Betas are clipped to 0.999 and
// alpha_bar is recomputed as the cumulative product of the clipped alphas.
NoiseSchedule cosine_schedule(int steps, double offset = 0.008);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
Tensor forward_marginal(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// One Markov step q(x_t | x_{t-1}): sqrt(alpha_t) * x_prev + sqrt(beta_t) * noise.
Tensor forward_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched);

// Ancestral reverse step: mean from the predicted noise plus sqrt(posterior
// variance) * z, with z = 0 at t = 0.
Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      RngStream& rng);

}  // namespace maskdiff
