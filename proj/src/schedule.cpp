#include "maskdiff/schedule.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace maskdiff {

namespace {

void check_step(const NoiseSchedule& sched, int t) {
  if (t < 0 || t >= sched.steps) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(sched.steps) + ")");
  }
}

}  // namespace

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("noise schedule needs at least one step");
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  s.beta = std::move(betas);
  s.alpha.resize(s.beta.size());
  s.alpha_bar.resize(s.beta.size());
  s.posterior_variance.resize(s.beta.size());
  double prev = 1.0;
  for (size_t t = 0; t < s.beta.size(); ++t) {
    const double b = s.beta[t];
    if (!(b > 0.0 && b <= kMaxBeta)) {
      throw std::invalid_argument("beta[" + std::to_string(t) + "] = " + std::to_string(b) +
                                  " outside (0, 0.999]");
    }
    s.alpha[t] = 1.0 - b;
    s.alpha_bar[t] = prev * s.alpha[t];
    s.posterior_variance[t] = b * (1.0 - prev) / (1.0 - s.alpha_bar[t]);
    prev = s.alpha_bar[t];
  }
  return s;
}

void NoiseSchedule::write_table(std::ostream& os) const {
  os << "t\tbeta\talpha_bar\tposterior_variance\n";
  os << std::setprecision(17);
  for (int t = 0; t < steps; ++t) {
    os << t << '\t' << beta[t] << '\t' << alpha_bar[t] << '\t' << posterior_variance[t] << '\n';
  }
}

NoiseSchedule cosine_schedule(int steps, double offset) {
  if (steps < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
  if (!(offset > 0.0)) throw std::invalid_argument("cosine_schedule: offset s must be > 0");
  const auto f = [&](double u) {
    const double c = std::cos(((u / steps + offset) / (1.0 + offset)) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> betas(static_cast<size_t>(steps));
  double prev = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double target = f(t + 1.0) / f0;
    double b = 1.0 - target / prev;
    b = std::min(b, NoiseSchedule::kMaxBeta);
    // Rounding can yield a zero step at machine precision.
    if (!(b > 0.0)) b = 1e-12;
    betas[static_cast<size_t>(t)] = b;
    prev = target;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

Tensor forward_marginal(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  check_step(sched, t);
  if (x0.shape() != eps.shape()) {
    throw std::invalid_argument("forward_marginal: x0 " + shape_str(x0.shape()) + " vs eps " +
                                shape_str(eps.shape()));
  }
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  auto xs = x0.data(), es = eps.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * xs[i] + b * es[i]);
  return Tensor::from_data(x0.shape(), std::move(out));
}

Tensor forward_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched) {
  check_step(sched, t);
  if (x_prev.shape() != noise.shape()) {
    throw std::invalid_argument("forward_step: shape mismatch " + shape_str(x_prev.shape()) + " vs " +
                                shape_str(noise.shape()));
  }
  const double a = std::sqrt(sched.alpha[t]);
  const double b = std::sqrt(sched.beta[t]);
  auto xs = x_prev.data(), ns = noise.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * xs[i] + b * ns[i]);
  return Tensor::from_data(x_prev.shape(), std::move(out));
}

Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                      RngStream& rng) {
  check_step(sched, t);
  if (x_t.shape() != eps_hat.shape()) {
    throw std::invalid_argument("posterior_step: x_t " + shape_str(x_t.shape()) + " vs eps_hat " +
                                shape_str(eps_hat.shape()));
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double eps_coef = sched.beta[t] / std::sqrt(1.0 - sched.alpha_bar[t]);
  const double sigma = t > 0 ? std::sqrt(sched.posterior_variance[t]) : 0.0;
  auto xs = x_t.data(), es = eps_hat.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = inv_sqrt_alpha * (xs[i] - eps_coef * es[i]);
    if (t > 0) v += sigma * rng.normal();
    out[i] = static_cast<float>(v);
  }
  return Tensor::from_data(x_t.shape(), std::move(out));
}

}  // namespace maskdiff
