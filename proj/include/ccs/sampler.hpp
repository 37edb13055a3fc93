#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ccs/errors.hpp"
#include "ccs/mixture.hpp"
#include "ccs/schedule.hpp"

namespace ccs {

enum class Direction { generation, inversion };

/// States visited by a deterministic run, in visiting order.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<int> timesteps;
  Direction direction = Direction::generation;

  const Vector& endpoint() const { return states.back(); }
};

namespace detail {

inline void require_finite(const Vector& x, const char* what, int step) {
  if (!x.allFinite()) throw NumericalError(std::string(what) + " produced a non-finite state", step);
}

inline void require_dim(const ScoreField& field, const Vector& x) {
  if (x.size() != field.dim())
    throw InputError("state has length " + std::to_string(x.size()) + ", model dimension is " +
                     std::to_string(field.dim()));
}

}  // namespace detail

/// One deterministic DDIM step t -> t-1 using the exact (guided) score.
inline Vector ddim_step(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x, int t) {
  detail::require_dim(field, x);
  const DdimCoeffs c = schedule.ddim_coeffs(t);
  Vector next = c.eta * x + c.lambda * field.score(x, schedule.alpha_bar(t));
  detail::require_finite(next, "ddim_step", t);
  return next;
}

/// Endpoint of the deterministic sampler started at `x` on step `t_start`.
inline Vector ddim_generate(const NoiseSchedule& schedule, const ScoreField& field, Vector x, int t_start) {
  if (t_start < 0 || t_start > schedule.steps()) throw DomainError("start step outside [0, T]");
  for (int t = t_start; t >= 1; --t) x = ddim_step(schedule, field, x, t);
  return x;
}

inline Trajectory ddim_sample_from(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x,
                                   int t_start) {
  if (t_start < 0 || t_start > schedule.steps()) throw DomainError("start step outside [0, T]");
  detail::require_dim(field, x);
  Trajectory traj;
  traj.direction = Direction::generation;
  traj.states.reserve(static_cast<std::size_t>(t_start) + 1);
  traj.states.push_back(x);
  traj.timesteps.push_back(t_start);
  for (int t = t_start; t >= 1; --t) {
    traj.states.push_back(ddim_step(schedule, field, traj.states.back(), t));
    traj.timesteps.push_back(t - 1);
  }
  return traj;
}

/// Full chain x_T -> x_0.
inline Trajectory ddim_sample(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x_T) {
  return ddim_sample_from(schedule, field, x_T, schedule.steps());
}

struct InversionOptions {
  int refine_iters = 0;       // cap on fixed-point sweeps per step; 0 = plain first-order inversion
  double refine_tol = 1e-14;  // stop once the update is this small relative to the state
};

/// Runs the deterministic recursion backwards from step 0 up to `t_stop`.
/// Each step starts from x_t ~ (x_{t-1} - lambda_t s_t(x_{t-1})) / eta_t and
/// optionally iterates x_t <- (x_{t-1} - lambda_t s_t(x_t)) / eta_t.
inline Vector ddim_invert(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x0, int t_stop,
                          const InversionOptions& opts = {}) {
  if (t_stop < 0 || t_stop > schedule.steps()) throw DomainError("inversion stop step outside [0, T]");
  if (opts.refine_iters < 0) throw InputError("refine_iters must be >= 0");
  detail::require_dim(field, x0);
  Vector x = x0;
  for (int t = 1; t <= t_stop; ++t) {
    const DdimCoeffs c = schedule.ddim_coeffs(t);
    const GuidedMarginal marginal = field.at(schedule.alpha_bar(t));
    const Vector prev = x;
    x = (prev - c.lambda * marginal.score(prev)) / c.eta;
    double first_update = -1.0;
    double last_update = 0.0;
    for (int k = 0; k < opts.refine_iters; ++k) {
      const Vector next = (prev - c.lambda * marginal.score(x)) / c.eta;
      last_update = (next - x).norm();
      x = next;
      if (!x.allFinite()) throw InversionError("fixed-point refinement produced a non-finite state", t);
      if (first_update < 0.0) first_update = last_update;
      if (last_update <= opts.refine_tol * std::max(1.0, x.norm())) break;
    }
    if (first_update > 0.0 && last_update > first_update)
      throw InversionError("fixed-point refinement diverged", t);
    detail::require_finite(x, "ddim_invert", t);
  }
  return x;
}

enum class OdeMethod { euler, rk4 };

/// Integrates the probability-flow ODE in the sigma coordinate,
///   d xbar / d sigma = -sqrt(1 - a) * score_a(xbar / sqrt(sigma^2 + 1)),  a = 1 / (1 + sigma^2),
/// on a uniform grid of `n_grid` points from sigma(T) down to sigma(0), with
/// xbar = x / sqrt(a). Returns x_0 = sqrt(alpha_bar[0]) * xbar_0.
inline Vector ode_integrate(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x_T, int n_grid,
                            OdeMethod method) {
  if (n_grid < 2) throw InputError("n_grid must be >= 2");
  detail::require_dim(field, x_T);
  const double s_hi = schedule.sigma(schedule.steps());
  const double s_lo = schedule.sigma(0);
  const double h = (s_lo - s_hi) / static_cast<double>(n_grid - 1);

  const auto rhs = [&](double sigma, const Vector& xbar) -> Vector {
    const double a = alpha_bar_from_sigma(sigma);
    const double root = std::sqrt(1.0 + sigma * sigma);
    return -(sigma / root) * field.score(xbar / root, a);
  };

  Vector xbar = x_T / std::sqrt(schedule.alpha_bar(schedule.steps()));
  for (int i = 0; i + 1 < n_grid; ++i) {
    const double s = s_hi + h * static_cast<double>(i);
    if (method == OdeMethod::euler) {
      xbar += h * rhs(s, xbar);
    } else {
      const Vector k1 = rhs(s, xbar);
      const Vector k2 = rhs(s + 0.5 * h, xbar + 0.5 * h * k1);
      const Vector k3 = rhs(s + 0.5 * h, xbar + 0.5 * h * k2);
      const Vector k4 = rhs(s + h, xbar + h * k3);
      xbar += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    detail::require_finite(xbar, "ode_integrate", i + 1);
  }
  return std::sqrt(schedule.alpha_bar(0)) * xbar;
}

struct JacobianResult {
  Vector endpoint;
  Matrix gamma;  // d x_0 / d x_T
};

/// Runs the sampler from x_T while carrying the sensitivity matrix
///   gamma <- (eta_t I + lambda_t H_t(x_t)) gamma,  gamma = I before step T.
inline JacobianResult jacobian_propagate(const NoiseSchedule& schedule, const ScoreField& field, const Vector& x_T,
                                         Eigen::Index max_dim = 256) {
  detail::require_dim(field, x_T);
  const Eigen::Index d = x_T.size();
  if (d > max_dim)
    throw CapabilityError("Jacobian propagation limited to d <= " + std::to_string(max_dim) + " (got " +
                          std::to_string(d) + ")");
  Vector x = x_T;
  Matrix gamma = Matrix::Identity(d, d);
  for (int t = schedule.steps(); t >= 1; --t) {
    const DdimCoeffs c = schedule.ddim_coeffs(t);
    const GuidedMarginal marginal = field.at(schedule.alpha_bar(t));
    Matrix step = c.lambda * marginal.hessian(x);
    step.diagonal().array() += c.eta;
    gamma = (step * gamma).eval();
    x = c.eta * x + c.lambda * marginal.score(x);
    detail::require_finite(x, "jacobian_propagate", t);
    if (!gamma.allFinite()) throw NumericalError("Jacobian carry became non-finite", t);
  }
  return {std::move(x), std::move(gamma)};
}

/// prod_t (eta_t + |lambda_t| * sup_x ||H_t(x)||): a Lipschitz constant of the
/// whole sampler map from step `t_start` down to 0.
inline double sampler_lipschitz_bound(const NoiseSchedule& schedule, const ScoreField& field, int t_start) {
  double bound = 1.0;
  for (int t = t_start; t >= 1; --t) {
    const DdimCoeffs c = schedule.ddim_coeffs(t);
    bound *= c.eta + std::abs(c.lambda) * field.at(schedule.alpha_bar(t)).hessian_norm_bound();
  }
  return bound;
}

}  // namespace ccs
