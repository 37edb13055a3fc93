#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Boost 1.74's pchip calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>

#include "ccs/errors.hpp"

namespace ccs {

/// Linear variance ladder beta_1..beta_N from which the cumulative
/// alpha_bar products are built before subsampling to the DDIM grid.
struct LinearBetaLadder {
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int base_steps = 1000;
};

struct DdimCoeffs {
  double eta = 1.0;     // multiplies x_t
  double lambda = 0.0;  // multiplies the score at x_t
};

inline double sigma_from_alpha_bar(double alpha_bar) {
  return std::sqrt((1.0 - alpha_bar) / alpha_bar);
}

inline double alpha_bar_from_sigma(double sigma) { return 1.0 / (1.0 + sigma * sigma); }

/// Step coefficients between adjacent ladder values alpha_bar[t-1] = prev and alpha_bar[t] = cur.
inline DdimCoeffs ddim_coeffs(double prev, double cur) {
  const double eta = std::sqrt(prev / cur);
  return {eta, eta * (1.0 - cur) - std::sqrt((1.0 - prev) * (1.0 - cur))};
}

/// Lists every violated schedule invariant; empty means the ladder is usable.
inline std::vector<std::string> schedule_violations(std::span<const double> alpha_bar) {
  std::vector<std::string> out;
  if (alpha_bar.size() < 2) {
    out.emplace_back("schedule needs at least two entries (t = 0 and t = T)");
    return out;
  }
  for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
    const double a = alpha_bar[t];
    if (!std::isfinite(a) || a <= 0.0 || a > 1.0)
      out.push_back("alpha_bar[" + std::to_string(t) + "] outside (0, 1]");
    if (t > 0 && !(a < alpha_bar[t - 1]))
      out.push_back("alpha_bar not strictly decreasing at t = " + std::to_string(t));
  }
  if (!(alpha_bar.front() >= 0.999)) out.emplace_back("alpha_bar[0] < 0.999");
  if (!(alpha_bar.back() <= 0.01)) out.emplace_back("alpha_bar[T] > 0.01");
  return out;
}

/// Cumulative noise ladder alpha_bar[0..T] of a variance-preserving diffusion
/// plus its continuous-time interpolant. Immutable once built.
class NoiseSchedule {
 public:
  /// Builds the base ladder prod(1 - beta) and subsamples it uniformly to
  /// `ddim_steps` steps, keeping both endpoints of the base ladder.
  static NoiseSchedule linear(const LinearBetaLadder& ladder, int ddim_steps) {
    if (ladder.base_steps < 2) throw InputError("base_steps must be >= 2");
    if (!(ladder.beta_start > 0.0 && ladder.beta_end < 1.0 && ladder.beta_start <= ladder.beta_end))
      throw InputError("beta ladder must satisfy 0 < beta_start <= beta_end < 1");
    if (ddim_steps < 1 || ddim_steps > ladder.base_steps - 1)
      throw InputError("ddim_steps must lie in [1, base_steps - 1]");

    const int n = ladder.base_steps;
    std::vector<double> cumulative(static_cast<std::size_t>(n));
    double prod = 1.0;
    for (int i = 0; i < n; ++i) {
      const double beta =
          ladder.beta_start + (ladder.beta_end - ladder.beta_start) * static_cast<double>(i) / (n - 1);
      prod *= 1.0 - beta;
      cumulative[static_cast<std::size_t>(i)] = prod;
    }

    std::vector<double> alpha_bar(static_cast<std::size_t>(ddim_steps) + 1);
    for (int k = 0; k <= ddim_steps; ++k) {
      const auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(k) * (n - 1) / ddim_steps));
      alpha_bar[static_cast<std::size_t>(k)] = cumulative[idx];
    }
    NoiseSchedule s = from_alpha_bar(std::move(alpha_bar));
    s.ladder_ = ladder;
    return s;
  }

  static NoiseSchedule linear(int ddim_steps = 50) { return linear(LinearBetaLadder{}, ddim_steps); }

  /// Uses an explicit ladder; throws InputError listing the first violation.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar) {
    const auto bad = schedule_violations(alpha_bar);
    if (!bad.empty()) throw InputError("invalid schedule: " + bad.front());
    return NoiseSchedule(std::move(alpha_bar));
  }

  int steps() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
  const std::optional<LinearBetaLadder>& ladder() const noexcept { return ladder_; }

  double alpha_bar(int t) const {
    check_step(t, 0);
    return alpha_bar_[static_cast<std::size_t>(t)];
  }

  /// Monotone interpolant of the ladder in continuous time; exact at integers.
  double alpha_bar_at(double t) const {
    if (!(t >= 0.0 && t <= static_cast<double>(steps())))
      throw DomainError("time " + std::to_string(t) + " outside [0, " + std::to_string(steps()) + "]");
    const double rounded = std::round(t);
    if (std::abs(t - rounded) < 1e-12) return alpha_bar_[static_cast<std::size_t>(rounded)];
    if (interp_) return std::exp((*interp_)(t));
    // Fewer than four nodes: piecewise-linear in log(alpha_bar).
    const auto k = static_cast<std::size_t>(std::floor(t));
    const double w = t - static_cast<double>(k);
    return std::exp((1.0 - w) * std::log(alpha_bar_[k]) + w * std::log(alpha_bar_[k + 1]));
  }

  double sigma(int t) const { return sigma_from_alpha_bar(alpha_bar(t)); }
  double sigma_at(double t) const { return sigma_from_alpha_bar(alpha_bar_at(t)); }

  /// x_{t-1} = eta * x_t + lambda * score_t(x_t) for the deterministic sampler.
  DdimCoeffs ddim_coeffs(int t) const {
    check_step(t, 1);
    return ccs::ddim_coeffs(alpha_bar_[static_cast<std::size_t>(t - 1)], alpha_bar_[static_cast<std::size_t>(t)]);
  }

  /// Coefficient of the predicted noise in the deterministic DDIM update:
  /// f(t) = -sqrt(alpha_bar[t-1] (1 - alpha_bar[t]) / alpha_bar[t]) + sqrt(1 - alpha_bar[t-1]).
  double noise_coefficient(int t) const {
    check_step(t, 1);
    const double prev = alpha_bar_[static_cast<std::size_t>(t - 1)];
    const double cur = alpha_bar_[static_cast<std::size_t>(t)];
    return -std::sqrt(prev * (1.0 - cur) / cur) + std::sqrt(1.0 - prev);
  }

 private:
  explicit NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
    if (alpha_bar_.size() >= 4) {
      std::vector<double> x(alpha_bar_.size());
      std::vector<double> y(alpha_bar_.size());
      for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
        x[i] = static_cast<double>(i);
        y[i] = std::log(alpha_bar_[i]);
      }
      interp_ = std::make_shared<const Interpolant>(std::move(x), std::move(y));
    }
  }

  void check_step(int t, int lowest) const {
    if (t < lowest || t > steps())
      throw DomainError("step " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                        std::to_string(steps()) + "]");
  }

  using Interpolant = boost::math::interpolators::pchip<std::vector<double>>;

  std::vector<double> alpha_bar_;
  std::shared_ptr<const Interpolant> interp_;
  std::optional<LinearBetaLadder> ladder_;
};

}  // namespace ccs
