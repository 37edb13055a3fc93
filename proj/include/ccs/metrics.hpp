#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ccs/errors.hpp"
#include "ccs/rng.hpp"

namespace ccs {

/// Per-coordinate root-mean-square residual |sample - reference| / sqrt(d).
inline double rmse(const Vector& sample, const Vector& reference) {
  if (sample.size() != reference.size()) throw InputError("rmse: length mismatch");
  if (sample.size() == 0) throw InputError("rmse: empty vectors");
  return (sample - reference).norm() / std::sqrt(static_cast<double>(sample.size()));
}

inline Vector sample_mean(std::span<const Vector> samples) {
  if (samples.empty()) throw InputError("sample_mean: empty batch");
  Vector m = Vector::Zero(samples.front().size());
  for (const Vector& s : samples) m += s;
  return m / static_cast<double>(samples.size());
}

/// 20 log10(range / rmse(mean, target)); +infinity when the mean hits the target.
inline double psnr_of_mean(std::span<const Vector> samples, const Vector& target, double data_range = 2.0) {
  if (!(data_range > 0.0)) throw InputError("psnr_of_mean: data_range must be > 0");
  const double err = rmse(sample_mean(samples), target);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(data_range / err);
}

/// Mean over draws of each draw's population standard deviation across coordinates.
inline double sample_sd(std::span<const Vector> samples) {
  if (samples.empty()) throw InputError("sample_sd: empty batch");
  double total = 0.0;
  for (const Vector& s : samples) {
    const double mu = s.mean();
    total += std::sqrt((s.array() - mu).square().mean());
  }
  return total / static_cast<double>(samples.size());
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y ~ slope * x + intercept.
inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("fit_line: need two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InputError("fit_line: all x values are equal");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

/// Coefficient of determination of the least-squares line, clamped to [0, 1].
/// A constant response that the line reproduces exactly counts as 1.
inline double r_squared(std::span<const double> x, std::span<const double> y) {
  const LinearFit f = fit_line(x, y);
  double my = 0.0;
  for (double v : y) my += v;
  my /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += r * r;
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

}  // namespace ccs
