#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <cstdint>
#include <numbers>

#include "ccs/errors.hpp"
#include "ccs/rng.hpp"

namespace ccs {

/// Angle in [0, pi] between two nonzero vectors; the cosine is clamped
/// before arccos so rounding cannot leave the domain.
inline double angle_between(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InputError("angle_between: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw InputError("angle_between: zero vector");
  return std::acos(std::clamp(a.dot(b) / (na * nb), -1.0, 1.0));
}

inline constexpr double kSlerpMinSin = 1e-8;

enum class ArcMode {
  on_arc,   // 0 <= c0 <= theta: stay between anchor and noise
  extended  // 0 <= c0 < pi: continue along the same great circle past the noise
};

struct SlerpInputs {
  Vector anchor;  // x_T
  Vector noise;   // fresh epsilon
  double c0 = 0.0;
  double theta = 0.0;  // angle_between(anchor, noise)

  static SlerpInputs make(Vector anchor, Vector noise, double c0) {
    const double theta = angle_between(anchor, noise);
    return {std::move(anchor), std::move(noise), c0, theta};
  }
};

/// sin(c0)/sin(theta) * noise + sin(theta - c0)/sin(theta) * anchor.
inline Vector slerp(const SlerpInputs& in, ArcMode mode = ArcMode::on_arc) {
  if (in.anchor.size() != in.noise.size()) throw InputError("slerp: length mismatch");
  const double s = std::sin(in.theta);
  if (!(s > kSlerpMinSin)) throw DegeneracyError("slerp: anchor and noise are (nearly) collinear");
  if (!(in.c0 >= 0.0)) throw RangeError("slerp: c0 must be >= 0");
  // A few ulps past theta (e.g. theta * k / k) still counts as the endpoint.
  if (mode == ArcMode::on_arc && in.c0 > in.theta * (1.0 + 8 * std::numeric_limits<double>::epsilon()))
    throw RangeError("slerp: c0 exceeds the arc angle");
  if (mode == ArcMode::extended && !(in.c0 < std::numbers::pi)) throw RangeError("slerp: c0 must be < pi");
  if (in.c0 == 0.0) return in.anchor;
  if (in.c0 == in.theta) return in.noise;
  return (std::sin(in.c0) / s) * in.noise + (std::sin(in.theta - in.c0) / s) * in.anchor;
}

inline Vector slerp(const Vector& anchor, const Vector& noise, double c0, ArcMode mode = ArcMode::on_arc) {
  return slerp(SlerpInputs{anchor, noise, c0, angle_between(anchor, noise)}, mode);
}

/// Closed-form arc angle whose chord on a sphere of squared radius
/// `anchor_norm_sq` has length `distance`: arccos(1 - M^2 / (2 r^2)).
/// Distances above (2 - delta) r are rejected as unreachable.
inline double c0_for_distance(double anchor_norm_sq, double distance, double delta = 0.05) {
  if (!(anchor_norm_sq > 0.0)) throw InputError("c0_for_distance: anchor norm must be positive");
  if (!(delta > 0.0 && delta < 2.0)) throw InputError("c0_for_distance: delta must lie in (0, 2)");
  if (!(distance >= 0.0)) throw RangeError("c0_for_distance: distance must be >= 0");
  if (distance > (2.0 - delta) * std::sqrt(anchor_norm_sq))
    throw RangeError("c0_for_distance: distance exceeds (2 - delta) * |x_T|");
  return std::acos(std::clamp(1.0 - distance * distance / (2.0 * anchor_norm_sq), -1.0, 1.0));
}

/// Lower bound on P[ |X|^2 in ((1 - delta) d, (1 + delta) d) ] for X ~ N(0, I_d),
/// 1 - 2 exp(-d (delta^2/2 - delta^3/3) / 2), clamped at 0.
inline double concentration_bound(std::int64_t d, double delta) {
  if (d < 1) throw InputError("concentration_bound: d must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("concentration_bound: delta must lie in (0, 1)");
  const double rate = 0.5 * static_cast<double>(d) * (0.5 * delta * delta - delta * delta * delta / 3.0);
  return std::max(0.0, 1.0 - 2.0 * std::exp(-rate));
}

/// Monte-Carlo frequency of |X|^2 / d in (1 - delta, 1 + delta).
inline double concentration_frequency(std::int64_t d, double delta, std::int64_t draws, std::uint64_t seed) {
  if (d < 1 || draws < 1) throw InputError("concentration_frequency: d and draws must be >= 1");
  std::int64_t hits = 0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::int64_t i = 0; i < draws; ++i) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    double sq = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double z = normal(rng);
      sq += z * z;
    }
    const double ratio = sq / static_cast<double>(d);
    hits += (ratio > 1.0 - delta && ratio < 1.0 + delta) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(draws);
}

/// A zero-mean perturbation source with known trace covariance.
template <class S>
concept DeltaSampler = requires(const S& s, Rng& rng, Eigen::Index d) {
  { s.draw(rng, d) } -> std::convertible_to<Vector>;
  { s.trace_covariance(d) } -> std::convertible_to<double>;
};

struct ZeroDelta {
  Vector draw(Rng&, Eigen::Index d) const { return Vector::Zero(d); }
  double trace_covariance(Eigen::Index) const { return 0.0; }
};

struct IsotropicNormalDelta {
  double scale = 1.0;
  Vector draw(Rng& rng, Eigen::Index d) const { return scale * standard_normal(rng, d); }
  double trace_covariance(Eigen::Index d) const { return scale * scale * static_cast<double>(d); }
};

struct NormDrift {
  double mean_norm_sq = 0.0;    // Monte-Carlo estimate of E|x + dx|^2
  double predicted = 0.0;       // |x|^2 + tr Cov[dx]
  double standard_error = 0.0;  // of mean_norm_sq
  double base_norm_sq = 0.0;    // |x|^2
};

/// Estimates E|x + dx|^2 against its value |x|^2 + tr Cov[dx] for zero-mean dx.
template <DeltaSampler S>
NormDrift norm_drift_stats(const Vector& x, const S& sampler, std::int64_t n, std::uint64_t seed) {
  if (n < 2) throw InputError("norm_drift_stats: need at least two draws");
  double mean = 0.0;
  double m2 = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double v = (x + sampler.draw(rng, x.size())).squaredNorm();
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  const double base = x.squaredNorm();
  return {mean, base + sampler.trace_covariance(x.size()), std::sqrt(var / static_cast<double>(n)), base};
}

}  // namespace ccs
