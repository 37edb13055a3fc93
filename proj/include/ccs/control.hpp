#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccs/errors.hpp"
#include "ccs/geometry.hpp"
#include "ccs/metrics.hpp"
#include "ccs/mixture.hpp"
#include "ccs/parallel.hpp"
#include "ccs/sampler.hpp"
#include "ccs/schedule.hpp"

namespace ccs {

enum class Mechanism { ccs_full, ccs_partial, gp, ccdf };

inline std::string_view to_string(Mechanism m) {
  switch (m) {
    case Mechanism::ccs_full: return "ccs_full";
    case Mechanism::ccs_partial: return "ccs_partial";
    case Mechanism::gp: return "gp";
    case Mechanism::ccdf: return "ccdf";
  }
  return "unknown";
}

inline Mechanism parse_mechanism(std::string_view s) {
  if (s == "ccs_full" || s == "ccs") return Mechanism::ccs_full;
  if (s == "ccs_partial" || s == "pccs") return Mechanism::ccs_partial;
  if (s == "gp") return Mechanism::gp;
  if (s == "ccdf") return Mechanism::ccdf;
  throw InputError("unknown mechanism '" + std::string(s) + "'");
}

/// Everything a mechanism needs besides the target: the schedule, the data
/// model, how inversion is performed, and how many threads may draw samples.
struct SamplingContext {
  NoiseSchedule schedule = NoiseSchedule::linear();
  GaussianMixture model = GaussianMixture::standard_normal(1);
  InversionOptions inversion{};
  int workers = 1;
  double gp_scale_max = -1.0;  // < 0: 0.5 * sqrt(d)
};

struct PerturbationSpec {
  Mechanism mechanism = Mechanism::ccs_full;
  double scale = 0.0;  // C0 (ccs_*), s (gp), t0 (ccdf, integral)
  int t0 = 0;          // intermediate step for ccs_partial
  CfgSpec cfg_invert{};
  CfgSpec cfg_sample{};
  std::uint64_t seed = 0;
};

/// Generated states together with what produced them.
struct SampleBatch {
  Mechanism mechanism = Mechanism::ccs_full;
  double scale = 0.0;
  int start_step = 0;
  std::uint64_t seed = 0;
  Vector target;
  Vector anchor;                       // unperturbed starting state (x_T, z_t0, or sqrt(a) x_0)
  std::vector<Vector> initial;         // perturbed starting states
  std::vector<Vector> samples;         // endpoints x_0'
  std::vector<std::uint64_t> draw_seeds;

  std::size_t size() const noexcept { return samples.size(); }
  double residual_norm(std::size_t i) const { return (samples[i] - target).norm(); }
  double per_coord_rmse(std::size_t i) const { return rmse(samples[i], target); }
};

enum class DiversityMetric {
  rmse,       // mean over draws of |x_0' - x_0| / sqrt(d)
  raw_norm    // mean over draws of |x_0' - x_0|
};

inline double batch_diversity(const SampleBatch& batch, DiversityMetric metric = DiversityMetric::rmse) {
  if (batch.size() == 0) throw InputError("batch_diversity: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += metric == DiversityMetric::rmse ? batch.per_coord_rmse(i) : batch.residual_norm(i);
  return total / static_cast<double>(batch.size());
}

inline double mean_residual_norm(const SampleBatch& batch) {
  return batch_diversity(batch, DiversityMetric::raw_norm);
}

/// Largest relative deviation | |x'| - |anchor| | / |anchor| over the batch.
inline double max_initial_norm_drift(const SampleBatch& batch) {
  const double base = batch.anchor.norm();
  double worst = 0.0;
  for (const Vector& v : batch.initial) worst = std::max(worst, std::abs(v.norm() - base) / base);
  return worst;
}

struct ScaleBracket {
  double low = 0.0;
  double high = std::numbers::pi / 2;
  bool integral = false;
};

inline constexpr int kMaxSlerpRetries = 3;

/// A target with its inversion done once; draws batches at any scale.
class PreparedTarget {
 public:
  PreparedTarget(const SamplingContext& ctx, Vector target, Mechanism mechanism, int t0 = 0,
                 CfgSpec cfg_invert = {}, CfgSpec cfg_sample = {})
      : ctx_(ctx),
        target_(std::move(target)),
        mechanism_(mechanism),
        invert_field_(ctx.model, std::move(cfg_invert)),
        sample_field_(ctx.model, std::move(cfg_sample)) {
    if (target_.size() != ctx_.model.dim()) throw InputError("target length does not match model dimension");
    const int T = ctx_.schedule.steps();
    switch (mechanism_) {
      case Mechanism::ccs_full:
      case Mechanism::gp:
        start_ = T;
        anchor_ = ddim_invert(ctx_.schedule, invert_field_, target_, T, ctx_.inversion);
        break;
      case Mechanism::ccs_partial:
        if (t0 < 1 || t0 > T) throw DomainError("ccs_partial: t0 must lie in [1, T]");
        start_ = t0;
        anchor_ = ddim_invert(ctx_.schedule, invert_field_, target_, t0, ctx_.inversion);
        break;
      case Mechanism::ccdf:
        start_ = 0;  // chosen per batch
        anchor_ = target_;
        break;
    }
  }

  Mechanism mechanism() const noexcept { return mechanism_; }
  const Vector& target() const noexcept { return target_; }
  const Vector& anchor() const noexcept { return anchor_; }
  const SamplingContext& context() const noexcept { return ctx_; }

  ScaleBracket bracket() const {
    switch (mechanism_) {
      case Mechanism::gp: {
        const double smax = ctx_.gp_scale_max > 0.0
                                ? ctx_.gp_scale_max
                                : 0.5 * std::sqrt(static_cast<double>(ctx_.model.dim()));
        return {0.0, smax, false};
      }
      case Mechanism::ccdf: return {1.0, static_cast<double>(ctx_.schedule.steps()), true};
      default: return {0.0, std::numbers::pi / 2, false};
    }
  }

  void check_scale(double scale) const {
    switch (mechanism_) {
      case Mechanism::ccs_full:
      case Mechanism::ccs_partial:
        if (!(scale >= 0.0 && scale <= std::numbers::pi / 2)) throw RangeError("C0 must lie in [0, pi/2]");
        break;
      case Mechanism::gp:
        if (!(scale >= 0.0) || !std::isfinite(scale)) throw RangeError("GP scale must be >= 0");
        break;
      case Mechanism::ccdf:
        if (scale != std::round(scale) || scale < 1.0 || scale > ctx_.schedule.steps())
          throw RangeError("CCDF t0 must be an integer in [1, T]");
        break;
    }
  }

  /// n independent draws; draw i uses the stream derive_seed(seed, i).
  SampleBatch draw(double scale, int n, std::uint64_t seed) const {
    if (n < 1) throw InputError("batch size must be >= 1");
    check_scale(scale);
    SampleBatch batch;
    batch.mechanism = mechanism_;
    batch.scale = scale;
    batch.seed = seed;
    batch.target = target_;
    batch.start_step = mechanism_ == Mechanism::ccdf ? static_cast<int>(scale) : start_;
    batch.anchor = mechanism_ == Mechanism::ccdf
                       ? Vector(std::sqrt(ctx_.schedule.alpha_bar(batch.start_step)) * target_)
                       : anchor_;
    const auto count = static_cast<std::size_t>(n);
    batch.initial.resize(count);
    batch.samples.resize(count);
    batch.draw_seeds.resize(count);
    parallel_for(count, ctx_.workers, [&](std::size_t i) {
      const std::uint64_t s = derive_seed(seed, i);
      Rng rng = make_rng(s);
      batch.draw_seeds[i] = s;
      batch.initial[i] = perturb(scale, rng);
      batch.samples[i] = ddim_generate(ctx_.schedule, sample_field_, batch.initial[i], batch.start_step);
    });
    return batch;
  }

 private:
  Vector perturb(double scale, Rng& rng) const {
    const Eigen::Index d = target_.size();
    const auto& sched = ctx_.schedule;
    switch (mechanism_) {
      case Mechanism::ccs_full:
        return slerp_with_retry(anchor_, 1.0, scale, rng);
      case Mechanism::ccs_partial: {
        const double a = sched.alpha_bar(start_);
        const Vector clean = std::sqrt(a) * target_;
        const Vector noise_part = anchor_ - clean;
        return clean + slerp_with_retry(noise_part, std::sqrt(1.0 - a), scale, rng);
      }
      case Mechanism::gp:
        return anchor_ + scale * standard_normal(rng, d);
      case Mechanism::ccdf: {
        const double a = sched.alpha_bar(static_cast<int>(scale));
        return std::sqrt(a) * target_ + std::sqrt(1.0 - a) * standard_normal(rng, d);
      }
    }
    return anchor_;
  }

  // Fresh noise eps ~ N(0, noise_scale^2 I) interpolated against `anchor`
  // along their great circle. A near-collinear draw is replaced.
  static Vector slerp_with_retry(const Vector& anchor, double noise_scale, double c0, Rng& rng) {
    if (c0 == 0.0) return anchor;
    for (int attempt = 0; attempt <= kMaxSlerpRetries; ++attempt) {
      const Vector eps = noise_scale * standard_normal(rng, anchor.size());
      const double theta = angle_between(anchor, eps);
      if (std::sin(theta) > kSlerpMinSin) return slerp(SlerpInputs{anchor, eps, c0, theta}, ArcMode::extended);
    }
    throw DegeneracyError("slerp degenerate after " + std::to_string(kMaxSlerpRetries) + " retries");
  }

  SamplingContext ctx_;
  Vector target_;
  Mechanism mechanism_;
  ScoreField invert_field_;
  ScoreField sample_field_;
  Vector anchor_;
  int start_ = 0;
};

/// Full-inversion CCS: invert to T once, slerp fresh noise in by C0, resample.
inline SampleBatch ccs_full_sample(const SamplingContext& ctx, const Vector& target, double c0, int n,
                                   std::uint64_t seed, const CfgSpec& cfg = {}) {
  return PreparedTarget(ctx, target, Mechanism::ccs_full, 0, cfg, cfg).draw(c0, n, seed);
}

/// Partial-inversion CCS: invert to t0 under `cfg_invert`, slerp the extracted
/// noise component z_t0 - sqrt(a) z_0 against N(0, (1 - a) I), resample from t0
/// under `cfg_sample`.
inline SampleBatch ccs_partial_sample(const SamplingContext& ctx, const Vector& target, double c0, int t0, int n,
                                      std::uint64_t seed, const CfgSpec& cfg_invert = {},
                                      const CfgSpec& cfg_sample = {}) {
  return PreparedTarget(ctx, target, Mechanism::ccs_partial, t0, cfg_invert, cfg_sample).draw(c0, n, seed);
}

/// Editing: partial CCS inverted under `source` and resampled under `target_label`.
inline SampleBatch ccs_edit_sample(const SamplingContext& ctx, const Vector& target, double c0, int t0, int n,
                                   std::uint64_t seed, const std::string& source, const std::string& target_label,
                                   double gamma) {
  if (!ctx.model.has_label(source)) throw InputError("unknown source label '" + source + "'");
  if (!ctx.model.has_label(target_label)) throw InputError("unknown target label '" + target_label + "'");
  return ccs_partial_sample(ctx, target, c0, t0, n, seed, CfgSpec{gamma, source}, CfgSpec{gamma, target_label});
}

/// Gaussian-perturbation baseline: x_T' = x_T + s eps.
inline SampleBatch gp_sample(const SamplingContext& ctx, const Vector& target, double s, int n, std::uint64_t seed,
                             const CfgSpec& cfg = {}) {
  return PreparedTarget(ctx, target, Mechanism::gp, 0, cfg, cfg).draw(s, n, seed);
}

/// CCDF baseline: forward-noise the target to t0, then run the sampler from t0.
inline SampleBatch ccdf_sample(const SamplingContext& ctx, const Vector& target, int t0, int n, std::uint64_t seed,
                               const CfgSpec& cfg = {}) {
  return PreparedTarget(ctx, target, Mechanism::ccdf, 0, cfg, cfg).draw(static_cast<double>(t0), n, seed);
}

inline SampleBatch sample(const SamplingContext& ctx, const Vector& target, const PerturbationSpec& spec, int n) {
  return PreparedTarget(ctx, target, spec.mechanism, spec.t0, spec.cfg_invert, spec.cfg_sample)
      .draw(spec.scale, n, spec.seed);
}

// ---------------------------------------------------------------------------
// Diversity controller

struct ControllerConfig {
  double target = 0.12;  // desired batch diversity
  double tol = 0.01;
  int batch_size = 24;
  int max_iters = 6;
  std::uint64_t seed = 0;
  DiversityMetric metric = DiversityMetric::rmse;

  void validate() const {
    if (!(target > 0.0)) throw InputError("controller target must be > 0");
    if (!(tol > 0.0) || !(tol < target)) throw InputError("controller tol must satisfy 0 < tol < target");
    if (batch_size < 2) throw InputError("controller batch_size must be >= 2");
    if (max_iters < 1) throw InputError("controller max_iters must be >= 1");
  }
};

struct ControllerStep {
  double low = 0.0;
  double high = 0.0;
  double scale = 0.0;
  double measured = 0.0;
};

struct ControllerTrace {
  std::vector<ControllerStep> iterations;
  bool converged = false;
  double final_scale = 0.0;
  std::optional<ControllerStep> boundary;  // evaluation at the bracket top when not converged
};

/// Bisection on a response that grows with scale. `measure(scale, seed)`
/// draws a fresh batch per call; iteration k uses derive_seed(cfg.seed, k).
/// Stops when |measured - target| < tol or after max_iters evaluations.
template <class Measure>
ControllerTrace bisect_scale(Measure&& measure, const ScaleBracket& bracket, const ControllerConfig& cfg) {
  cfg.validate();
  ControllerTrace trace;
  const auto hit = [&](double m) { return std::abs(m - cfg.target) < cfg.tol; };

  if (!bracket.integral) {
    double lo = bracket.low;
    double hi = bracket.high;
    double c = 0.5 * (lo + hi);
    for (int it = 0; it < cfg.max_iters; ++it) {
      const double m = measure(c, derive_seed(cfg.seed, static_cast<std::uint64_t>(it)));
      trace.iterations.push_back({lo, hi, c, m});
      if (hit(m)) {
        trace.converged = true;
        trace.final_scale = c;
        return trace;
      }
      if (m > cfg.target)
        hi = c;
      else
        lo = c;
      c = 0.5 * (lo + hi);
    }
    trace.final_scale = c;
  } else {
    // Integer scales: binary search over candidates, ties toward the smaller value.
    auto lo = static_cast<long>(std::lround(bracket.low));
    auto hi = static_cast<long>(std::lround(bracket.high));
    double best_gap = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.max_iters && lo <= hi; ++it) {
      const long c = lo + (hi - lo) / 2;
      const double m = measure(static_cast<double>(c), derive_seed(cfg.seed, static_cast<std::uint64_t>(it)));
      trace.iterations.push_back({static_cast<double>(lo), static_cast<double>(hi), static_cast<double>(c), m});
      if (hit(m)) {
        trace.converged = true;
        trace.final_scale = static_cast<double>(c);
        return trace;
      }
      if (std::abs(m - cfg.target) < best_gap) {
        best_gap = std::abs(m - cfg.target);
        trace.final_scale = static_cast<double>(c);
      }
      if (m > cfg.target)
        hi = c - 1;
      else
        lo = c + 1;
    }
  }
  const double top = bracket.high;
  trace.boundary = ControllerStep{bracket.low, bracket.high, top,
                                  measure(top, derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.max_iters)))};
  return trace;
}

/// Tunes the mechanism's scale so the batch diversity hits `cfg.target`.
inline ControllerTrace controller_tune(const PreparedTarget& prepared, const ControllerConfig& cfg) {
  return bisect_scale(
      [&](double scale, std::uint64_t seed) {
        return batch_diversity(prepared.draw(scale, cfg.batch_size, seed), cfg.metric);
      },
      prepared.bracket(), cfg);
}

}  // namespace ccs
