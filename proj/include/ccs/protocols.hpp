#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ccs/control.hpp"
#include "ccs/errors.hpp"
#include "ccs/metrics.hpp"
#include "ccs/parallel.hpp"

namespace ccs {

enum class ScaleGrid { random_uniform, fixed };

struct LinearityOptions {
  int n_scales = 8;
  int samples_per_scale = 24;
  double scale_max = 0.9;
  ScaleGrid grid = ScaleGrid::random_uniform;
  std::uint64_t seed = 0;
};

struct LinearityPoint {
  int target_id = 0;
  double c0 = 0.0;
  double sin_c0 = 0.0;
  double mean_residual_norm = 0.0;
  double normalized_residual = 0.0;  // (y - b) / a with the target's own fit
  int n = 0;
  std::uint64_t seed = 0;
  double mean_input_distance = 0.0;  // E|x_T' - x_T|, not part of the CSV table

  bool operator==(const LinearityPoint&) const = default;
};

struct LinearityResult {
  std::vector<LinearityPoint> points;  // ordered by (target_id, scale index)
  std::vector<LinearFit> fits;         // per target, y on sin(c0)
  double pooled_r2 = 0.0;              // normalized residuals against sin(c0)
  double input_axis_r2 = 0.0;          // normalized residuals against E|x_T' - x_T|
};

namespace detail {

inline double pooled_normalized_r2(const std::vector<LinearityPoint>& points, bool input_axis,
                                   std::size_t targets, std::vector<LinearFit>* fits_out) {
  std::vector<double> px, py;
  px.reserve(points.size());
  py.reserve(points.size());
  for (std::size_t t = 0; t < targets; ++t) {
    std::vector<double> x, y;
    for (const auto& p : points)
      if (p.target_id == static_cast<int>(t)) {
        x.push_back(input_axis ? p.mean_input_distance : p.sin_c0);
        y.push_back(p.mean_residual_norm);
      }
    const LinearFit f = fit_line(x, y);
    if (!(std::abs(f.slope) > 0.0)) throw NumericalError("linearity fit has zero slope");
    if (fits_out) fits_out->push_back(f);
    for (std::size_t i = 0; i < x.size(); ++i) {
      px.push_back(x[i]);
      py.push_back((y[i] - f.intercept) / f.slope);
    }
  }
  return r_squared(px, py);
}

}  // namespace detail

/// Per target: draws n_scales values of C0 on [0, scale_max] (uniformly at random
/// or as an evenly spaced grid), runs full-inversion CCS at each, fits
/// y = E|x_0' - x_0| on sin(C0), and pools the normalized residuals (y - b) / a
/// of all targets into one R^2.
inline LinearityResult linearity_protocol(const SamplingContext& ctx, const std::vector<Vector>& targets,
                                          const LinearityOptions& opts) {
  if (opts.n_scales < 3) throw InputError("linearity: n_scales must be >= 3");
  if (opts.samples_per_scale < 2) throw InputError("linearity: samples_per_scale must be >= 2");
  if (!(opts.scale_max > 0.0 && opts.scale_max <= std::numbers::pi / 2))
    throw InputError("linearity: scale_max must lie in (0, pi/2]");
  if (targets.empty()) throw InputError("linearity: no targets");

  const std::size_t ns = static_cast<std::size_t>(opts.n_scales);
  std::vector<LinearityPoint> points(targets.size() * ns);
  SamplingContext inner = ctx;
  inner.workers = 1;

  parallel_for(targets.size(), ctx.workers, [&](std::size_t t) {
    const PreparedTarget prepared(inner, targets[t], Mechanism::ccs_full);
    Rng scale_rng = make_rng(derive_seed(opts.seed, t, 0x5ca1e));
    std::uniform_real_distribution<double> unif(0.0, opts.scale_max);
    for (std::size_t k = 0; k < ns; ++k) {
      const double c0 = opts.grid == ScaleGrid::fixed
                            ? opts.scale_max * static_cast<double>(k) / static_cast<double>(ns - 1)
                            : unif(scale_rng);
      const std::uint64_t seed = derive_seed(opts.seed, t, k);
      const SampleBatch batch = prepared.draw(c0, opts.samples_per_scale, seed);
      double input_distance = 0.0;
      for (const Vector& v : batch.initial) input_distance += (v - batch.anchor).norm();
      LinearityPoint& p = points[t * ns + k];
      p.target_id = static_cast<int>(t);
      p.c0 = c0;
      p.sin_c0 = std::sin(c0);
      p.mean_residual_norm = mean_residual_norm(batch);
      p.n = opts.samples_per_scale;
      p.seed = seed;
      p.mean_input_distance = input_distance / static_cast<double>(batch.size());
    }
  });

  LinearityResult out;
  out.pooled_r2 = detail::pooled_normalized_r2(points, false, targets.size(), &out.fits);
  out.input_axis_r2 = detail::pooled_normalized_r2(points, true, targets.size(), nullptr);
  for (auto& p : points) {
    const LinearFit& f = out.fits[static_cast<std::size_t>(p.target_id)];
    p.normalized_residual = (p.mean_residual_norm - f.intercept) / f.slope;
  }
  out.points = std::move(points);
  return out;
}

struct CompareOptions {
  std::vector<Mechanism> mechanisms{Mechanism::ccs_full, Mechanism::gp};
  ControllerConfig controller{};
  int eval_samples = 120;
  int partial_t0 = 0;  // 0: T / 2
  double data_range = 2.0;
  std::uint64_t seed = 0;
  bool keep_batches = false;
};

struct CompareRow {
  int target_id = 0;
  Mechanism mechanism = Mechanism::ccs_full;
  double final_scale = 0.0;
  double achieved_rmse = 0.0;  // controller's last measurement when converged, else the evaluation batch
  double psnr_mean_db = 0.0;
  double sample_sd = 0.0;
  int iterations = 0;
  bool converged = false;

  bool operator==(const CompareRow&) const = default;
};

struct CompareFailure {
  int target_id = 0;
  Mechanism mechanism = Mechanism::ccs_full;
  std::string message;

  bool operator==(const CompareFailure&) const = default;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // ordered by (target_id, mechanism order)
  std::vector<CompareFailure> failures;
  std::vector<SampleBatch> batches;  // evaluation batches, parallel to rows, when kept
};

/// For every (target, mechanism): tune the scale to the controller's target
/// diversity, then draw an evaluation batch at the tuned scale. A mechanism
/// that throws is recorded as a failure; the others still run.
inline CompareResult compare_baselines(const SamplingContext& ctx, const std::vector<Vector>& targets,
                                       const CompareOptions& opts) {
  if (opts.mechanisms.empty()) throw InputError("compare: no mechanisms");
  if (opts.eval_samples < 1) throw InputError("compare: eval_samples must be >= 1");
  opts.controller.validate();
  const std::size_t nm = opts.mechanisms.size();
  const std::size_t cells = targets.size() * nm;
  std::vector<std::optional<CompareRow>> rows(cells);
  std::vector<std::optional<SampleBatch>> batches(cells);
  std::vector<std::optional<CompareFailure>> failures(cells);
  SamplingContext inner = ctx;
  inner.workers = 1;
  const int t0 = opts.partial_t0 > 0 ? opts.partial_t0 : std::max(1, ctx.schedule.steps() / 2);

  parallel_for(cells, ctx.workers, [&](std::size_t cell) {
    const std::size_t t = cell / nm;
    const std::size_t m = cell % nm;
    const Mechanism mech = opts.mechanisms[m];
    try {
      const PreparedTarget prepared(inner, targets[t], mech, t0);
      ControllerConfig cc = opts.controller;
      cc.seed = derive_seed(opts.seed, t, 2 * m);
      const ControllerTrace trace = controller_tune(prepared, cc);
      SampleBatch eval = prepared.draw(trace.final_scale, opts.eval_samples, derive_seed(opts.seed, t, 2 * m + 1));
      CompareRow row;
      row.target_id = static_cast<int>(t);
      row.mechanism = mech;
      row.final_scale = trace.final_scale;
      row.converged = trace.converged;
      row.iterations = static_cast<int>(trace.iterations.size());
      row.achieved_rmse = trace.converged ? trace.iterations.back().measured : batch_diversity(eval, cc.metric);
      row.psnr_mean_db = psnr_of_mean(eval.samples, targets[t], opts.data_range);
      row.sample_sd = sample_sd(eval.samples);
      rows[cell] = row;
      if (opts.keep_batches) batches[cell] = std::move(eval);
    } catch (const Error& e) {
      failures[cell] = CompareFailure{static_cast<int>(t), mech, e.what()};
    }
  });

  CompareResult out;
  for (std::size_t c = 0; c < cells; ++c) {
    if (rows[c]) {
      out.rows.push_back(*rows[c]);
      if (batches[c]) out.batches.push_back(std::move(*batches[c]));
    }
    if (failures[c]) out.failures.push_back(*failures[c]);
  }
  return out;
}

}  // namespace ccs
