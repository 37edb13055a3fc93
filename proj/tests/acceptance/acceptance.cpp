// Acceptance criteria runner: one PASS/FAIL line per criterion.
// Usage: ccs_acceptance [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccs/ccs.hpp"

namespace {

using ccs::GaussianMixture;
using ccs::NoiseSchedule;
using ccs::SamplingContext;
using ccs::ScoreField;
using ccs::Vector;

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // 0: no runtime limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

SamplingContext context(GaussianMixture model) { return {NoiseSchedule::linear(), std::move(model), {}, 1, -1.0}; }

Outcome linearity(GaussianMixture model, int targets, int samples, double need) {
  const SamplingContext ctx = context(std::move(model));
  ccs::LinearityOptions opts;
  opts.n_scales = 8;
  opts.samples_per_scale = samples;
  opts.scale_max = 0.9;
  opts.seed = 11;
  const auto r = ccs::linearity_protocol(ctx, ccs::draw_targets(ctx.model, targets, 12), opts);
  return {r.pooled_r2 >= need,
          fmt("pooled R2 %.9f (need >= %.9f); R2 against mean input distance %.9f", r.pooled_r2, need,
              r.input_axis_r2)};
}

Outcome jacobian() {
  const NoiseSchedule s = NoiseSchedule::linear();
  const ScoreField f(ccs::two_cluster_mixture(16));
  ccs::Rng rng = ccs::make_rng(21);
  const Vector xT = ccs::standard_normal(rng, 16);
  const ccs::JacobianResult J = ccs::jacobian_propagate(s, f, xT);
  const double lam = 1e-3;
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    Vector v = ccs::standard_normal(rng, 16);
    v /= v.norm();
    const Vector fd =
        (ccs::ddim_generate(s, f, xT + lam * v, s.steps()) - ccs::ddim_generate(s, f, xT - lam * v, s.steps())) /
        (2 * lam);
    const Vector jv = J.gamma * v;
    worst = std::max(worst, (fd - jv).norm() / jv.norm());
  }
  return {worst <= 1e-4, fmt("max relative directional error %.3e over 10 directions (need <= 1e-4)", worst)};
}

Outcome lipschitz() {
  const NoiseSchedule s = NoiseSchedule::linear();
  const ScoreField f(ccs::two_cluster_mixture(16));
  const double bound = ccs::sampler_lipschitz_bound(s, f, s.steps());
  ccs::Rng rng = ccs::make_rng(31);
  double worst_ratio = 0.0, worst_growth = 0.0;
  bool ok = std::isfinite(bound);
  for (int k = 0; k < 10; ++k) {
    const Vector xT = ccs::standard_normal(rng, 16);
    const Vector dx = ccs::standard_normal(rng, 16);
    const Vector base = ccs::ddim_generate(s, f, xT, s.steps());
    double first = -1.0, running_max = 0.0;
    for (double lam : {1e-3, 1e-2, 1e-1, 1.0, 2.0}) {
      const double ratio = (ccs::ddim_generate(s, f, xT + lam * dx, s.steps()) - base).norm() / (lam * dx.norm());
      if (!std::isfinite(ratio)) ok = false;
      if (first < 0.0) first = ratio;
      running_max = std::max(running_max, ratio);
      if (running_max > bound) ok = false;
    }
    worst_ratio = std::max(worst_ratio, running_max);
    worst_growth = std::max(worst_growth, running_max / first);
  }
  ok = ok && worst_growth <= 10.0;
  return {ok, fmt("max ratio %.4f vs product bound %.4e; running-max growth over the lambda sweep %.3f (need <= 10)",
                  worst_ratio, bound, worst_growth)};
}

Outcome concentration() {
  const double b1 = ccs::concentration_bound(50000, 0.025);
  const double b2 = ccs::concentration_bound(1000, 0.1);
  const double freq = ccs::concentration_frequency(1000, 0.1, 100000, 41);
  return {b1 >= 0.999 && freq >= b2,
          fmt("bound(50000, 0.025) = %.6f (need >= 0.999); frequency(1000, 0.1) = %.5f vs bound %.5f", b1, freq, b2)};
}

Outcome norm_drift() {
  ccs::Rng rng = ccs::make_rng(51);
  const Vector x = ccs::standard_normal(rng, 1000);
  const ccs::NormDrift d = ccs::norm_drift_stats(x, ccs::IsotropicNormalDelta{0.5}, 10000, 52);
  const double z = std::abs(d.mean_norm_sq - d.predicted) / d.standard_error;
  return {z <= 3.0 && d.mean_norm_sq > d.base_norm_sq,
          fmt("|estimate - predicted| = %.2f standard errors (need <= 3); estimate %.2f > |x|^2 %.2f", z,
              d.mean_norm_sq, d.base_norm_sq)};
}

Outcome distance_control() {
  const Eigen::Index d = 10000;
  const double root = std::sqrt(static_cast<double>(d));
  bool ok = true;
  std::string detail;
  for (double m : {0.5, 1.0, 1.5}) {
    const double M = m * root;
    int hits = 0;
    for (int i = 0; i < 1000; ++i) {
      ccs::Rng rng = ccs::make_rng(ccs::derive_seed(61, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(m * 2)));
      const Vector x = ccs::standard_normal(rng, d);
      const Vector e = ccs::standard_normal(rng, d);
      const double c0 = ccs::c0_for_distance(x.squaredNorm(), M);
      const double realized = (ccs::slerp(x, e, c0, ccs::ArcMode::extended) - x).norm();
      hits += std::abs(realized - M) <= 0.02 * M ? 1 : 0;
    }
    ok = ok && hits >= 990;
    detail += fmt("%sM=%.1fsqrt(d): %d/1000", detail.empty() ? "" : ", ", m, hits);
  }
  return {ok, detail + " within 2% (need >= 990 each)"};
}

Outcome controller() {
  const SamplingContext ctx = context(ccs::two_cluster_mixture(64));
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 71).front();
  const ccs::PreparedTarget prepared(ctx, x0, ccs::Mechanism::ccs_full);
  int converged = 0;
  bool within = true;
  double mean_iters = 0.0;
  for (int run = 0; run < 20; ++run) {
    ccs::ControllerConfig cfg;
    cfg.target = 0.12;
    cfg.tol = 0.01;
    cfg.batch_size = 24;
    cfg.max_iters = 6;
    cfg.seed = ccs::derive_seed(72, static_cast<std::uint64_t>(run));
    const ccs::ControllerTrace tr = ccs::controller_tune(prepared, cfg);
    if (tr.converged) {
      ++converged;
      mean_iters += static_cast<double>(tr.iterations.size());
      within = within && std::abs(tr.iterations.back().measured - cfg.target) < cfg.tol;
    }
  }
  if (converged > 0) mean_iters /= converged;
  return {converged >= 18 && within,
          fmt("%d/20 runs converged within 6 iterations (need >= 18), mean iterations %.2f, all converged within "
              "tol: %s",
              converged, mean_iters, within ? "yes" : "no")};
}

Outcome baselines() {
  const SamplingContext ctx = context(ccs::two_cluster_mixture(64));
  const auto targets = ccs::draw_targets(ctx.model, 8, 81);
  ccs::CompareOptions opts;
  opts.mechanisms = {ccs::Mechanism::ccs_full, ccs::Mechanism::gp};
  opts.eval_samples = 120;
  opts.seed = 82;
  opts.keep_batches = true;
  const ccs::CompareResult r = ccs::compare_baselines(ctx, targets, opts);
  if (!r.failures.empty() || r.rows.size() != 16) return {false, "compare produced failures"};
  int ccs_wins = 0;
  double ccs_drift = 0.0, ccs_draw_drift = 0.0, gp_worst_z = 0.0, gp_mean_drift = 0.0;
  for (std::size_t t = 0; t < 8; ++t) {
    const auto& c = r.rows[2 * t];
    const auto& g = r.rows[2 * t + 1];
    ccs_wins += c.psnr_mean_db > g.psnr_mean_db ? 1 : 0;
    const ccs::SampleBatch& cb = r.batches[2 * t];
    double mean_norm = 0.0;
    for (const Vector& v : cb.initial) mean_norm += v.norm();
    mean_norm /= static_cast<double>(cb.size());
    ccs_drift = std::max(ccs_drift, std::abs(mean_norm / cb.anchor.norm() - 1.0));
    ccs_draw_drift = std::max(ccs_draw_drift, ccs::max_initial_norm_drift(cb));
    const ccs::SampleBatch& gb = r.batches[2 * t + 1];
    const double s = gb.scale;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < gb.size(); ++i) {
      const double v = gb.initial[i].squaredNorm();
      const double delta = v - mean;
      mean += delta / static_cast<double>(i + 1);
      m2 += delta * (v - mean);
      gp_mean_drift += std::abs(gb.initial[i].norm() / gb.anchor.norm() - 1.0);
    }
    const double se = std::sqrt(m2 / static_cast<double>(gb.size() - 1) / static_cast<double>(gb.size()));
    const double predicted = gb.anchor.squaredNorm() + s * s * 64.0;
    gp_worst_z = std::max(gp_worst_z, std::abs(mean - predicted) / se);
  }
  gp_mean_drift /= 8.0 * 120.0;
  const bool ok = ccs_wins >= 7 && ccs_drift <= 0.05 && gp_worst_z <= 3.0;
  return {ok, fmt("CCS PSNR above GP on %d/8 targets (need >= 7); CCS drift of E|x_T'| %.4f (need <= 0.05), "
                  "largest single draw %.4f; GP mean |x_T'|^2 within %.2f SE of |x_T|^2 + s^2 d (need <= 3), GP mean "
                  "per-draw drift %.4f",
                  ccs_wins, ccs_drift, ccs_draw_drift, gp_worst_z, gp_mean_drift)};
}

Outcome ode_consistency() {
  const NoiseSchedule s = NoiseSchedule::linear();
  const ScoreField f(GaussianMixture::standard_normal(16));
  ccs::Rng rng = ccs::make_rng(91);
  const Vector xT = ccs::standard_normal(rng, 16);
  const Vector ddim = ccs::ddim_sample(s, f, xT).endpoint();
  const Vector rk = ccs::ode_integrate(s, f, xT, 4096, ccs::OdeMethod::rk4);
  const double rel = (rk - ddim).norm() / ddim.norm();
  // The exact flow for N(0, I) keeps the state fixed.
  const Vector exact = xT;
  std::vector<double> errs;
  for (int n : {512, 1024, 2048, 4096})
    errs.push_back((ccs::ode_integrate(s, f, xT, n, ccs::OdeMethod::euler) - exact).norm());
  bool halving = true;
  std::string ratios;
  for (std::size_t i = 1; i < errs.size(); ++i) {
    const double ratio = errs[i - 1] / errs[i];
    halving = halving && std::abs(ratio - 2.0) <= 0.4;
    ratios += fmt("%s%.3f", ratios.empty() ? "" : ", ", ratio);
  }
  return {rel <= 1e-3 && halving,
          fmt("rk4(4096) vs DDIM(T=50) relative difference %.4e (need <= 1e-3); Euler error ratios %s (need 2 +- 0.4)",
              rel, ratios.c_str())};
}

Outcome round_trip() {
  const NoiseSchedule s = NoiseSchedule::linear();
  const ScoreField g(GaussianMixture::standard_normal(32));
  ccs::Rng rng = ccs::make_rng(101);
  const Vector x0 = ccs::standard_normal(rng, 32);
  const Vector xT = ccs::ddim_invert(s, g, x0, s.steps(), ccs::InversionOptions{50, 1e-14});
  const double single = (ccs::ddim_generate(s, g, xT, s.steps()) - x0).norm();

  const GaussianMixture m = ccs::two_cluster_mixture(64);
  const ScoreField f(m);
  const auto targets = ccs::draw_targets(m, 4, 102);
  std::vector<double> errs;
  for (int T : {50, 100, 200, 500}) {
    const NoiseSchedule sT = NoiseSchedule::linear(T);
    double e = 0.0;
    for (const Vector& t : targets) e += (ccs::ddim_generate(sT, f, ccs::ddim_invert(sT, f, t, T), T) - t).norm();
    errs.push_back(e / static_cast<double>(targets.size()));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errs.size(); ++i) monotone = monotone && errs[i] < errs[i - 1];
  return {single <= 1e-10 && monotone,
          fmt("refined single-Gaussian round trip %.3e (need <= 1e-10); mixture first-order errors %.3e, %.3e, %.3e, "
              "%.3e (need strictly decreasing)",
              single, errs[0], errs[1], errs[2], errs[3])};
}

Outcome verify_ledger() {
  const auto start = std::chrono::steady_clock::now();
  const ccs::Ledger ledger = ccs::verify_suite(0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string failed;
  for (const auto& e : ledger.entries)
    if (!e.passed) failed += (failed.empty() ? "" : ", ") + e.id;
  return {ledger.all_passed() && secs < 300.0,
          fmt("%zu/%zu checks passed in %.1f s (need all, < 300 s)%s%s", ledger.entries.size() - ledger.failures(),
              ledger.entries.size(), secs, failed.empty() ? "" : "; failed: ", failed.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "linearity, single Gaussian", 10.0,
       [] { return linearity(GaussianMixture::standard_normal(64), 4, 24, 1.0 - 1e-6); }},
      {2, "linearity, two-cluster mixture", 120.0,
       [] { return linearity(ccs::two_cluster_mixture(64), 8, 64, 0.97); }},
      {3, "Jacobian vs finite differences", 30.0, jacobian},
      {4, "Lipschitz product bound", 60.0, lipschitz},
      {5, "norm concentration bound", 30.0, concentration},
      {6, "norm drift trace identity", 5.0, norm_drift},
      {7, "input distance control", 30.0, distance_control},
      {8, "controller convergence", 0.0, controller},
      {9, "baseline dominance direction", 0.0, baselines},
      {10, "ODE and DDIM consistency", 0.0, ode_consistency},
      {11, "inversion round trip", 0.0, round_trip},
      {12, "verify ledger", 300.0, verify_ledger},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      out.passed = false;
      out.detail += fmt("; runtime %.1f s over budget %.0f s", secs, c.budget_s);
    }
    std::cout << (out.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << out.detail
              << fmt(" [%.2f s]", secs) << std::endl;
    failures += out.passed ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
