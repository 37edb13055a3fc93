#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "ccs/control.hpp"
#include "ccs/geometry.hpp"
#include "ccs/metrics.hpp"
#include "ccs/mixture.hpp"
#include "ccs/protocols.hpp"
#include "ccs/report.hpp"
#include "ccs/sampler.hpp"
#include "ccs/schedule.hpp"
#include "ccs/testbeds.hpp"

namespace ccs {

struct LedgerEntry {
  std::string id;
  std::string module;
  std::string claim;
  double measured = 0.0;
  std::string threshold;
  bool passed = false;

  bool operator==(const LedgerEntry& o) const {
    const bool same_measured = measured == o.measured || (std::isnan(measured) && std::isnan(o.measured));
    return id == o.id && module == o.module && claim == o.claim && same_measured && threshold == o.threshold &&
           passed == o.passed;
  }
};

struct Ledger {
  std::vector<LedgerEntry> entries;

  bool all_passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return !entries.empty();
  }
  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.passed ? 0 : 1;
    return n;
  }
  const LedgerEntry* find(std::string_view id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }
  bool operator==(const Ledger&) const = default;
};

struct VerifyOptions {
  // Ladder checked by the schedule monotonicity entries; the default schedule when empty.
  std::optional<std::vector<double>> schedule_alpha_bar;
};

inline const std::vector<std::string> kLedgerColumns{"id", "module", "claim", "measured", "threshold", "passed"};

inline TableReport make_ledger_report(ReportMeta meta, const Ledger& ledger) {
  meta.kind = "verify";
  TableReport r{std::move(meta), {kLedgerColumns, {}}};
  for (const auto& e : ledger.entries)
    r.table.rows.push_back({e.id, e.module, e.claim, format_double(e.measured), e.threshold, format_bool(e.passed)});
  return r;
}

namespace detail {

struct Measurement {
  double value = 0.0;
  bool passed = false;
};

class LedgerBuilder {
 public:
  void check(std::string id, std::string module, std::string claim, std::string threshold,
             const std::function<Measurement()>& body) {
    LedgerEntry e{std::move(id), std::move(module), std::move(claim), 0.0, std::move(threshold), false};
    try {
      const Measurement m = body();
      e.measured = m.value;
      e.passed = m.passed && !std::isnan(m.value);
    } catch (const std::exception& ex) {
      e.measured = std::numeric_limits<double>::quiet_NaN();
      e.claim += " [error: " + std::string(ex.what()) + "]";
    }
    ledger_.entries.push_back(std::move(e));
  }
  Ledger take() { return std::move(ledger_); }

 private:
  Ledger ledger_;
};

inline GaussianMixture random_mixture(Eigen::Index d, std::size_t K, bool full, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<MixtureComponent> comps;
  const double w = 1.0 / static_cast<double>(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Vector mean = 1.5 * standard_normal(rng, d);
    Covariance cov = Covariance::isotropic(d, 1.0);
    if (full) {
      Matrix a(d, d);
      for (Eigen::Index j = 0; j < d; ++j) a.col(j) = standard_normal(rng, d);
      Matrix s = 0.3 * a * a.transpose();
      s.diagonal().array() += 0.5;
      cov = Covariance::full(0.5 * (s + s.transpose()));
    } else {
      const Vector z = standard_normal(rng, d);
      cov = Covariance::diagonal((0.3 + z.array().square() * 0.4).matrix());
    }
    comps.push_back({w, mean, cov, std::nullopt});
  }
  double total = 0.0;
  for (const auto& c : comps) total += c.weight;
  comps.back().weight += 1.0 - total;
  return GaussianMixture(std::move(comps));
}

inline double product_of_contractions(const NoiseSchedule& s, int t_start) {
  double p = 1.0;
  for (int t = t_start; t >= 1; --t) {
    const DdimCoeffs c = s.ddim_coeffs(t);
    p *= c.eta - c.lambda;
  }
  return p;
}

}  // namespace detail

/// Runs every module-level invariant at small fixed configurations and
/// records measured value, threshold and verdict. Checks never throw; an
/// exception inside a check is recorded as a failed entry.
inline Ledger verify_suite(std::uint64_t seed, const VerifyOptions& opts = {}) {
  using detail::Measurement;
  detail::LedgerBuilder b;
  const NoiseSchedule sched = NoiseSchedule::linear();
  const NoiseSchedule base = NoiseSchedule::linear(LinearBetaLadder{}, LinearBetaLadder{}.base_steps - 1);
  const auto sub = [&](std::uint64_t k) { return derive_seed(seed, k); };

  // ---- schedule
  const std::vector<double> ladder = opts.schedule_alpha_bar.value_or(sched.alpha_bars());
  b.check("schedule.alpha_bar_decreasing", "schedule", "alpha_bar strictly decreasing over the grid",
          "violations == 0", [&] {
            double bad = 0;
            for (std::size_t t = 1; t < ladder.size(); ++t) bad += ladder[t] < ladder[t - 1] ? 0 : 1;
            return Measurement{bad, bad == 0};
          });
  b.check("schedule.sigma_increasing", "schedule", "sigma strictly increasing over the grid", "violations == 0",
          [&] {
            double bad = 0;
            for (std::size_t t = 1; t < ladder.size(); ++t)
              bad += sigma_from_alpha_bar(ladder[t]) > sigma_from_alpha_bar(ladder[t - 1]) ? 0 : 1;
            return Measurement{bad, bad == 0};
          });
  b.check("schedule.ladder_valid", "schedule", "alpha_bar in (0, 1], endpoints near 1 and near 0",
          "violations == 0", [&] {
            const double n = static_cast<double>(schedule_violations(ladder).size());
            return Measurement{n, n == 0};
          });
  b.check("schedule.noise_coefficient_small", "schedule",
          "|f(1)| < 1e-2 and |f(1)| < |f(T)| on the base ladder", "|f(1)| < 1e-2", [&] {
            const double f1 = std::abs(base.noise_coefficient(1));
            const double fT = std::abs(base.noise_coefficient(base.steps()));
            return Measurement{f1, f1 < 1e-2 && f1 < fT};
          });
  b.check("schedule.coefficients_expand", "schedule",
          "eta x + lambda g matches the expanded update for random x and g", "max relative error <= 1e-12", [&] {
            Rng rng = make_rng(sub(1));
            double worst = 0.0;
            for (int t = 1; t <= sched.steps(); ++t) {
              const Vector x = standard_normal(rng, 8);
              const Vector g = standard_normal(rng, 8);
              const double cur = sched.alpha_bar(t);
              const double prev = sched.alpha_bar(t - 1);
              const Vector eps = -std::sqrt(1.0 - cur) * g;
              const Vector expanded =
                  std::sqrt(prev) * (x - std::sqrt(1.0 - cur) * eps) / std::sqrt(cur) + std::sqrt(1.0 - prev) * eps;
              const DdimCoeffs c = sched.ddim_coeffs(t);
              worst = std::max(worst, (c.eta * x + c.lambda * g - expanded).norm() / expanded.norm());
            }
            return Measurement{worst, worst <= 1e-12};
          });

  // ---- score model
  b.check("score.gradient_of_log_density", "scoremodel", "score matches central differences of log density (d <= 5)",
          "max error <= 1e-6", [&] {
            double worst = 0.0;
            Rng rng = make_rng(sub(2));
            for (int inst = 0; inst < 4; ++inst) {
              const auto d = static_cast<Eigen::Index>(2 + inst);
              const GaussianMixture m = detail::random_mixture(d, 3, inst % 2 == 0, sub(100 + inst));
              const double ab = 0.3 + 0.15 * inst;
              const MixtureMarginal mm = m.marginal(ab);
              const Vector x = 1.5 * standard_normal(rng, d);
              const Vector s = mm.score(x);
              const double h = 1e-5;
              for (Eigen::Index i = 0; i < d; ++i) {
                Vector xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                const double fd = (mm.log_density(xp) - mm.log_density(xm)) / (2 * h);
                worst = std::max(worst, std::abs(fd - s[i]) / std::max(1.0, std::abs(s[i])));
              }
            }
            return Measurement{worst, worst <= 1e-6};
          });
  b.check("score.hessian_is_jacobian", "scoremodel", "Hessian matches central differences of the score",
          "max error <= 1e-5", [&] {
            double worst = 0.0;
            Rng rng = make_rng(sub(3));
            for (int inst = 0; inst < 4; ++inst) {
              const auto d = static_cast<Eigen::Index>(2 + inst);
              const GaussianMixture m = detail::random_mixture(d, 3, inst % 2 == 1, sub(200 + inst));
              const MixtureMarginal mm = m.marginal(0.5);
              const Vector x = 1.5 * standard_normal(rng, d);
              const Matrix H = mm.hessian(x);
              const double h = 1e-5;
              for (Eigen::Index i = 0; i < d; ++i) {
                Vector xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                const Vector col = (mm.score(xp) - mm.score(xm)) / (2 * h);
                worst = std::max(worst, (col - H.col(i)).cwiseAbs().maxCoeff() / std::max(1.0, H.col(i).norm()));
              }
            }
            return Measurement{worst, worst <= 1e-5};
          });
  b.check("score.standard_normal_identity", "scoremodel", "score of N(0, I) equals -x at every alpha_bar",
          "max error <= 1e-12", [&] {
            const GaussianMixture m = GaussianMixture::standard_normal(6);
            Rng rng = make_rng(sub(4));
            double worst = 0.0;
            for (int t = 0; t <= sched.steps(); t += 7) {
              const Vector x = 3.0 * standard_normal(rng, 6);
              worst = std::max(worst, (m.score(x, sched.alpha_bar(t)) + x).cwiseAbs().maxCoeff());
            }
            return Measurement{worst, worst <= 1e-12};
          });
  b.check("score.posterior_normalized", "scoremodel", "posterior weights sum to 1", "max |sum - 1| <= 1e-12", [&] {
    const GaussianMixture m = detail::random_mixture(4, 5, true, sub(5));
    Rng rng = make_rng(sub(6));
    double worst = 0.0;
    for (int t = 0; t <= sched.steps(); t += 5) {
      const Vector x = 6.0 * standard_normal(rng, 4);
      worst = std::max(worst, std::abs(m.marginal(sched.alpha_bar(t)).posterior(x).sum() - 1.0));
    }
    return Measurement{worst, worst <= 1e-12};
  });

  // ---- sampler
  const GaussianMixture gauss16 = GaussianMixture::standard_normal(16);
  const GaussianMixture pair16 = two_cluster_mixture(16);
  b.check("sampler.deterministic", "sampler", "identical inputs give bit-identical trajectories", "differences == 0",
          [&] {
            const ScoreField f(pair16);
            Rng rng = make_rng(sub(7));
            const Vector xT = standard_normal(rng, 16);
            const Trajectory a = ddim_sample(sched, f, xT);
            const Trajectory c = ddim_sample(sched, f, xT);
            double diff = 0;
            for (std::size_t i = 0; i < a.states.size(); ++i) diff += (a.states[i].array() != c.states[i].array()).count();
            return Measurement{diff, diff == 0};
          });
  b.check("sampler.single_gaussian_linear", "sampler",
          "|x_0(x_T + l D) - x_0(x_T)| = |l| prod(c_t) |D| for N(0, I)", "max relative error <= 1e-10", [&] {
            const ScoreField f(gauss16);
            const double prod = detail::product_of_contractions(sched, sched.steps());
            Rng rng = make_rng(sub(8));
            const Vector xT = standard_normal(rng, 16);
            const Vector delta = standard_normal(rng, 16);
            const Vector base_out = ddim_generate(sched, f, xT, sched.steps());
            double worst = 0.0;
            for (double lam : {1e-3, 1e-1, 1.0, 5.0}) {
              const double got = (ddim_generate(sched, f, xT + lam * delta, sched.steps()) - base_out).norm();
              const double want = lam * prod * delta.norm();
              worst = std::max(worst, std::abs(got - want) / want);
            }
            return Measurement{worst, worst <= 1e-10};
          });
  b.check("sampler.lipschitz_bound", "sampler",
          "response ratio |dx_0| / (|l| |D|) on a shared-covariance mixture stays below prod(eta + |lambda| |H|)",
          "max ratio / bound <= 1", [&] {
            const ScoreField f(pair16);
            const double bound = sampler_lipschitz_bound(sched, f, sched.steps());
            Rng rng = make_rng(sub(9));
            double worst = 0.0;
            for (int trial = 0; trial < 4; ++trial) {
              const Vector xT = standard_normal(rng, 16);
              const Vector delta = standard_normal(rng, 16);
              const Vector out = ddim_generate(sched, f, xT, sched.steps());
              for (double lam : {1e-3, 1e-2, 1e-1, 1.0, 2.0}) {
                const double r = (ddim_generate(sched, f, xT + lam * delta, sched.steps()) - out).norm() /
                                 (lam * delta.norm());
                worst = std::max(worst, r / bound);
              }
            }
            return Measurement{worst, std::isfinite(worst) && worst <= 1.0};
          });
  b.check("sampler.remainder_superlinear", "sampler",
          "first-order remainder shrinks faster than l as l -> 0", "max r(l/10) / r(l) <= 0.05", [&] {
            const ScoreField f(pair16);
            Rng rng = make_rng(sub(10));
            const Vector xT = standard_normal(rng, 16);
            const Vector delta = standard_normal(rng, 16).normalized();
            const Vector out = ddim_generate(sched, f, xT, sched.steps());
            const double h = 1e-4;
            const Vector slope = (ddim_generate(sched, f, xT + h * delta, sched.steps()) -
                                  ddim_generate(sched, f, xT - h * delta, sched.steps())) /
                                 (2 * h);
            std::vector<double> rem;
            for (double lam : {1e-1, 1e-2, 1e-3})
              rem.push_back((ddim_generate(sched, f, xT + lam * delta, sched.steps()) - out - lam * slope).norm());
            const double worst = std::max(rem[1] / rem[0], rem[2] / rem[1]);
            return Measurement{worst, worst <= 0.05};
          });
  b.check("sampler.jacobian_matches_differences", "sampler",
          "carried Jacobian matches central differences along random directions", "max relative error <= 1e-4",
          [&] {
            const GaussianMixture m = two_cluster_mixture(8);
            const ScoreField f(m);
            Rng rng = make_rng(sub(11));
            const Vector xT = standard_normal(rng, 8);
            const JacobianResult jr = jacobian_propagate(sched, f, xT);
            double worst = 0.0;
            for (int k = 0; k < 4; ++k) {
              const Vector v = standard_normal(rng, 8).normalized();
              const double h = 1e-3;
              const Vector fd = (ddim_generate(sched, f, xT + h * v, sched.steps()) -
                                 ddim_generate(sched, f, xT - h * v, sched.steps())) /
                                (2 * h);
              const Vector jv = jr.gamma * v;
              worst = std::max(worst, (fd - jv).norm() / jv.norm());
            }
            return Measurement{worst, worst <= 1e-4};
          });
  b.check("sampler.refined_round_trip", "sampler",
          "refined inversion then sampling reproduces x_0 for a single Gaussian", "relative error <= 1e-10", [&] {
            const ScoreField f(gauss16);
            Rng rng = make_rng(sub(12));
            const Vector x0 = standard_normal(rng, 16);
            const Vector xT = ddim_invert(sched, f, x0, sched.steps(), InversionOptions{50, 1e-14});
            const double err = (ddim_generate(sched, f, xT, sched.steps()) - x0).norm() / x0.norm();
            return Measurement{err, err <= 1e-10};
          });

  // ---- noise geometry
  b.check("geometry.slerp_norm", "noise_geometry", "slerp of equal-norm inputs keeps the norm",
          "max relative deviation <= 1e-10", [&] {
            Rng rng = make_rng(sub(13));
            double worst = 0.0;
            for (int k = 0; k < 20; ++k) {
              const Vector a = standard_normal(rng, 32);
              Vector e = standard_normal(rng, 32);
              e *= a.norm() / e.norm();
              const double theta = angle_between(a, e);
              for (int j = 0; j <= 10; ++j) {
                const Vector s = slerp(SlerpInputs{a, e, theta * j / 10.0, theta});
                worst = std::max(worst, std::abs(s.norm() - a.norm()) / a.norm());
              }
            }
            return Measurement{worst, worst <= 1e-10};
          });
  b.check("geometry.slerp_monotone", "noise_geometry", "chord from the anchor grows strictly with c0 on [0, theta]",
          "violations == 0", [&] {
            Rng rng = make_rng(sub(14));
            double bad = 0;
            for (int k = 0; k < 10; ++k) {
              const Vector a = standard_normal(rng, 32);
              const Vector e = standard_normal(rng, 32);
              const double theta = angle_between(a, e);
              double last = -1.0;
              for (int j = 0; j <= 50; ++j) {
                const double chord = (slerp(SlerpInputs{a, e, theta * j / 50.0, theta}) - a).norm();
                if (!(chord > last)) bad += 1;
                last = chord;
              }
            }
            return Measurement{bad, bad == 0};
          });
  b.check("geometry.drift_direction", "noise_geometry", "E|x + dx|^2 exceeds |x|^2 for nonzero-variance dx",
          "estimate - |x|^2 > 0", [&] {
            Rng rng = make_rng(sub(15));
            const Vector x = standard_normal(rng, 1000);
            const NormDrift d = norm_drift_stats(x, IsotropicNormalDelta{0.1}, 2000, sub(16));
            return Measurement{d.mean_norm_sq - d.base_norm_sq, d.mean_norm_sq > d.base_norm_sq};
          });
  b.check("geometry.drift_trace_identity", "noise_geometry", "E|x + dx|^2 = |x|^2 + tr Cov within 3 standard errors",
          "|z| <= 3", [&] {
            Rng rng = make_rng(sub(17));
            const Vector x = standard_normal(rng, 1000);
            const NormDrift d = norm_drift_stats(x, IsotropicNormalDelta{0.5}, 10000, sub(18));
            const double z = (d.mean_norm_sq - d.predicted) / d.standard_error;
            return Measurement{z, std::abs(z) <= 3.0};
          });
  b.check("geometry.gaussian_norm_concentration", "noise_geometry",
          "|eps|^2 / d within 1 +- 0.05 at d = 1e4", "frequency >= 0.99", [&] {
            const double freq = concentration_frequency(10000, 0.05, 1000, sub(19));
            return Measurement{freq, freq >= 0.99};
          });
  b.check("geometry.concentration_bound", "noise_geometry", "bound at d = 50000, delta = 0.025",
          "bound >= 0.999", [&] {
            const double v = concentration_bound(50000, 0.025);
            return Measurement{v, v >= 0.999};
          });

  // ---- control
  const SamplingContext ctx64{sched, two_cluster_mixture(64), InversionOptions{}, 1, -1.0};
  const std::vector<Vector> targets64 = draw_targets(ctx64.model, 2, sub(20));
  b.check("control.ccs_norm_preserved", "ccs_control",
          "every CCS draw keeps |x_T'| within 5% of |x_T| at d = 1000", "max relative drift <= 0.05", [&] {
            const SamplingContext ctx{sched, two_cluster_mixture(1000), InversionOptions{}, 1, -1.0};
            const Vector target = draw_targets(ctx.model, 1, sub(21)).front();
            const SampleBatch batch = ccs_full_sample(ctx, target, 0.6, 64, sub(22));
            const double worst = max_initial_norm_drift(batch);
            return Measurement{worst, worst <= 0.05};
          });
  b.check("control.gp_norm_drift", "ccs_control",
          "GP at the CCS input distance pushes |x_T'| beyond 5% at d = 1000", "mean relative drift > 0.05", [&] {
            const SamplingContext ctx{sched, two_cluster_mixture(1000), InversionOptions{}, 1, -1.0};
            const Vector target = draw_targets(ctx.model, 1, sub(21)).front();
            const SampleBatch ccs = ccs_full_sample(ctx, target, 0.6, 64, sub(22));
            double chord = 0.0;
            for (const Vector& v : ccs.initial) chord += (v - ccs.anchor).norm();
            chord /= static_cast<double>(ccs.size());
            const double s = chord / std::sqrt(1000.0);
            const SampleBatch gp = gp_sample(ctx, target, s, 64, sub(23));
            double drift = 0.0;
            for (const Vector& v : gp.initial) drift += (v.norm() - gp.anchor.norm()) / gp.anchor.norm();
            drift /= static_cast<double>(gp.size());
            return Measurement{drift, drift > 0.05};
          });
  b.check("control.unbiased_small_c0", "ccs_control",
          "|mean(x_0') - x_0| <= 3 standard errors at c0 = 0.4 (d = 64, n = 256)", "ratio <= 3", [&] {
            double worst = 0.0;
            for (std::size_t t = 0; t < targets64.size(); ++t) {
              SamplingContext exact = ctx64;
              exact.inversion = InversionOptions{50, 1e-14};
              const SampleBatch batch = ccs_full_sample(exact, targets64[t], 0.4, 256, sub(24 + t));
              const Vector mean = sample_mean(batch.samples);
              double trace = 0.0;
              for (const Vector& s : batch.samples) trace += (s - mean).squaredNorm();
              trace /= static_cast<double>(batch.size() - 1);
              const double se = std::sqrt(trace / static_cast<double>(batch.size()));
              worst = std::max(worst, (mean - targets64[t]).norm() / se);
            }
            return Measurement{worst, worst <= 3.0};
          });
  b.check("control.monotone_response", "ccs_control",
          "batch rmse is nondecreasing in c0 up to 2 standard errors (n = 256 per point)", "violations == 0", [&] {
            const PreparedTarget prepared(ctx64, targets64.front(), Mechanism::ccs_full);
            double last_mean = -1.0, last_se = 0.0, bad = 0;
            for (int k = 0; k <= 8; ++k) {
              const double c0 = 0.05 + (std::numbers::pi / 2 - 0.05) * k / 8.0;
              const SampleBatch batch = prepared.draw(c0, 256, derive_seed(sub(26), static_cast<std::uint64_t>(k)));
              std::vector<double> r(batch.size());
              for (std::size_t i = 0; i < batch.size(); ++i) r[i] = batch.per_coord_rmse(i);
              double mean = 0.0, var = 0.0;
              for (double v : r) mean += v;
              mean /= static_cast<double>(r.size());
              for (double v : r) var += (v - mean) * (v - mean);
              var /= static_cast<double>(r.size() - 1);
              const double se = std::sqrt(var / static_cast<double>(r.size()));
              if (last_mean >= 0.0 && mean < last_mean - 2.0 * std::hypot(se, last_se)) bad += 1;
              last_mean = mean;
              last_se = se;
            }
            return Measurement{bad, bad == 0};
          });
  b.check("control.worker_independent", "ccs_control", "same mechanism, scale and seed give the same batch for 1 and 3 workers",
          "differences == 0", [&] {
            SamplingContext threaded = ctx64;
            threaded.workers = 3;
            const SampleBatch a = ccs_full_sample(ctx64, targets64.front(), 0.5, 12, sub(27));
            const SampleBatch c = ccs_full_sample(threaded, targets64.front(), 0.5, 12, sub(27));
            double diff = 0;
            for (std::size_t i = 0; i < a.size(); ++i) diff += (a.samples[i].array() != c.samples[i].array()).count();
            return Measurement{diff, diff == 0};
          });
  b.check("control.partial_matches_full", "ccs_control",
          "partial inversion at t0 = T matches full inversion per draw when alpha_bar[T] is negligible",
          "max per-draw difference <= 1e-8", [&] {
            std::vector<double> ab(51);
            for (int t = 0; t <= 50; ++t)
              ab[static_cast<std::size_t>(t)] = std::exp(std::log(0.9999) + (std::log(1e-24) - std::log(0.9999)) * t / 50.0);
            const SamplingContext ctx{NoiseSchedule::from_alpha_bar(ab), GaussianMixture::standard_normal(64),
                                      InversionOptions{}, 1, -1.0};
            Rng rng = make_rng(sub(28));
            const Vector target = standard_normal(rng, 64);
            const SampleBatch full = ccs_full_sample(ctx, target, 0.7, 16, sub(29));
            const SampleBatch part = ccs_partial_sample(ctx, target, 0.7, 50, 16, sub(29));
            double worst = 0.0;
            for (std::size_t i = 0; i < full.size(); ++i) worst = std::max(worst, (full.samples[i] - part.samples[i]).norm());
            return Measurement{worst, worst <= 1e-8};
          });
  b.check("control.controller_lower_boundary", "ccs_control",
          "a target below the c0 = 0 floor returns a scale near the lower bound", "final scale <= pi/8", [&] {
            const PreparedTarget prepared(SamplingContext{sched, GaussianMixture::standard_normal(16),
                                                          InversionOptions{50, 1e-14}, 1, -1.0},
                                          Vector::Constant(16, 0.3), Mechanism::ccs_full);
            ControllerConfig cfg;
            cfg.target = 0.02;
            cfg.tol = 0.019;
            cfg.max_iters = 12;
            cfg.seed = sub(30);
            const ControllerTrace tr = controller_tune(prepared, cfg);
            return Measurement{tr.final_scale, tr.converged && tr.final_scale <= std::numbers::pi / 8};
          });

  // ---- lab
  b.check("lab.r2_exact_line", "lab_cli", "fit of y = 2 sin(c0) + 0.1 recovers a, b and R^2 = 1",
          "max error <= 1e-12", [&] {
            std::vector<double> x, y;
            for (int i = 0; i < 8; ++i) {
              x.push_back(std::sin(0.1 * i));
              y.push_back(2.0 * x.back() + 0.1);
            }
            const LinearFit f = fit_line(x, y);
            const double err =
                std::max({std::abs(f.slope - 2.0), std::abs(f.intercept - 0.1), std::abs(r_squared(x, y) - 1.0)});
            return Measurement{err, err <= 1e-12};
          });
  b.check("lab.r2_range", "lab_cli", "R^2 lies in [0, 1] on random inputs", "violations == 0", [&] {
    Rng rng = make_rng(sub(31));
    double bad = 0;
    for (int k = 0; k < 50; ++k) {
      const Vector xs = standard_normal(rng, 10);
      const Vector ys = standard_normal(rng, 10);
      const double r2 = r_squared(std::span<const double>(xs.data(), 10), std::span<const double>(ys.data(), 10));
      if (!(r2 >= 0.0 && r2 <= 1.0)) bad += 1;
    }
    return Measurement{bad, bad == 0};
  });
  b.check("lab.metric_examples", "lab_cli", "rmse((3, 4)) = 5 / sqrt 2 and psnr at rmse 0.02 = 40 dB",
          "max error <= 1e-12", [&] {
            const double r = rmse(Vector::Constant(2, 0.0), (Vector(2) << 3.0, 4.0).finished());
            const std::vector<Vector> batch{Vector::Constant(4, 0.02)};
            const double p = psnr_of_mean(batch, Vector::Zero(4), 2.0);
            const double err = std::max(std::abs(r - 5.0 / std::sqrt(2.0)), std::abs(p - 40.0));
            return Measurement{err, err <= 1e-12};
          });
  b.check("lab.csv_round_trip", "lab_cli", "parse(emit(report)) reproduces linearity and compare reports",
          "mismatches == 0", [&] {
            const SamplingContext ctx{sched, two_cluster_mixture(8), InversionOptions{}, 1, -1.0};
            const std::vector<Vector> targets = draw_targets(ctx.model, 2, sub(32));
            ReportMeta meta;
            meta.seed = seed;
            meta.config = {{"experiment", {{"seed", seed}}}};
            const LinearityReport lin =
                make_linearity_report(meta, linearity_protocol(ctx, targets, LinearityOptions{3, 4, 0.9, ScaleGrid::random_uniform, sub(33)}));
            CompareOptions co;
            co.controller.batch_size = 4;
            co.controller.max_iters = 2;
            co.eval_samples = 4;
            co.seed = sub(34);
            const CompareReport cmp = make_compare_report(meta, compare_baselines(ctx, targets, co));
            double bad = 0;
            bad += linearity_from_document(parse_csv(emit_csv(to_document(lin)))) == lin ? 0 : 1;
            bad += compare_from_document(parse_csv(emit_csv(to_document(cmp)))) == cmp ? 0 : 1;
            return Measurement{bad, bad == 0};
          });

  return b.take();
}

}  // namespace ccs
