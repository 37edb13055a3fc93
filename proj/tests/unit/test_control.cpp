#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "ccs/control.hpp"
#include "ccs/testbeds.hpp"

namespace {

using ccs::GaussianMixture;
using ccs::InversionOptions;
using ccs::NoiseSchedule;
using ccs::SampleBatch;
using ccs::SamplingContext;
using ccs::Vector;

constexpr InversionOptions kExact{50, 1e-14};

double contraction_product(const NoiseSchedule& s, int t_start) {
  double p = 1.0;
  for (int t = 1; t <= t_start; ++t) {
    const double a = s.alpha_bar(t - 1), b = s.alpha_bar(t);
    p *= std::sqrt(a * b) + std::sqrt((1 - a) * (1 - b));
  }
  return p;
}

SamplingContext gaussian_ctx(Eigen::Index d, InversionOptions inv = kExact) {
  return {NoiseSchedule::linear(), GaussianMixture::standard_normal(d), inv, 1, -1.0};
}

SamplingContext mixture_ctx(Eigen::Index d = 64, InversionOptions inv = {}) {
  return {NoiseSchedule::linear(), ccs::two_cluster_mixture(d), inv, 1, -1.0};
}

Vector some_target(Eigen::Index d, std::uint64_t seed) {
  ccs::Rng rng = ccs::make_rng(seed);
  return ccs::standard_normal(rng, d);
}

// ---- full inversion

TEST(CcsFull, ZeroScaleReproducesTarget) {
  const SamplingContext ctx = gaussian_ctx(16);
  const Vector x0 = some_target(16, 1);
  const SampleBatch b = ccs::ccs_full_sample(ctx, x0, 0.0, 8, 2);
  for (const Vector& s : b.samples) EXPECT_LE((s - x0).norm(), 1e-8);
}

TEST(CcsFull, SingleGaussianResidualIsScaledInputDistance) {
  const SamplingContext ctx = gaussian_ctx(64);
  const Vector x0 = some_target(64, 3);
  const double prod = contraction_product(ctx.schedule, ctx.schedule.steps());
  for (double c0 : {0.1, 0.5, 1.2}) {
    const SampleBatch b = ccs::ccs_full_sample(ctx, x0, c0, 16, 4);
    for (std::size_t i = 0; i < b.size(); ++i)
      EXPECT_NEAR(b.residual_norm(i), prod * (b.initial[i] - b.anchor).norm(), 1e-10 * b.residual_norm(i));
  }
}

TEST(CcsFull, SingleGaussianResidualFollowsChordLength) {
  // Target chosen so that its inverted state has norm sqrt(d), matching fresh noise.
  const Eigen::Index d = 4096;
  const SamplingContext ctx = gaussian_ctx(d);
  const double prod = contraction_product(ctx.schedule, ctx.schedule.steps());
  Vector xT = some_target(d, 5);
  xT *= std::sqrt(static_cast<double>(d)) / xT.norm();
  const Vector x0 = ccs::ddim_generate(ctx.schedule, ccs::ScoreField(ctx.model), xT, ctx.schedule.steps());
  for (double c0 : {0.2, 0.6, 1.0}) {
    const SampleBatch b = ccs::ccs_full_sample(ctx, x0, c0, 16, 6);
    const double chord = 2.0 * b.anchor.norm() * std::sin(c0 / 2);
    EXPECT_NEAR(ccs::mean_residual_norm(b), prod * chord, 0.02 * prod * chord);
  }
}

TEST(CcsFull, MixtureMeanWithinThreeStandardErrorsPerCoordinate) {
  const SamplingContext ctx = mixture_ctx(64);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 7).front();
  const SampleBatch b = ccs::ccs_full_sample(ctx, x0, 0.4, 256, 8);
  const Vector mean = ccs::sample_mean(b.samples);
  int within = 0;
  for (Eigen::Index j = 0; j < 64; ++j) {
    double var = 0.0;
    for (const Vector& s : b.samples) var += (s[j] - mean[j]) * (s[j] - mean[j]);
    var /= static_cast<double>(b.size() - 1);
    within += std::abs(mean[j] - x0[j]) <= 3.0 * std::sqrt(var / static_cast<double>(b.size())) ? 1 : 0;
  }
  EXPECT_GE(within, static_cast<int>(std::ceil(0.95 * 64)));
}

TEST(CcsFull, InversionComputedOncePerCall) {
  const SamplingContext ctx = mixture_ctx(8);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 9).front();
  const SampleBatch b = ccs::ccs_full_sample(ctx, x0, 0.3, 4, 10);
  const ccs::ScoreField f(ctx.model);
  EXPECT_EQ(b.anchor, ccs::ddim_invert(ctx.schedule, f, x0, ctx.schedule.steps()));
  EXPECT_EQ(b.start_step, ctx.schedule.steps());
  ASSERT_EQ(b.draw_seeds.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(b.draw_seeds[i], ccs::derive_seed(10, i));
}

TEST(CcsFull, ScaleBoundsAndDegeneracy) {
  const SamplingContext ctx = gaussian_ctx(4, {});
  const Vector x0 = some_target(4, 11);
  EXPECT_THROW(ccs::ccs_full_sample(ctx, x0, 1.6, 2, 1), ccs::RangeError);
  EXPECT_THROW(ccs::ccs_full_sample(ctx, x0, -0.1, 2, 1), ccs::RangeError);
  EXPECT_THROW(ccs::ccs_full_sample(ctx, Vector::Zero(3), 0.1, 2, 1), ccs::InputError);
  // In one dimension every noise draw is collinear with the anchor.
  EXPECT_THROW(ccs::ccs_full_sample(gaussian_ctx(1, {}), Vector::Constant(1, 0.5), 0.3, 1, 1), ccs::DegeneracyError);
}

TEST(CcsFull, NormPreservedAtHighDimensionUnlikeGaussianPerturbation) {
  const SamplingContext ctx = mixture_ctx(1000);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 12).front();
  const SampleBatch ccs_batch = ccs::ccs_full_sample(ctx, x0, 0.6, 64, 13);
  EXPECT_LE(ccs::max_initial_norm_drift(ccs_batch), 0.05);
  double chord = 0.0;
  for (const Vector& v : ccs_batch.initial) chord += (v - ccs_batch.anchor).norm();
  chord /= static_cast<double>(ccs_batch.size());
  const SampleBatch gp = ccs::gp_sample(ctx, x0, chord / std::sqrt(1000.0), 64, 14);
  int violations = 0;
  for (const Vector& v : gp.initial) violations += std::abs(v.norm() / gp.anchor.norm() - 1.0) > 0.05 ? 1 : 0;
  EXPECT_GT(violations, 32);
}

TEST(CcsFull, DeterministicAcrossWorkerCounts) {
  SamplingContext one = mixture_ctx(32);
  SamplingContext many = one;
  many.workers = 4;
  const Vector x0 = ccs::draw_targets(one.model, 1, 15).front();
  const SampleBatch a = ccs::ccs_full_sample(one, x0, 0.7, 10, 16);
  const SampleBatch b = ccs::ccs_full_sample(many, x0, 0.7, 10, 16);
  const SampleBatch c = ccs::ccs_full_sample(one, x0, 0.7, 10, 16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i], b.samples[i]);
    EXPECT_EQ(a.samples[i], c.samples[i]);
  }
}

// ---- partial inversion

TEST(CcsPartial, ZeroScaleReproducesRoundTripAtT0) {
  const SamplingContext ctx = mixture_ctx(16);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 17).front();
  const ccs::ScoreField f(ctx.model);
  const Vector round_trip = ccs::ddim_generate(ctx.schedule, f, ccs::ddim_invert(ctx.schedule, f, x0, 20), 20);
  const SampleBatch b = ccs::ccs_partial_sample(ctx, x0, 0.0, 20, 3, 18);
  for (const Vector& s : b.samples) EXPECT_EQ(s, round_trip);
}

TEST(CcsPartial, FullDepthMatchesFullInversionUpToExtraction) {
  // The two differ only through sqrt(alpha_bar[T]) x_0, which the extraction
  // removes before interpolating.
  const Vector x0 = some_target(64, 19);
  const SamplingContext ctx = gaussian_ctx(64, {});
  const SampleBatch full = ccs::ccs_full_sample(ctx, x0, 0.7, 16, 20);
  const SampleBatch part = ccs::ccs_partial_sample(ctx, x0, 0.7, ctx.schedule.steps(), 16, 20);
  const double scale = std::sqrt(ctx.schedule.alpha_bar(ctx.schedule.steps())) * x0.norm();
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_LE((full.samples[i] - part.samples[i]).norm(), 3.0 * scale);

  std::vector<double> ab(51);
  for (int t = 0; t <= 50; ++t)
    ab[static_cast<std::size_t>(t)] = std::exp(std::log(0.9999) + (std::log(1e-24) - std::log(0.9999)) * t / 50.0);
  const SamplingContext tiny{NoiseSchedule::from_alpha_bar(ab), GaussianMixture::standard_normal(64), {}, 1, -1.0};
  const SampleBatch full2 = ccs::ccs_full_sample(tiny, x0, 0.7, 16, 20);
  const SampleBatch part2 = ccs::ccs_partial_sample(tiny, x0, 0.7, 50, 16, 20);
  for (std::size_t i = 0; i < full2.size(); ++i) EXPECT_LE((full2.samples[i] - part2.samples[i]).norm(), 1e-8);
}

TEST(CcsPartial, ResidualGrowsWithScale) {
  const SamplingContext ctx = mixture_ctx(64);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 21).front();
  const ccs::PreparedTarget prepared(ctx, x0, ccs::Mechanism::ccs_partial, 25);
  const double r1 = ccs::mean_residual_norm(prepared.draw(0.1, 64, 22));
  const double r3 = ccs::mean_residual_norm(prepared.draw(0.3, 64, 23));
  const double r6 = ccs::mean_residual_norm(prepared.draw(0.6, 64, 24));
  EXPECT_GT(r3, r1);
  EXPECT_GT(r6, r3);
}

TEST(CcsPartial, StepBounds) {
  const SamplingContext ctx = mixture_ctx(8);
  const Vector x0 = Vector::Zero(8);
  EXPECT_THROW(ccs::ccs_partial_sample(ctx, x0, 0.1, 0, 2, 1), ccs::DomainError);
  EXPECT_THROW(ccs::ccs_partial_sample(ctx, x0, 0.1, 51, 2, 1), ccs::DomainError);
}

// ---- editing

TEST(CcsEdit, SameLabelsCollapseToPartial) {
  const SamplingContext ctx = mixture_ctx(16);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 27).front();
  const SampleBatch e = ccs::ccs_edit_sample(ctx, x0, 0.4, 20, 6, 28, "A", "A", 3.0);
  const SampleBatch p =
      ccs::ccs_partial_sample(ctx, x0, 0.4, 20, 6, 28, ccs::CfgSpec{3.0, "A"}, ccs::CfgSpec{3.0, "A"});
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e.samples[i], p.samples[i]);
}

TEST(CcsEdit, ZeroScaleIsDeterministicAndMovesTowardTargetLabel) {
  const SamplingContext ctx = mixture_ctx(16);
  const auto& comps = ctx.model.components();
  const Vector mean_a = comps[0].mean, mean_b = comps[1].mean;
  ccs::Rng rng = ccs::make_rng(29);
  const Vector x0 = mean_a + 0.2 * ccs::standard_normal(rng, 16);
  const SampleBatch e1 = ccs::ccs_edit_sample(ctx, x0, 0.0, 25, 2, 30, "A", "B", 3.0);
  const SampleBatch e2 = ccs::ccs_edit_sample(ctx, x0, 0.0, 25, 2, 31, "A", "B", 3.0);
  EXPECT_EQ(e1.samples[0], e2.samples[1]);
  const ccs::ScoreField f(ctx.model);
  const Vector round_trip = ccs::ddim_generate(ctx.schedule, f, ccs::ddim_invert(ctx.schedule, f, x0, 25), 25);
  EXPECT_LT((e1.samples[0] - mean_b).norm(), (round_trip - mean_b).norm());
}

TEST(CcsEdit, UnknownLabelsRejected) {
  const SamplingContext ctx = mixture_ctx(8);
  EXPECT_THROW(ccs::ccs_edit_sample(ctx, Vector::Zero(8), 0.1, 10, 2, 1, "A", "Z", 2.0), ccs::InputError);
  EXPECT_THROW(ccs::ccs_edit_sample(ctx, Vector::Zero(8), 0.1, 10, 2, 1, "Z", "B", 2.0), ccs::InputError);
}

// ---- baselines

TEST(Gp, ZeroScaleReproducesTarget) {
  const SamplingContext ctx = gaussian_ctx(16);
  const Vector x0 = some_target(16, 32);
  for (const Vector& s : ccs::gp_sample(ctx, x0, 0.0, 4, 33).samples) EXPECT_LE((s - x0).norm(), 1e-8);
  EXPECT_THROW(ccs::gp_sample(ctx, x0, -0.5, 4, 33), ccs::RangeError);
}

TEST(Gp, NormDriftFollowsTraceIdentity) {
  const SamplingContext ctx = gaussian_ctx(256, {});
  const Vector x0 = some_target(256, 34);
  const double s = 0.4;
  const SampleBatch b = ccs::gp_sample(ctx, x0, s, 2000, 35);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double v = b.initial[i].squaredNorm();
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double se = std::sqrt(m2 / static_cast<double>(b.size() - 1) / static_cast<double>(b.size()));
  EXPECT_LE(std::abs(mean - (b.anchor.squaredNorm() + s * s * 256)), 3.0 * se);
}

TEST(Gp, SingleGaussianResidualIsScaledNoiseNorm) {
  const SamplingContext ctx = gaussian_ctx(64);
  const Vector x0 = some_target(64, 36);
  const double prod = contraction_product(ctx.schedule, ctx.schedule.steps());
  const SampleBatch b = ccs::gp_sample(ctx, x0, 0.3, 32, 37);
  double mean = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double eps_norm = (b.initial[i] - b.anchor).norm() / 0.3;
    EXPECT_NEAR(b.residual_norm(i), prod * 0.3 * eps_norm, 1e-10);
    mean += b.residual_norm(i);
  }
  mean /= static_cast<double>(b.size());
  EXPECT_NEAR(mean, prod * 0.3 * 8.0, 0.1 * prod * 0.3 * 8.0);
}

TEST(Ccdf, SingleGaussianClosedForm) {
  const SamplingContext ctx = gaussian_ctx(32, {});
  const Vector x0 = some_target(32, 38);
  for (int t0 : {1, 10, 50}) {
    const SampleBatch b = ccs::ccdf_sample(ctx, x0, t0, 4, 39);
    const double a = ctx.schedule.alpha_bar(t0);
    const double prod = contraction_product(ctx.schedule, t0);
    EXPECT_EQ(b.start_step, t0);
    for (std::size_t i = 0; i < b.size(); ++i) {
      ccs::Rng rng = ccs::make_rng(b.draw_seeds[i]);
      const Vector eps = ccs::standard_normal(rng, 32);
      const Vector expected = prod * (std::sqrt(a) * x0 + std::sqrt(1 - a) * eps);
      EXPECT_LE((b.samples[i] - expected).norm(), 1e-12 * expected.norm());
    }
  }
}

TEST(Ccdf, DiversityGrowsWithStartStep) {
  const SamplingContext ctx = mixture_ctx(64);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 40).front();
  double last = 0.0;
  for (int t0 : {1, 5, 20, 50}) {
    const double div = ccs::batch_diversity(ccs::ccdf_sample(ctx, x0, t0, 32, 41));
    EXPECT_GT(div, last);
    last = div;
  }
  const double near = ccs::batch_diversity(ccs::ccdf_sample(ctx, x0, 1, 32, 42));
  const double noise = std::sqrt(1.0 - ctx.schedule.alpha_bar(1));
  EXPECT_LT(near, noise);
}

TEST(Ccdf, DeterministicAndBounded) {
  const SamplingContext ctx = mixture_ctx(16);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 43).front();
  const SampleBatch a = ccs::ccdf_sample(ctx, x0, 20, 5, 44);
  const SampleBatch b = ccs::ccdf_sample(ctx, x0, 20, 5, 44);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
  EXPECT_THROW(ccs::ccdf_sample(ctx, x0, 0, 2, 1), ccs::RangeError);
  EXPECT_THROW(ccs::ccdf_sample(ctx, x0, 51, 2, 1), ccs::RangeError);
  const ccs::PreparedTarget p(ctx, x0, ccs::Mechanism::ccdf);
  EXPECT_THROW(p.draw(2.5, 2, 1), ccs::RangeError);
}

TEST(Sample, SpecDispatch) {
  const SamplingContext ctx = mixture_ctx(8);
  const Vector x0 = ccs::draw_targets(ctx.model, 1, 45).front();
  ccs::PerturbationSpec spec;
  spec.mechanism = ccs::Mechanism::gp;
  spec.scale = 0.2;
  spec.seed = 46;
  const SampleBatch a = ccs::sample(ctx, x0, spec, 3);
  const SampleBatch b = ccs::gp_sample(ctx, x0, 0.2, 3, 46);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
  EXPECT_EQ(ccs::parse_mechanism("ccdf"), ccs::Mechanism::ccdf);
  EXPECT_THROW(ccs::parse_mechanism("ilvr"), ccs::InputError);
}

// ---- controller

TEST(Controller, BelowFloorTargetStopsNearLowerBound) {
  const SamplingContext ctx = gaussian_ctx(16);
  const ccs::PreparedTarget p(ctx, some_target(16, 47), ccs::Mechanism::ccs_full);
  ccs::ControllerConfig cfg;
  cfg.target = 0.01;
  cfg.tol = 0.0099;
  cfg.max_iters = 20;
  cfg.seed = 48;
  const ccs::ControllerTrace tr = ccs::controller_tune(p, cfg);
  EXPECT_TRUE(tr.converged);
  EXPECT_LT(tr.final_scale, 0.05);
}

TEST(Controller, BracketHalvesEveryIteration) {
  const SamplingContext ctx = mixture_ctx(64);
  const ccs::PreparedTarget p(ctx, ccs::draw_targets(ctx.model, 1, 49).front(), ccs::Mechanism::ccs_full);
  ccs::ControllerConfig cfg;
  cfg.target = 0.12;
  cfg.tol = 1e-6;
  cfg.max_iters = 6;
  cfg.seed = 50;
  const ccs::ControllerTrace tr = ccs::controller_tune(p, cfg);
  ASSERT_EQ(tr.iterations.size(), 6u);
  EXPECT_FALSE(tr.converged);
  ASSERT_TRUE(tr.boundary.has_value());
  for (std::size_t i = 0; i < tr.iterations.size(); ++i) {
    const auto& s = tr.iterations[i];
    EXPECT_NEAR(s.high - s.low, (std::numbers::pi / 2) / std::pow(2.0, static_cast<double>(i)), 1e-15);
    EXPECT_DOUBLE_EQ(s.scale, 0.5 * (s.low + s.high));
  }
  const auto& last = tr.iterations.back();
  EXPECT_GE(tr.final_scale, last.low);
  EXPECT_LE(tr.final_scale, last.high);
}

TEST(Controller, ConvergedRunsHitTolerance) {
  const SamplingContext ctx = mixture_ctx(64);
  const auto targets = ccs::draw_targets(ctx.model, 3, 51);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const ccs::PreparedTarget p(ctx, targets[t], ccs::Mechanism::ccs_full);
    ccs::ControllerConfig cfg;
    cfg.seed = 52 + t;
    const ccs::ControllerTrace tr = ccs::controller_tune(p, cfg);
    if (tr.converged) {
      EXPECT_LT(std::abs(tr.iterations.back().measured - cfg.target), cfg.tol);
    }
    EXPECT_LE(tr.iterations.size(), 6u);
  }
}

TEST(Controller, UnreachableTargetReportsBoundary) {
  const SamplingContext ctx = mixture_ctx(16);
  const ccs::PreparedTarget p(ctx, ccs::draw_targets(ctx.model, 1, 53).front(), ccs::Mechanism::ccs_full);
  ccs::ControllerConfig cfg;
  cfg.target = 50.0;
  cfg.tol = 0.1;
  cfg.seed = 54;
  const ccs::ControllerTrace tr = ccs::controller_tune(p, cfg);
  EXPECT_FALSE(tr.converged);
  ASSERT_TRUE(tr.boundary.has_value());
  EXPECT_DOUBLE_EQ(tr.boundary->scale, std::numbers::pi / 2);
  EXPECT_LT(tr.boundary->measured, cfg.target);
}

TEST(Controller, IntegerBisectionForCcdf) {
  const SamplingContext ctx = mixture_ctx(64);
  const ccs::PreparedTarget p(ctx, ccs::draw_targets(ctx.model, 1, 55).front(), ccs::Mechanism::ccdf);
  ccs::ControllerConfig cfg;
  cfg.seed = 56;
  cfg.max_iters = 8;
  const ccs::ControllerTrace tr = ccs::controller_tune(p, cfg);
  for (const auto& s : tr.iterations) {
    EXPECT_EQ(s.scale, std::round(s.scale));
    EXPECT_GE(s.scale, s.low);
    EXPECT_LE(s.scale, s.high);
  }
  EXPECT_EQ(tr.final_scale, std::round(tr.final_scale));
}

TEST(Controller, IntegerBisectionPrefersSmallerStepOnTies) {
  // Response equals the scale; target 2.5 sits halfway between 2 and 3.
  ccs::ControllerConfig cfg;
  cfg.target = 2.5;
  cfg.tol = 0.01;
  cfg.max_iters = 10;
  const auto tr = ccs::bisect_scale([](double s, std::uint64_t) { return s; }, ccs::ScaleBracket{1.0, 8.0, true}, cfg);
  EXPECT_FALSE(tr.converged);
  EXPECT_EQ(tr.final_scale, 2.0);
}

TEST(Controller, ConfigValidation) {
  ccs::ControllerConfig cfg;
  cfg.tol = 0.2;
  EXPECT_THROW(cfg.validate(), ccs::InputError);
  cfg = {};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), ccs::InputError);
  cfg = {};
  cfg.target = 0.0;
  EXPECT_THROW(cfg.validate(), ccs::InputError);
}

TEST(Controller, RawNormMetric) {
  const SamplingContext ctx = mixture_ctx(16);
  const ccs::PreparedTarget p(ctx, ccs::draw_targets(ctx.model, 1, 57).front(), ccs::Mechanism::ccs_full);
  const SampleBatch b = p.draw(0.5, 8, 58);
  EXPECT_NEAR(ccs::batch_diversity(b, ccs::DiversityMetric::raw_norm),
              4.0 * ccs::batch_diversity(b, ccs::DiversityMetric::rmse), 1e-12);
}

}  // namespace
