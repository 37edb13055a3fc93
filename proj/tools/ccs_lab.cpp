#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ccs/ccs.hpp"

namespace {

enum ExitCode { kOk = 0, kInputError = 1, kNumericalError = 2, kVerifyFailed = 3 };

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "JSON config, or a CSV report whose embedded config is reused")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "master seed (overrides experiment.seed)");
  sub->add_option("--out", f.out, "output path (default: stdout)");
  sub->add_option("--format", f.format, "output format")->check(CLI::IsMember({"csv", "json"}));
}

ccs::ExperimentConfig load(const CommonFlags& f) {
  if (f.config_path.empty()) return ccs::parse_config(nlohmann::json::object(), f.seed);
  return ccs::load_config(f.config_path, f.seed);
}

ccs::ReportMeta meta_for(const ccs::ExperimentConfig& cfg) {
  ccs::ReportMeta m;
  m.seed = cfg.experiment.seed;
  m.config = cfg.raw;
  return m;
}

void write(const CommonFlags& f, ccs::CsvDocument doc, double seconds) {
  doc.meta.set("wall_clock_s", ccs::format_double(seconds));
  const std::string text = f.format == "json" ? ccs::document_to_json(doc).dump(2) + "\n" : ccs::emit_csv(doc);
  if (f.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(f.out);
  if (!os) throw ccs::InputError("cannot write '" + f.out + "'");
  os << text;
}

const ccs::Vector& pick_target(const std::vector<ccs::Vector>& targets, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= targets.size())
    throw ccs::InputError("--target " + std::to_string(id) + " out of range (" + std::to_string(targets.size()) +
                          " targets)");
  return targets[static_cast<std::size_t>(id)];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controllable diffusion sampling lab over analytic Gaussian mixtures"};
  app.require_subcommand(1);

  CommonFlags flags;
  int target_id = 0;
  std::optional<double> scale;
  std::optional<int> n_draws;
  std::optional<int> t_stop;
  bool inject_fault = false;

  auto* sample = app.add_subcommand("sample", "draw a batch with the configured mechanism");
  add_common(sample, flags);
  sample->add_option("--target", target_id, "target index");
  sample->add_option("--scale", scale, "override mechanism.scale");
  sample->add_option("--n", n_draws, "override mechanism.n");

  auto* invert = app.add_subcommand("invert", "invert each target and report the round trip");
  add_common(invert, flags);
  invert->add_option("--t-stop", t_stop, "inversion stop step (default T)");

  auto* linearity = app.add_subcommand("linearity", "residual-versus-scale linearity protocol");
  add_common(linearity, flags);

  auto* tune = app.add_subcommand("tune", "bisect the mechanism scale to the target diversity");
  add_common(tune, flags);
  tune->add_option("--target", target_id, "target index");

  auto* compare = app.add_subcommand("compare", "tune and evaluate every configured mechanism");
  add_common(compare, flags);

  auto* concentration = app.add_subcommand("concentration", "Gaussian norm concentration bound and frequency");
  add_common(concentration, flags);

  auto* verify = app.add_subcommand("verify", "run the invariant ledger");
  add_common(verify, flags);
  verify->add_flag("--inject-schedule-fault", inject_fault, "check a non-monotone ladder (must be flagged)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  try {
    const ccs::ExperimentConfig cfg = load(flags);
    const ccs::SamplingContext ctx = cfg.context();
    const std::uint64_t seed = cfg.experiment.seed;

    if (sample->parsed()) {
      const auto targets = cfg.targets();
      ccs::PerturbationSpec spec{cfg.mechanism.kind, scale.value_or(cfg.mechanism.scale), cfg.partial_t0(),
                                 cfg.mechanism.cfg_invert, cfg.mechanism.cfg_sample,
                                 ccs::derive_seed(seed, static_cast<std::uint64_t>(target_id))};
      const ccs::SampleBatch batch = ccs::sample(ctx, pick_target(targets, target_id), spec, n_draws.value_or(cfg.mechanism.n));
      write(flags, ccs::to_document(ccs::make_batch_report(meta_for(cfg), batch, target_id)), elapsed());
      return kOk;
    }

    if (invert->parsed()) {
      const auto targets = cfg.targets();
      const int stop = t_stop.value_or(cfg.schedule.steps());
      const ccs::ScoreField field(cfg.model, cfg.mechanism.cfg_invert);
      ccs::TableReport r{meta_for(cfg),
                         {{"target_id", "t_stop", "x0_norm", "xT_norm", "xT_norm_sq_per_dim", "roundtrip_rmse"}, {}}};
      r.meta.kind = "invert";
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const ccs::Vector xT = ccs::ddim_invert(cfg.schedule, field, targets[i], stop, cfg.mechanism.inversion);
        const ccs::Vector back = ccs::ddim_generate(cfg.schedule, field, xT, stop);
        r.table.rows.push_back({std::to_string(i), std::to_string(stop), ccs::format_double(targets[i].norm()),
                                ccs::format_double(xT.norm()),
                                ccs::format_double(xT.squaredNorm() / static_cast<double>(xT.size())),
                                ccs::format_double(ccs::rmse(back, targets[i]))});
      }
      write(flags, ccs::to_document(r), elapsed());
      return kOk;
    }

    if (linearity->parsed()) {
      ccs::LinearityOptions opts = cfg.experiment.linearity;
      opts.seed = seed;
      const auto result = ccs::linearity_protocol(ctx, cfg.targets(), opts);
      write(flags, ccs::to_document(ccs::make_linearity_report(meta_for(cfg), result)), elapsed());
      return kOk;
    }

    if (tune->parsed()) {
      const auto targets = cfg.targets();
      const ccs::PreparedTarget prepared(ctx, pick_target(targets, target_id), cfg.mechanism.kind, cfg.partial_t0(),
                                         cfg.mechanism.cfg_invert, cfg.mechanism.cfg_sample);
      ccs::ControllerConfig cc = cfg.controller;
      cc.seed = seed;
      const ccs::ControllerTrace trace = ccs::controller_tune(prepared, cc);
      write(flags, ccs::to_document(ccs::make_trace_report(meta_for(cfg), cfg.mechanism.kind, target_id, trace)),
            elapsed());
      return kOk;
    }

    if (compare->parsed()) {
      ccs::CompareOptions opts;
      opts.mechanisms = cfg.experiment.mechanisms;
      opts.controller = cfg.controller;
      opts.eval_samples = cfg.experiment.eval_samples;
      opts.partial_t0 = cfg.partial_t0();
      opts.data_range = cfg.experiment.data_range;
      opts.seed = seed;
      const auto result = ccs::compare_baselines(ctx, cfg.targets(), opts);
      write(flags, ccs::to_document(ccs::make_compare_report(meta_for(cfg), result)), elapsed());
      return kOk;
    }

    if (concentration->parsed()) {
      ccs::TableReport r{meta_for(cfg), {{"d", "delta", "bound", "draws", "frequency"}, {}}};
      r.meta.kind = "concentration";
      for (std::size_t i = 0; i < cfg.experiment.concentration.size(); ++i) {
        const auto [d, delta] = cfg.experiment.concentration[i];
        const bool mc = d <= cfg.experiment.concentration_max_mc_dim && cfg.experiment.concentration_draws > 0;
        const std::int64_t draws = mc ? cfg.experiment.concentration_draws : 0;
        const double freq = mc ? ccs::concentration_frequency(d, delta, draws, ccs::derive_seed(seed, i))
                               : std::numeric_limits<double>::quiet_NaN();
        r.table.rows.push_back({std::to_string(d), ccs::format_double(delta),
                                ccs::format_double(ccs::concentration_bound(d, delta)), std::to_string(draws),
                                ccs::format_double(freq)});
      }
      write(flags, ccs::to_document(r), elapsed());
      return kOk;
    }

    if (verify->parsed()) {
      ccs::VerifyOptions vo;
      if (inject_fault) {
        std::vector<double> ab = cfg.schedule.alpha_bars();
        std::swap(ab[ab.size() / 2], ab[ab.size() / 2 + 1]);
        vo.schedule_alpha_bar = std::move(ab);
      }
      const ccs::Ledger ledger = ccs::verify_suite(seed, vo);
      ccs::TableReport r = ccs::make_ledger_report(meta_for(cfg), ledger);
      r.meta.set("passed", ccs::format_bool(ledger.all_passed()));
      write(flags, ccs::to_document(r), elapsed());
      for (const auto& e : ledger.entries)
        if (!e.passed) std::cerr << "FAILED " << e.id << ": measured " << e.measured << ", need " << e.threshold << '\n';
      return ledger.all_passed() ? kOk : kVerifyFailed;
    }
  } catch (const ccs::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const ccs::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const ccs::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
  return kInputError;
}
