#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccs/control.hpp"
#include "ccs/errors.hpp"
#include "ccs/mixture.hpp"
#include "ccs/protocols.hpp"
#include "ccs/report.hpp"
#include "ccs/schedule.hpp"
#include "ccs/testbeds.hpp"

namespace ccs {

using nlohmann::json;

struct MechanismConfig {
  Mechanism kind = Mechanism::ccs_full;
  double scale = 0.4;
  int t0 = 0;  // 0: T / 2 for ccs_partial
  int n = 24;
  CfgSpec cfg_invert{};
  CfgSpec cfg_sample{};
  InversionOptions inversion{};
  int workers = 1;
  double gp_scale_max = -1.0;
};

struct ExperimentSettings {
  std::uint64_t seed = 0;
  std::vector<Vector> inline_targets;
  int target_count = 4;
  std::uint64_t target_seed = 0;
  LinearityOptions linearity{};
  std::vector<Mechanism> mechanisms{Mechanism::ccs_full, Mechanism::gp};
  int eval_samples = 120;
  double data_range = 2.0;
  std::vector<std::pair<std::int64_t, double>> concentration{{1000, 0.1}, {50000, 0.025}};
  std::int64_t concentration_draws = 100000;
  std::int64_t concentration_max_mc_dim = 10000;
};

struct ExperimentConfig {
  json raw = json::object();  // the document as loaded, with the effective seed applied
  NoiseSchedule schedule = NoiseSchedule::linear();
  GaussianMixture model = GaussianMixture::standard_normal(1);
  MechanismConfig mechanism{};
  ControllerConfig controller{};
  ExperimentSettings experiment{};

  SamplingContext context() const {
    return SamplingContext{schedule, model, mechanism.inversion, mechanism.workers, mechanism.gp_scale_max};
  }

  std::vector<Vector> targets() const {
    if (!experiment.inline_targets.empty()) return experiment.inline_targets;
    return draw_targets(model, experiment.target_count, experiment.target_seed);
  }

  int partial_t0() const { return mechanism.t0 > 0 ? mechanism.t0 : std::max(1, schedule.steps() / 2); }
};

namespace detail {

inline void allow_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw InputError(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw InputError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + "." + key + " has the wrong type");
  }
}

inline Vector to_vector(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty()) throw InputError(where + " must be a non-empty array of numbers");
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw InputError(where + " must contain only numbers");
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

inline std::vector<Vector> read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<Vector> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t") + 1);
      vals.push_back(parse_double(cell));
    }
    rows.push_back(Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  if (rows.empty()) throw InputError("'" + path.string() + "' holds no rows");
  return rows;
}

inline NoiseSchedule parse_schedule(const json& s) {
  const std::string kind = get_or<std::string>(s, "kind", "linear", "schedule");
  if (kind == "linear") {
    allow_keys(s, "schedule", {"kind", "beta_start", "beta_end", "base_steps", "ddim_steps"});
    LinearBetaLadder ladder;
    ladder.beta_start = get_or(s, "beta_start", ladder.beta_start, "schedule");
    ladder.beta_end = get_or(s, "beta_end", ladder.beta_end, "schedule");
    ladder.base_steps = get_or(s, "base_steps", ladder.base_steps, "schedule");
    return NoiseSchedule::linear(ladder, get_or(s, "ddim_steps", 50, "schedule"));
  }
  if (kind == "explicit") {
    allow_keys(s, "schedule", {"kind", "alpha_bar"});
    if (!s.contains("alpha_bar")) throw InputError("schedule.alpha_bar is required for kind 'explicit'");
    const Vector v = to_vector(s.at("alpha_bar"), "schedule.alpha_bar");
    return NoiseSchedule::from_alpha_bar(std::vector<double>(v.data(), v.data() + v.size()));
  }
  throw InputError("schedule.kind must be 'linear' or 'explicit'");
}

inline Covariance parse_covariance(const json& c, Eigen::Index d, const std::string& where) {
  allow_keys(c, where, {"diag", "full"});
  if (c.contains("diag") == c.contains("full")) throw InputError(where + " needs exactly one of 'diag' or 'full'");
  if (c.contains("diag")) {
    const json& v = c.at("diag");
    if (v.is_number()) return Covariance::isotropic(d, v.get<double>());
    return Covariance::diagonal(to_vector(v, where + ".diag"));
  }
  const json& rows = c.at("full");
  if (!rows.is_array() || rows.size() != static_cast<std::size_t>(d))
    throw InputError(where + ".full must be a d x d array");
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Vector r = to_vector(rows[static_cast<std::size_t>(i)], where + ".full");
    if (r.size() != d) throw InputError(where + ".full must be a d x d array");
    m.row(i) = r.transpose();
  }
  return Covariance::full(std::move(m));
}

inline GaussianMixture parse_model(const json& m, const std::filesystem::path& base_dir) {
  const std::string kind = get_or<std::string>(m, "kind", "two_cluster", "model");
  if (kind == "standard_normal") {
    allow_keys(m, "model", {"kind", "dim"});
    return GaussianMixture::standard_normal(get_or(m, "dim", 64, "model"));
  }
  if (kind == "two_cluster") {
    allow_keys(m, "model", {"kind", "dim", "offset", "std"});
    return two_cluster_mixture(get_or(m, "dim", 64, "model"), get_or(m, "offset", 1.0, "model"),
                               get_or(m, "std", 0.2, "model"));
  }
  if (kind != "mixture") throw InputError("model.kind must be 'mixture', 'two_cluster' or 'standard_normal'");
  allow_keys(m, "model", {"kind", "weights", "means", "means_csv", "covariance", "labels"});

  std::vector<Vector> means;
  if (m.contains("means") == m.contains("means_csv"))
    throw InputError("model needs exactly one of 'means' or 'means_csv'");
  if (m.contains("means")) {
    const json& rows = m.at("means");
    if (!rows.is_array() || rows.empty()) throw InputError("model.means must be a non-empty array of rows");
    for (const auto& r : rows) means.push_back(to_vector(r, "model.means"));
  } else {
    std::filesystem::path p = m.at("means_csv").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    means = read_matrix_csv(p);
  }
  const std::size_t K = means.size();
  const Eigen::Index d = means.front().size();

  std::vector<double> weights(K, 1.0 / static_cast<double>(K));
  if (m.contains("weights")) {
    const Vector w = to_vector(m.at("weights"), "model.weights");
    if (static_cast<std::size_t>(w.size()) != K) throw InputError("model.weights length must equal the number of means");
    weights.assign(w.data(), w.data() + w.size());
  }

  std::vector<Covariance> covs;
  if (!m.contains("covariance")) {
    covs.assign(K, Covariance::isotropic(d, 1.0));
  } else if (m.at("covariance").is_array()) {
    const json& arr = m.at("covariance");
    if (arr.size() != K) throw InputError("model.covariance array length must equal the number of means");
    for (std::size_t k = 0; k < K; ++k)
      covs.push_back(parse_covariance(arr[k], d, "model.covariance[" + std::to_string(k) + "]"));
  } else {
    covs.assign(K, parse_covariance(m.at("covariance"), d, "model.covariance"));
  }

  std::vector<std::optional<std::string>> labels(K);
  if (m.contains("labels")) {
    const json& arr = m.at("labels");
    if (!arr.is_array() || arr.size() != K) throw InputError("model.labels length must equal the number of means");
    for (std::size_t k = 0; k < K; ++k)
      if (!arr[k].is_null()) labels[k] = arr[k].get<std::string>();
  }

  std::vector<MixtureComponent> comps;
  for (std::size_t k = 0; k < K; ++k) comps.push_back({weights[k], means[k], covs[k], labels[k]});
  return GaussianMixture(std::move(comps));
}

inline CfgSpec parse_cfg(const json& c, const std::string& where) {
  allow_keys(c, where, {"gamma", "condition"});
  CfgSpec spec;
  if (c.contains("condition") && !c.at("condition").is_null()) {
    spec.condition = c.at("condition").get<std::string>();
    spec.gamma = 3.0;
  }
  spec.gamma = get_or(c, "gamma", spec.gamma, where);
  return spec;
}

inline MechanismConfig parse_mechanism_section(const json& m) {
  allow_keys(m, "mechanism",
             {"kind", "scale", "t0", "n", "cfg", "cfg_invert", "cfg_sample", "refine_iters", "workers", "gp_scale_max"});
  MechanismConfig out;
  out.kind = parse_mechanism(get_or<std::string>(m, "kind", "ccs_full", "mechanism"));
  out.scale = get_or(m, "scale", out.scale, "mechanism");
  out.t0 = get_or(m, "t0", out.t0, "mechanism");
  out.n = get_or(m, "n", out.n, "mechanism");
  if (m.contains("cfg")) out.cfg_invert = out.cfg_sample = parse_cfg(m.at("cfg"), "mechanism.cfg");
  if (m.contains("cfg_invert")) out.cfg_invert = parse_cfg(m.at("cfg_invert"), "mechanism.cfg_invert");
  if (m.contains("cfg_sample")) out.cfg_sample = parse_cfg(m.at("cfg_sample"), "mechanism.cfg_sample");
  out.inversion.refine_iters = get_or(m, "refine_iters", 0, "mechanism");
  out.workers = get_or(m, "workers", 1, "mechanism");
  out.gp_scale_max = get_or(m, "gp_scale_max", -1.0, "mechanism");
  if (out.n < 1) throw InputError("mechanism.n must be >= 1");
  if (out.workers < 1) throw InputError("mechanism.workers must be >= 1");
  if (out.inversion.refine_iters < 0) throw InputError("mechanism.refine_iters must be >= 0");
  return out;
}

inline ControllerConfig parse_controller(const json& c) {
  allow_keys(c, "controller", {"mse_target", "tol", "batch_size", "max_iters", "metric"});
  ControllerConfig out;
  out.target = get_or(c, "mse_target", out.target, "controller");
  out.tol = get_or(c, "tol", out.tol, "controller");
  out.batch_size = get_or(c, "batch_size", out.batch_size, "controller");
  out.max_iters = get_or(c, "max_iters", out.max_iters, "controller");
  const std::string metric = get_or<std::string>(c, "metric", "rmse", "controller");
  if (metric == "rmse") out.metric = DiversityMetric::rmse;
  else if (metric == "raw_norm") out.metric = DiversityMetric::raw_norm;
  else throw InputError("controller.metric must be 'rmse' or 'raw_norm'");
  out.validate();
  return out;
}

inline ExperimentSettings parse_experiment(const json& e) {
  allow_keys(e, "experiment",
             {"seed", "targets", "target_seed", "n_scales", "samples_per_scale", "scale_max", "grid", "mechanisms",
              "eval_samples", "data_range", "concentration", "concentration_draws", "concentration_max_mc_dim"});
  ExperimentSettings out;
  out.seed = get_or<std::uint64_t>(e, "seed", 0, "experiment");
  out.target_seed = get_or<std::uint64_t>(e, "target_seed", derive_seed(out.seed, 0x7a76e7), "experiment");
  if (e.contains("targets")) {
    const json& t = e.at("targets");
    if (t.is_number_integer()) {
      out.target_count = t.get<int>();
      if (out.target_count < 1) throw InputError("experiment.targets must be >= 1");
    } else if (t.is_array()) {
      for (const auto& row : t) out.inline_targets.push_back(to_vector(row, "experiment.targets"));
      if (out.inline_targets.empty()) throw InputError("experiment.targets must not be empty");
    } else {
      throw InputError("experiment.targets must be a count or an array of states");
    }
  }
  out.linearity.n_scales = get_or(e, "n_scales", out.linearity.n_scales, "experiment");
  out.linearity.samples_per_scale = get_or(e, "samples_per_scale", out.linearity.samples_per_scale, "experiment");
  out.linearity.scale_max = get_or(e, "scale_max", out.linearity.scale_max, "experiment");
  const std::string grid = get_or<std::string>(e, "grid", "random", "experiment");
  if (grid == "random") out.linearity.grid = ScaleGrid::random_uniform;
  else if (grid == "fixed") out.linearity.grid = ScaleGrid::fixed;
  else throw InputError("experiment.grid must be 'random' or 'fixed'");
  if (e.contains("mechanisms")) {
    out.mechanisms.clear();
    for (const auto& m : e.at("mechanisms")) out.mechanisms.push_back(parse_mechanism(m.get<std::string>()));
  }
  out.eval_samples = get_or(e, "eval_samples", out.eval_samples, "experiment");
  out.data_range = get_or(e, "data_range", out.data_range, "experiment");
  if (e.contains("concentration")) {
    out.concentration.clear();
    for (const auto& pair : e.at("concentration")) {
      if (!pair.is_array() || pair.size() != 2) throw InputError("experiment.concentration entries are [d, delta]");
      out.concentration.emplace_back(pair[0].get<std::int64_t>(), pair[1].get<double>());
    }
  }
  out.concentration_draws = get_or(e, "concentration_draws", out.concentration_draws, "experiment");
  out.concentration_max_mc_dim = get_or(e, "concentration_max_mc_dim", out.concentration_max_mc_dim, "experiment");
  return out;
}

}  // namespace detail

/// Builds a configuration from a JSON document. `seed_override` replaces
/// experiment.seed and is written back into `raw` so the embedded copy reruns
/// identically.
inline ExperimentConfig parse_config(json doc, std::optional<std::uint64_t> seed_override = std::nullopt,
                                     const std::filesystem::path& base_dir = ".") {
  if (doc.is_null()) doc = json::object();
  detail::allow_keys(doc, "config", {"schedule", "model", "mechanism", "controller", "experiment"});
  if (seed_override) doc["experiment"]["seed"] = *seed_override;
  ExperimentConfig cfg;
  try {
    cfg.schedule = detail::parse_schedule(doc.value("schedule", json::object()));
    cfg.model = detail::parse_model(doc.value("model", json::object()), base_dir);
    cfg.mechanism = detail::parse_mechanism_section(doc.value("mechanism", json::object()));
    cfg.controller = detail::parse_controller(doc.value("controller", json::object()));
    cfg.experiment = detail::parse_experiment(doc.value("experiment", json::object()));
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  for (const Vector& t : cfg.experiment.inline_targets)
    if (t.size() != cfg.model.dim()) throw InputError("experiment.targets rows must have length d");
  if (cfg.mechanism.kind == Mechanism::ccs_partial && cfg.mechanism.t0 > cfg.schedule.steps())
    throw InputError("mechanism.t0 exceeds the number of steps");
  cfg.raw = std::move(doc);
  return cfg;
}

/// Loads a JSON config, or the config embedded in a CSV report's header.
inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json doc;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '#') {
    doc = parse_csv(text).meta.config;
  } else {
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw InputError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
  }
  return parse_config(std::move(doc), seed_override, path.parent_path());
}

}  // namespace ccs
