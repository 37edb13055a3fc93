#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ccs/errors.hpp"
#include "ccs/rng.hpp"

namespace ccs {

/// Diagonal (stored as the variance vector) or dense covariance.
class Covariance {
 public:
  static Covariance diagonal(Vector variances) { return Covariance(std::move(variances)); }
  static Covariance isotropic(Eigen::Index d, double variance) {
    return Covariance(Vector(Vector::Constant(d, variance)));
  }
  static Covariance full(Matrix cov) { return Covariance(std::move(cov)); }

  bool is_diagonal() const noexcept { return std::holds_alternative<Vector>(repr_); }
  const Vector& variances() const { return std::get<Vector>(repr_); }
  const Matrix& matrix() const { return std::get<Matrix>(repr_); }

  Eigen::Index dim() const {
    return is_diagonal() ? variances().size() : matrix().rows();
  }

  Matrix dense() const {
    if (is_diagonal()) return variances().asDiagonal();
    return matrix();
  }

 private:
  explicit Covariance(Vector v) : repr_(std::move(v)) {}
  explicit Covariance(Matrix m) : repr_(std::move(m)) {}

  std::variant<Vector, Matrix> repr_;
};

struct MixtureComponent {
  double weight = 1.0;
  Vector mean;
  Covariance covariance = Covariance::diagonal(Vector());
  std::optional<std::string> label;
};

/// Classifier-free guidance: s_null + gamma (s_cond - s_null).
/// No condition means the plain unconditional score whatever gamma is.
struct CfgSpec {
  double gamma = 1.0;
  std::optional<std::string> condition;

  static CfgSpec unconditional() { return {}; }
  static CfgSpec conditional(std::string label, double gamma = 1.0) { return {gamma, std::move(label)}; }
};

class GaussianMixture;

/// The mixture pushed through the forward process to a fixed alpha_bar:
/// component k becomes N(sqrt(a) mu_k, a Sigma_k + (1 - a) I). Factorizations
/// are computed once here, so evaluate many points per marginal.
class MixtureMarginal {
 public:
  MixtureMarginal(const GaussianMixture& model, double alpha_bar);

  Eigen::Index dim() const noexcept { return dim_; }
  double alpha_bar() const noexcept { return alpha_bar_; }

  /// Posterior responsibilities of the components at x; sums to one.
  Vector posterior(const Vector& x) const {
    Vector logp = component_log_densities(x);
    const double m = logp.maxCoeff();
    Vector r = (logp.array() - m).exp();
    return r / r.sum();
  }

  double log_density(const Vector& x) const {
    const Vector logp = component_log_densities(x);
    const double m = logp.maxCoeff();
    return m + std::log((logp.array() - m).exp().sum());
  }

  Vector score(const Vector& x) const {
    const Vector r = posterior(x);
    Vector s = Vector::Zero(dim_);
    for (std::size_t k = 0; k < parts_.size(); ++k) s += r[static_cast<Eigen::Index>(k)] * component_score(k, x);
    return s;
  }

  /// Hessian of log p: sum_k r_k (-P_k) + sum_k r_k (g_k - s)(g_k - s)^T,
  /// with g_k the component scores and s their posterior average.
  Matrix hessian(const Vector& x) const {
    const Vector r = posterior(x);
    std::vector<Vector> g(parts_.size());
    Vector s = Vector::Zero(dim_);
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      g[k] = component_score(k, x);
      s += r[static_cast<Eigen::Index>(k)] * g[k];
    }
    Matrix h = Matrix::Zero(dim_, dim_);
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      const double rk = r[static_cast<Eigen::Index>(k)];
      const Part& p = parts_[k];
      if (p.diagonal)
        h.diagonal() -= rk * p.inv_var;
      else
        h -= rk * p.precision;
      const Vector c = g[k] - s;
      h.noalias() += rk * (c * c.transpose());
    }
    return h;
  }

  /// Upper bound on the spectral norm of the Hessian over all x. Finite only
  /// when every component shares one covariance: then the responsibility-
  /// weighted covariance of component scores is at most diam^2 / 4.
  double hessian_norm_bound() const {
    double precision_norm = 0.0;
    for (const Part& p : parts_) {
      precision_norm = std::max(precision_norm, p.diagonal ? p.inv_var.maxCoeff()
                                                           : Eigen::SelfAdjointEigenSolver<Matrix>(p.precision,
                                                                                                    Eigen::EigenvaluesOnly)
                                                                 .eigenvalues()
                                                                 .maxCoeff());
    }
    if (!shared_covariance_) return std::numeric_limits<double>::infinity();
    double diam = 0.0;
    for (std::size_t j = 0; j < parts_.size(); ++j)
      for (std::size_t k = j + 1; k < parts_.size(); ++k)
        diam = std::max(diam, apply_precision(j, parts_[j].mean - parts_[k].mean).norm());
    return std::max(precision_norm, 0.25 * diam * diam);
  }

 private:
  struct Part {
    double log_weight = 0.0;
    Vector mean;
    bool diagonal = true;
    Vector inv_var;                 // diagonal case
    Matrix precision;               // dense case
    Eigen::LLT<Matrix> chol;        // dense case
    double log_det = 0.0;
  };

  Vector apply_precision(std::size_t k, const Vector& v) const {
    const Part& p = parts_[k];
    if (p.diagonal) return p.inv_var.cwiseProduct(v);
    return p.chol.solve(v);
  }

  Vector component_score(std::size_t k, const Vector& x) const {
    return -apply_precision(k, x - parts_[k].mean);
  }

  Vector component_log_densities(const Vector& x) const {
    if (x.size() != dim_) throw InputError("state has length " + std::to_string(x.size()) +
                                           ", model dimension is " + std::to_string(dim_));
    if (!x.allFinite()) throw InputError("state contains non-finite values");
    const double log_norm = -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
    Vector out(static_cast<Eigen::Index>(parts_.size()));
    for (std::size_t k = 0; k < parts_.size(); ++k) {
      const Part& p = parts_[k];
      const Vector diff = x - p.mean;
      const double quad = diff.dot(apply_precision(k, diff));
      out[static_cast<Eigen::Index>(k)] = p.log_weight + log_norm - 0.5 * p.log_det - 0.5 * quad;
    }
    return out;
  }

  Eigen::Index dim_ = 0;
  double alpha_bar_ = 1.0;
  bool shared_covariance_ = true;
  std::vector<Part> parts_;
};

/// Analytic data distribution p_0: a finite Gaussian mixture with optional
/// per-component class labels. Immutable; all queries are pure.
class GaussianMixture {
 public:
  explicit GaussianMixture(std::vector<MixtureComponent> components) : components_(std::move(components)) {
    if (components_.empty()) throw InputError("mixture needs at least one component");
    dim_ = components_.front().mean.size();
    if (dim_ < 1) throw InputError("mixture dimension must be positive");
    double total = 0.0;
    for (std::size_t k = 0; k < components_.size(); ++k) {
      const auto& c = components_[k];
      const std::string where = "component " + std::to_string(k);
      if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw InputError(where + ": weight must be > 0");
      if (c.mean.size() != dim_ || c.covariance.dim() != dim_)
        throw InputError(where + ": mean/covariance dimension mismatch");
      if (!c.mean.allFinite()) throw InputError(where + ": non-finite mean");
      if (c.covariance.is_diagonal()) {
        if (!(c.covariance.variances().array() > 0.0).all())
          throw InputError(where + ": diagonal covariance must be positive");
      } else {
        const Matrix& m = c.covariance.matrix();
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
          throw InputError(where + ": covariance is not symmetric");
        if (Eigen::LLT<Matrix>(m).info() != Eigen::Success)
          throw InputError(where + ": covariance is not positive definite");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InputError("mixture weights must sum to 1");
  }

  static GaussianMixture standard_normal(Eigen::Index d) {
    return GaussianMixture({MixtureComponent{1.0, Vector::Zero(d), Covariance::isotropic(d, 1.0), std::nullopt}});
  }

  Eigen::Index dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return components_.size(); }
  const std::vector<MixtureComponent>& components() const noexcept { return components_; }

  bool has_label(const std::string& label) const {
    return std::any_of(components_.begin(), components_.end(),
                       [&](const MixtureComponent& c) { return c.label && *c.label == label; });
  }

  /// Sub-mixture of the components tagged `label`, weights renormalized.
  GaussianMixture restricted_to(const std::string& label) const {
    std::vector<MixtureComponent> kept;
    double total = 0.0;
    for (const auto& c : components_)
      if (c.label && *c.label == label) {
        kept.push_back(c);
        total += c.weight;
      }
    if (kept.empty()) throw InputError("unknown condition label '" + label + "'");
    for (auto& c : kept) c.weight /= total;
    // Renormalized weights may miss 1 by an ulp or two.
    double sum = 0.0;
    for (const auto& c : kept) sum += c.weight;
    kept.back().weight += 1.0 - sum;
    return GaussianMixture(std::move(kept));
  }

  MixtureMarginal marginal(double alpha_bar) const { return MixtureMarginal(*this, alpha_bar); }

  double log_density(const Vector& x, double alpha_bar) const { return marginal(alpha_bar).log_density(x); }
  Vector score(const Vector& x, double alpha_bar) const { return marginal(alpha_bar).score(x); }
  Matrix hessian(const Vector& x, double alpha_bar) const { return marginal(alpha_bar).hessian(x); }

  /// Draws from p_0 (alpha_bar = 1).
  Vector draw(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    std::size_t k = 0;
    double acc = components_[0].weight;
    while (u > acc && k + 1 < components_.size()) acc += components_[++k].weight;
    const auto& c = components_[k];
    const Vector z = ccs::standard_normal(rng, dim_);
    if (c.covariance.is_diagonal()) return c.mean + c.covariance.variances().cwiseSqrt().cwiseProduct(z);
    return c.mean + Eigen::LLT<Matrix>(c.covariance.matrix()).matrixL() * z;
  }

 private:
  Eigen::Index dim_ = 0;
  std::vector<MixtureComponent> components_;
};

inline MixtureMarginal::MixtureMarginal(const GaussianMixture& model, double alpha_bar)
    : dim_(model.dim()), alpha_bar_(alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) throw DomainError("alpha_bar must lie in (0, 1]");
  const double scale = std::sqrt(alpha_bar);
  const double noise = 1.0 - alpha_bar;
  const auto& comps = model.components();
  parts_.reserve(comps.size());
  for (const auto& c : comps) {
    Part p;
    p.log_weight = std::log(c.weight);
    p.mean = scale * c.mean;
    p.diagonal = c.covariance.is_diagonal();
    if (p.diagonal) {
      const Vector var = (alpha_bar * c.covariance.variances()).array() + noise;
      p.inv_var = var.cwiseInverse();
      p.log_det = var.array().log().sum();
    } else {
      Matrix cov = alpha_bar * c.covariance.matrix();
      cov.diagonal().array() += noise;
      p.chol.compute(cov);
      if (p.chol.info() != Eigen::Success)
        throw NumericalError("time-marginal covariance is not positive definite");
      p.log_det = 2.0 * p.chol.matrixLLT().diagonal().array().log().sum();
      p.precision = p.chol.solve(Matrix::Identity(dim_, dim_));
      p.precision = 0.5 * (p.precision + p.precision.transpose()).eval();
    }
    parts_.push_back(std::move(p));
  }
  for (std::size_t k = 1; k < comps.size() && shared_covariance_; ++k) {
    const auto& a = comps[0].covariance;
    const auto& b = comps[k].covariance;
    shared_covariance_ = a.is_diagonal() == b.is_diagonal() &&
                         (a.is_diagonal() ? a.variances() == b.variances() : a.matrix() == b.matrix());
  }
}

/// Time-t guided score: the unconditional marginal combined with the
/// label-restricted one under classifier-free guidance.
class GuidedMarginal {
 public:
  GuidedMarginal(MixtureMarginal null, std::optional<MixtureMarginal> cond, double gamma)
      : null_(std::move(null)), cond_(std::move(cond)), gamma_(gamma) {}

  Eigen::Index dim() const noexcept { return null_.dim(); }

  Vector score(const Vector& x) const {
    Vector s = null_.score(x);
    if (cond_) s += gamma_ * (cond_->score(x) - s);
    return s;
  }

  Matrix hessian(const Vector& x) const {
    Matrix h = null_.hessian(x);
    if (cond_) h += gamma_ * (cond_->hessian(x) - h);
    return h;
  }

  double hessian_norm_bound() const {
    const double n = null_.hessian_norm_bound();
    if (!cond_) return n;
    return std::abs(1.0 - gamma_) * n + std::abs(gamma_) * cond_->hessian_norm_bound();
  }

 private:
  MixtureMarginal null_;
  std::optional<MixtureMarginal> cond_;
  double gamma_;
};

/// A mixture bound to a guidance setting; what the samplers consume.
class ScoreField {
 public:
  explicit ScoreField(const GaussianMixture& model, CfgSpec cfg = {}) : model_(model), cfg_(std::move(cfg)) {
    if (cfg_.gamma < 0.0 || !std::isfinite(cfg_.gamma)) throw InputError("guidance weight must be >= 0");
    if (cfg_.condition) conditional_.emplace(model.restricted_to(*cfg_.condition));
  }

  Eigen::Index dim() const noexcept { return model_.dim(); }
  const GaussianMixture& model() const noexcept { return model_; }
  const CfgSpec& cfg() const noexcept { return cfg_; }

  GuidedMarginal at(double alpha_bar) const {
    std::optional<MixtureMarginal> cond;
    if (conditional_) cond.emplace(conditional_->marginal(alpha_bar));
    return GuidedMarginal(model_.marginal(alpha_bar), std::move(cond), cfg_.gamma);
  }

  Vector score(const Vector& x, double alpha_bar) const { return at(alpha_bar).score(x); }
  Matrix hessian(const Vector& x, double alpha_bar) const { return at(alpha_bar).hessian(x); }

 private:
  GaussianMixture model_;
  CfgSpec cfg_;
  std::optional<GaussianMixture> conditional_;
};

/// s_null + gamma (s_cond - s_null) at a single point.
inline Vector cfg_score(const GaussianMixture& model, const Vector& x, double alpha_bar, const CfgSpec& cfg) {
  return ScoreField(model, cfg).score(x, alpha_bar);
}

}  // namespace ccs
