#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ccs/errors.hpp"
#include "ccs/mixture.hpp"
#include "ccs/rng.hpp"

namespace ccs {

/// Equal-weight pair of isotropic clusters at +offset*u and -offset*u,
/// u = (1, ..., 1) / sqrt(d), labeled "A" and "B".
inline GaussianMixture two_cluster_mixture(Eigen::Index d, double offset = 1.0, double cluster_std = 0.2) {
  if (d < 1) throw InputError("two_cluster_mixture: d must be >= 1");
  if (!(cluster_std > 0.0)) throw InputError("two_cluster_mixture: cluster_std must be > 0");
  const Vector u = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  const double var = cluster_std * cluster_std;
  return GaussianMixture({
      MixtureComponent{0.5, offset * u, Covariance::isotropic(d, var), "A"},
      MixtureComponent{0.5, -offset * u, Covariance::isotropic(d, var), "B"},
  });
}

/// `count` target means drawn from the model itself; target i uses stream derive_seed(seed, i).
inline std::vector<Vector> draw_targets(const GaussianMixture& model, int count, std::uint64_t seed) {
  if (count < 1) throw InputError("target count must be >= 1");
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(model.draw(rng));
  }
  return out;
}

}  // namespace ccs
