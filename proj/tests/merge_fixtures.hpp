#pragma once

// Shared fixtures and the brute-force elementwise merge oracle. The oracle
// recomputes alpha * t + (1 - alpha) * sum_i w_i * c_i straight from the
// decoded input values, independently of the merge engine's path.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cocktail/dtype.hpp"
#include "cocktail/tensor_map.hpp"

namespace fixtures {

// Finite values only; raw random bytes would inject NaNs whose payloads do
// not survive transcoding.
inline cocktail::TensorMap random_model(std::mt19937_64& rng,
                                        const std::vector<std::pair<std::string, cocktail::Dtype>>& layout,
                                        const std::vector<std::vector<std::int64_t>>& shapes) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  cocktail::TensorMap map;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, dt] = layout[i];
    std::vector<double> vals(cocktail::element_count(shapes[i]));
    for (double& v : vals) v = dist(rng);
    map.add_tensor(name, dt, shapes[i], cocktail::encode_values(dt, vals));
  }
  return map;
}

// Layout shared by a whole family of compatible models.
struct ModelFamily {
  std::vector<std::pair<std::string, cocktail::Dtype>> layout;
  std::vector<std::vector<std::int64_t>> shapes;

  cocktail::TensorMap make(std::mt19937_64& rng) const { return random_model(rng, layout, shapes); }
};

inline ModelFamily random_family(std::mt19937_64& rng, int n_tensors, std::int64_t max_dim) {
  ModelFamily fam;
  for (int i = 0; i < n_tensors; ++i) {
    const cocktail::Dtype dt = (rng() % 2) ? cocktail::Dtype::F32 : cocktail::Dtype::F16;
    fam.layout.emplace_back("t" + std::to_string(i), dt);
    fam.shapes.push_back({static_cast<std::int64_t>(1 + rng() % max_dim),
                          static_cast<std::int64_t>(1 + rng() % max_dim)});
  }
  return fam;
}

inline std::vector<double> oracle_weighted_sum(
    const std::vector<const cocktail::TensorMap*>& models, const std::vector<double>& coeffs,
    const std::string& name) {
  std::vector<double> out(cocktail::element_count(models[0]->meta(name).shape), 0.0);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const std::vector<double> vals = models[i]->tensor_values(name);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += coeffs[i] * vals[k];
  }
  return out;
}

// Max |merged - oracle| over all tensors of the given dtype.
inline double max_error_vs_oracle(const cocktail::TensorMap& merged,
                                  const std::vector<const cocktail::TensorMap*>& models,
                                  const std::vector<double>& coeffs, cocktail::Dtype dt) {
  double worst = 0.0;
  for (const std::string& name : merged.names()) {
    if (merged.meta(name).dtype != dt) continue;
    const std::vector<double> expect = oracle_weighted_sum(models, coeffs, name);
    const std::vector<double> got = merged.tensor_values(name);
    for (std::size_t k = 0; k < expect.size(); ++k) {
      worst = std::max(worst, std::abs(got[k] - expect[k]));
    }
  }
  return worst;
}

inline std::vector<double> random_normalized_weights(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(0.05, 1.0);
  std::vector<double> w(n);
  double sum = 0.0;
  for (double& x : w) {
    x = dist(rng);
    sum += x;
  }
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace fixtures
