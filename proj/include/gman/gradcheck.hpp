#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gman/tensor.hpp"

namespace gman {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t skipped = 0;            // coordinates below the magnitude floor
  double max_skipped_abs_error = 0.0;  // |analytic - numeric| over skipped ones
  std::map<std::string, std::size_t> checked;  // counted coordinates per parameter name
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// Coordinates are sampled round-robin across the parameters until
/// `max_coordinates` of them have max(|analytic|, |numeric|) >= `min_magnitude`;
/// only those count toward the relative error
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
/// Coordinates below the floor (gradients that vanish by construction, such
/// as key biases under softmax) are reported by absolute error instead.
inline GradCheckResult finite_difference_check(const std::function<Tensor()>& loss_fn, std::vector<Parameter>& params,
                                               double step, std::size_t max_coordinates, std::uint64_t seed = 0,
                                               double min_magnitude = 0.0) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  for (auto& p : params) p.tensor.zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("gradient check: loss is not finite");
  backward(loss);

  std::vector<std::vector<std::size_t>> picks(params.size());
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::vector<std::size_t> idx(params[k].tensor.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    picks[k] = std::move(idx);
  }
  GradCheckResult result;
  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw NumericError("gradient check: perturbed loss is not finite");
    return v;
  };
  for (std::size_t round = 0; result.coordinates < max_coordinates; ++round) {
    bool any = false;
    for (std::size_t k = 0; k < params.size() && result.coordinates < max_coordinates; ++k) {
      if (round >= picks[k].size()) continue;
      any = true;
      const std::size_t i = picks[k][round];
      auto values = params[k].tensor.mutable_data();
      const double original = values[i];
      values[i] = original + step;
      const double plus = evaluate();
      values[i] = original - step;
      const double minus = evaluate();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = params[k].tensor.grad()[i];
      if (std::max(std::fabs(analytic), std::fabs(numeric)) < min_magnitude) {
        ++result.skipped;
        result.max_skipped_abs_error = std::max(result.max_skipped_abs_error, std::fabs(analytic - numeric));
        continue;
      }
      const double err = std::fabs(analytic - numeric) / (std::fabs(analytic) + std::fabs(numeric) + 1e-8);
      ++result.coordinates;
      ++result.checked[params[k].name];
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params[k].name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
    if (!any) break;
  }
  return result;
}

}  // namespace gman
