#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "muviecast/autograd.hpp"

namespace muvie::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.span()) v = u(rng);
  return t;
}

struct GradCheckResult {
  double rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of `f` against central differences over
// at most `max_coords` coordinates per input (all when 0).
inline GradCheckResult grad_check(
    const std::function<ag::Var(const std::vector<ag::Var>&)>& f,
    std::vector<Tensor> inputs, double h = 1e-6, std::size_t max_coords = 0,
    unsigned seed = 7) {
  std::vector<ag::Var> vars;
  for (auto& t : inputs) vars.push_back(ag::Var::parameter(t));
  ag::backward(f(vars));

  std::mt19937_64 rng(seed);
  double diff_sq = 0.0, ref_sq = 0.0, max_abs = 0.0;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic =
        vars[i].grad().empty() ? Tensor::zeros_like(inputs[i]) : vars[i].grad();
    std::vector<std::size_t> coords(inputs[i].numel());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t j : coords) {
      auto eval = [&](double delta) {
        ag::NoGradGuard guard;
        std::vector<ag::Var> probe;
        for (std::size_t q = 0; q < inputs.size(); ++q) {
          Tensor t = inputs[q];
          if (q == i) t[j] += delta;
          probe.push_back(ag::Var::constant(std::move(t)));
        }
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double d = analytic[j] - numeric;
      diff_sq += d * d;
      ref_sq += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(d));
      ++checked;
    }
  }
  return {std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-12), max_abs, checked};
}

}  // namespace muvie::testing
