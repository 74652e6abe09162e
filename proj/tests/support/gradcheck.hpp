#pragma once

// Central finite-difference harness shared by the unit and acceptance
// suites. The scalar probe is loss = Σ r_i · out_i with fixed random r,
// accumulated in float64. The realized step (x+ε) − (x−ε) after float32
// rounding is used as the denominator.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wildfire/ops.hpp"
#include "wildfire/rng.hpp"
#include "wildfire/tensor.hpp"

namespace wildfire::testing {

/// One checked instance. The relative error of the instance is
/// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂) over every checked entry; a float32 forward
/// pass cannot resolve single near-zero entries at ε = 1e-3.
struct GradCheckResult {
  std::vector<double> analytic;
  std::vector<double> numeric;
  double relative_error() const {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
  }
};

/// Max and median of per-instance relative errors.
struct GradCheckSummary {
  std::vector<double> errors;
  void add(const GradCheckResult& r) { errors.push_back(r.relative_error()); }
  double max() const { return errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end()); }
  double median() const {
    if (errors.empty()) return 0.0;
    std::vector<double> v = errors;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

inline double probe_loss(const Tensor& out, const std::vector<float>& r) {
  double acc = 0.0;
  for (Index i = 0; i < out.numel(); ++i) acc += static_cast<double>(r[static_cast<std::size_t>(i)]) * out.ptr()[i];
  return acc;
}

/// Checks d(probe)/d(input) for every input listed in `check` (indices into
/// `inputs`); other inputs are held constant.
inline GradCheckResult gradcheck(const OpUnderTest& op, std::vector<Tensor> inputs,
                                 const std::vector<std::size_t>& check, std::uint64_t seed,
                                 double eps = 1e-3) {
  // Analytic pass.
  std::vector<Tensor> tracked;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i].detach();
    if (std::find(check.begin(), check.end(), i) != check.end()) t.set_requires_grad();
    tracked.push_back(t);
  }
  Tensor probe_out = op(inputs);
  CounterRng rng(seed, "gradcheck-probe");
  std::vector<float> r(static_cast<std::size_t>(probe_out.numel()));
  for (auto& v : r) v = static_cast<float>(rng.normal());

  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = op(tracked);
    Tensor loss = ops::weighted_sum(out, r);
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t which : check) {
    const std::vector<float> analytic = tracked[which].grad();
    for (Index e = 0; e < inputs[which].numel(); ++e) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[which] = inputs[which].clone();
      minus[which] = inputs[which].clone();
      const float x0 = inputs[which][e];
      const float xp = static_cast<float>(x0 + eps);
      const float xm = static_cast<float>(x0 - eps);
      plus[which].data()[static_cast<std::size_t>(e)] = xp;
      minus[which].data()[static_cast<std::size_t>(e)] = xm;
      const double lp = probe_loss(op(plus), r);
      const double lm = probe_loss(op(minus), r);
      const double numeric = (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
      result.analytic.push_back(analytic[static_cast<std::size_t>(e)]);
      result.numeric.push_back(numeric);
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, CounterRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

/// Random values kept at least `gap` away from zero (for kinked ops).
inline Tensor random_away_from_zero(Shape shape, CounterRng& rng, double gap = 0.05) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    double z = rng.normal();
    while (std::abs(z) < gap) z = rng.normal();
    v = static_cast<float>(z);
  }
  return t;
}

/// Values with pairwise spacing ≥ `spacing` in shuffled order (no ties
/// within any pooling window even after a ±ε perturbation).
inline Tensor random_distinct(Shape shape, CounterRng& rng, double spacing = 0.01) {
  Tensor t(std::move(shape));
  const Index n = t.numel();
  std::vector<float> vals(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = static_cast<float>((i - n / 2) * spacing);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(vals[static_cast<std::size_t>(i)], vals[static_cast<std::size_t>(j)]);
  }
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

}  // namespace wildfire::testing
