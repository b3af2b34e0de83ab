#pragma once

// Central-difference verification of loss_and_gradients.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>

#include "tcds/oracle.hpp"
#include "tcds/query.hpp"
#include "tcds/train.hpp"

namespace tcds {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error. Below it the comparison is
  /// effectively absolute (|analytic - numeric| < tolerance * floor = 1e-9),
  /// which is the accuracy central differences reach at h = 1e-5.
  double denominator_floor = 1e-5;
};

struct GradcheckReport {
  std::size_t cases = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_relative_error = 0.0;
  std::string worst;  // where max_relative_error occurred
  double tolerance = 1e-4;
  double seconds = 0.0;

  bool passed() const noexcept { return checked > 0 && max_relative_error < tolerance; }

  std::string to_text() const {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "cases=%zu parameters_checked=%zu skipped_at_kink=%zu\n"
                  "max_relative_error=%.3e at %s\ntolerance=%.0e elapsed=%.3fs result=%s\n",
                  cases, checked, skipped_kinks, max_relative_error, worst.c_str(), tolerance,
                  seconds, passed() ? "PASS" : "FAIL");
    return buf;
  }
};

inline double relative_error(double analytic, double numeric, double floor) noexcept {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

namespace detail {

inline const char* parameter_block(const ThresholdMlp& mlp, std::size_t p) noexcept {
  const std::size_t w1 = mlp.hidden_dim() * mlp.input_dim();
  if (p < w1) return "W1";
  if (p < w1 + mlp.hidden_dim()) return "b1";
  if (p < w1 + 2 * mlp.hidden_dim()) return "W2";
  return "b2";
}

}  // namespace detail

/// For each case: a random small episode, a fresh fan-in initialized MLP, and
/// both score forms. Every parameter's analytic derivative is compared with
/// (L(p + h) - L(p - h)) / 2h, where L comes from `episode_scores`.
///
/// A W1/b1 entry whose +-h perturbation flips the sign of some leaky-ReLU
/// pre-activation straddles a kink, where the finite difference is not a
/// derivative estimate; such entries are counted and skipped.
inline GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t cases,
                                     const GradcheckOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.cases = cases;
  report.tolerance = opt.tolerance;
  const double h = opt.step;

  for (std::size_t t = 0; t < cases; ++t) {
    Rng rng(derive_seed(seed, t));
    RandomInstance inst = random_instance(rng);
    const std::size_t d = inst.episode.dim();
    Rng init_rng(derive_seed(seed ^ 0xA5A5A5A5ULL, t));
    ThresholdMlp mlp = ThresholdMlp::initialized(d, inst.mlp.hidden_dim(), init_rng);
    inst.lambda = 2.0 + 18.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    const auto prep = prepare_episode(inst.episode, inst.mode, inst.k_fraction);
    const auto context = selection_context(prep.selection, prep.pool);
    std::vector<std::vector<double>> inputs;
    for (const auto& q : inst.episode.queries) {
      for (const auto& lq : q.image.descriptors()) inputs.push_back(threshold_input(lq, context));
    }
    std::vector<std::vector<double>> pre;
    for (const auto& x : inputs) pre.push_back(mlp.forward(x).pre);

    const std::size_t in = mlp.input_dim();
    const std::size_t w1_size = mlp.hidden_dim() * in;
    auto straddles_kink = [&](std::size_t p) {
      if (p >= w1_size + mlp.hidden_dim()) return false;
      const std::size_t unit = p < w1_size ? p / in : p - w1_size;
      for (std::size_t s = 0; s < inputs.size(); ++s) {
        const double shift = p < w1_size ? h * std::fabs(inputs[s][p % in]) : h;
        if (std::fabs(pre[s][unit]) <= shift) return true;
      }
      return false;
    };

    for (ScoreForm form : {ScoreForm::weighted_sim, ScoreForm::literal}) {
      const ScoreOptions options{inst.lambda, form};
      const auto analytic =
          loss_and_gradients(inst.episode, prep.pool, prep.selection, mlp, options);
      const auto grads = analytic.grads.parameters();
      for (std::size_t p = 0; p < mlp.parameter_count(); ++p) {
        if (straddles_kink(p)) {
          ++report.skipped_kinks;
          continue;
        }
        ThresholdMlp plus = mlp, minus = mlp;
        plus.parameters()[p] += h;
        minus.parameters()[p] -= h;
        const double lp = episode_scores(inst.episode, prep.pool, prep.selection, plus, options).loss;
        const double lm = episode_scores(inst.episode, prep.pool, prep.selection, minus, options).loss;
        const double numeric = (lp - lm) / (2.0 * h);
        const double err = relative_error(grads[p], numeric, opt.denominator_floor);
        ++report.checked;
        if (!(err <= report.max_relative_error)) {
          report.max_relative_error = std::isnan(err) ? INFINITY : err;
          char where[160];
          std::snprintf(where, sizeof where, "case %zu, %s, %s[%zu] (analytic %.6e, numeric %.6e)",
                        t, to_string(form), detail::parameter_block(mlp, p), p, grads[p], numeric);
          report.worst = where;
        }
      }
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace tcds
