#pragma once

// Query-side scoring: per-class similarity of each query descriptor to the
// selected support sets, its discriminative score, the learned threshold, the
// soft weights map, and the class posterior / cross-entropy of an episode.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcds/cds.hpp"
#include "tcds/core.hpp"

namespace tcds {

inline constexpr double kLeakySlope = 0.01;

/// Two fully connected layers, 2d -> H -> 1, with a leaky-ReLU in between.
/// The raw output is unbounded; callers apply the outer sigmoid.
///
/// Parameters live in one flat buffer laid out as [W1 (H x 2d, row-major) |
/// b1 (H) | W2 (H) | b2 (1)], which is also the layout of gradients and of
/// optimizer state.
class ThresholdMlp {
 public:
  ThresholdMlp() = default;

  /// All-zero network for descriptors of dimension `descriptor_dim`.
  ThresholdMlp(std::size_t descriptor_dim, std::size_t hidden_dim)
      : input_dim_(2 * descriptor_dim), hidden_dim_(hidden_dim),
        params_(hidden_dim * (2 * descriptor_dim + 2) + 1, 0.0) {
    if (descriptor_dim == 0 || hidden_dim == 0) {
      throw InvalidConfig("threshold MLP needs descriptor_dim >= 1 and hidden_dim >= 1");
    }
  }

  /// Fan-in scaled uniform initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  template <class Rng>
  static ThresholdMlp initialized(std::size_t descriptor_dim, std::size_t hidden_dim, Rng& rng) {
    ThresholdMlp mlp(descriptor_dim, hidden_dim);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(mlp.input_dim_));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    std::uniform_real_distribution<double> first(-a1, a1);
    std::uniform_real_distribution<double> second(-a2, a2);
    for (double& w : mlp.w1()) w = first(rng);
    for (double& b : mlp.b1()) b = first(rng);
    for (double& w : mlp.w2()) w = second(rng);
    mlp.b2() = second(rng);
    return mlp;
  }

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t descriptor_dim() const noexcept { return input_dim_ / 2; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::span<double> w1() noexcept { return {params_.data(), hidden_dim_ * input_dim_}; }
  std::span<double> b1() noexcept { return {params_.data() + b1_offset(), hidden_dim_}; }
  std::span<double> w2() noexcept { return {params_.data() + w2_offset(), hidden_dim_}; }
  double& b2() noexcept { return params_.back(); }
  std::span<const double> w1() const noexcept { return {params_.data(), hidden_dim_ * input_dim_}; }
  std::span<const double> b1() const noexcept { return {params_.data() + b1_offset(), hidden_dim_}; }
  std::span<const double> w2() const noexcept { return {params_.data() + w2_offset(), hidden_dim_}; }
  double b2() const noexcept { return params_.back(); }

  /// Same shape, all zeros. Used as a gradient accumulator.
  ThresholdMlp zeros_like() const {
    ThresholdMlp z = *this;
    std::fill(z.params_.begin(), z.params_.end(), 0.0);
    return z;
  }

  bool operator==(const ThresholdMlp&) const = default;

  struct Activations {
    std::vector<double> pre;     // W1 x + b1
    std::vector<double> hidden;  // leaky_relu(pre)
    double output = 0.0;         // W2 hidden + b2
  };

  Activations forward(std::span<const double> input) const {
    if (input.size() != input_dim_) {
      throw InvalidInput("threshold MLP expects input of size " + std::to_string(input_dim_) +
                         ", got " + std::to_string(input.size()));
    }
    Activations act;
    act.pre.resize(hidden_dim_);
    act.hidden.resize(hidden_dim_);
    const auto w = w1();
    const auto b = b1();
    const auto v = w2();
    double out = b2();
    for (std::size_t h = 0; h < hidden_dim_; ++h) {
      const double z = b[h] + dot(w.subspan(h * input_dim_, input_dim_), input);
      act.pre[h] = z;
      act.hidden[h] = z > 0.0 ? z : kLeakySlope * z;
    }
    for (std::size_t h = 0; h < hidden_dim_; ++h) out += v[h] * act.hidden[h];
    act.output = out;
    return act;
  }

 private:
  std::size_t b1_offset() const noexcept { return hidden_dim_ * input_dim_; }
  std::size_t w2_offset() const noexcept { return b1_offset() + hidden_dim_; }

  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::vector<double> params_;
};

enum class ScoreForm { weighted_sim, literal };

inline const char* to_string(ScoreForm form) noexcept {
  return form == ScoreForm::weighted_sim ? "weighted-sim" : "literal";
}

inline ScoreForm parse_score_form(const std::string& s) {
  if (s == "weighted-sim") return ScoreForm::weighted_sim;
  if (s == "literal") return ScoreForm::literal;
  throw InvalidConfig("unknown score form '" + s + "' (expected weighted-sim or literal)");
}

struct ScoreOptions {
  double lambda = 20.0;
  ScoreForm form = ScoreForm::weighted_sim;
};

/// The selected descriptors of every class with their norms precomputed.
/// `similarity` matches `class_similarity` bit-for-bit.
class SelectedSupport {
 public:
  SelectedSupport(const CdsSelection& selection, const SupportPool& pool) : dim_(pool.dim()) {
    if (selection.num_classes() != pool.num_classes()) {
      throw InvalidInput("selection and pool disagree on class count");
    }
    values_.resize(selection.num_classes());
    norms_.resize(selection.num_classes());
    for (std::size_t c = 0; c < selection.num_classes(); ++c) {
      for (std::size_t idx : selection.classes[c].indices) {
        const auto v = pool[c][idx].values();
        const double n = norm(v);
        if (n == 0.0) throw DegenerateDescriptor("cosine: zero-norm descriptor");
        values_[c].push_back(v);
        norms_[c].push_back(n);
      }
    }
  }

  /// Per class, the sum of cosine(query, l) over that class's selected l.
  std::vector<double> similarity(const LocalDescriptor& query) const {
    if (query.dim() != dim_) {
      throw InvalidInput("cosine: dimension mismatch (" + std::to_string(query.dim()) + " vs " +
                         std::to_string(dim_) + ")");
    }
    const auto q = query.values();
    const double nq = norm(q);
    if (nq == 0.0) throw DegenerateDescriptor("cosine: zero-norm descriptor");
    std::vector<double> sims(values_.size(), 0.0);
    for (std::size_t c = 0; c < values_.size(); ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < values_[c].size(); ++j) {
        acc += cosine_with_norms(q, nq, values_[c][j], norms_[c][j]);
      }
      sims[c] = acc;
    }
    return sims;
  }

 private:
  std::size_t dim_;
  std::vector<std::vector<std::span<const double>>> values_;
  std::vector<std::vector<double>> norms_;
};

/// Sum over each class's selected descriptors of cosine(query, descriptor).
inline std::vector<double> class_similarity(const LocalDescriptor& query,
                                            const CdsSelection& selection,
                                            const SupportPool& pool) {
  std::vector<double> sims(selection.num_classes(), 0.0);
  for (std::size_t c = 0; c < selection.num_classes(); ++c) {
    double acc = 0.0;
    for (std::size_t idx : selection.classes[c].indices) acc += cosine(query, pool[c][idx]);
    sims[c] = acc;
  }
  return sims;
}

struct Discrimination {
  double value = 0.0;          // max_c sims_c / sum(sims)
  std::size_t best_class = 0;  // argmax of the normalized sims (lowest index on ties)
  bool degenerate = false;     // sum(sims) == 0; value falls back to 1/n
};

/// Largest share of the per-class similarity mass. A zero total is reported as
/// the uniform case 1/n and flagged rather than raised.
inline Discrimination query_disc_score(std::span<const double> sims) {
  if (sims.size() < 2) throw InvalidInput("discriminative score needs at least 2 classes");
  double total = 0.0;
  for (double s : sims) total += s;
  Discrimination out;
  if (total == 0.0) {
    out.value = 1.0 / static_cast<double>(sims.size());
    out.best_class = argmax(sims);
    out.degenerate = true;
    return out;
  }
  std::vector<double> share(sims.size());
  for (std::size_t c = 0; c < sims.size(); ++c) share[c] = sims[c] / total;
  out.best_class = argmax(share);
  out.value = share[out.best_class];
  return out;
}

/// Mean of the unit-normalized selected descriptors of all classes, itself
/// unit-normalized. This is the set-level context fed to the threshold MLP.
inline std::vector<double> selection_context(const CdsSelection& selection,
                                             const SupportPool& pool) {
  std::vector<double> acc(pool.dim(), 0.0);
  std::size_t count = 0;
  for (std::size_t c = 0; c < selection.num_classes(); ++c) {
    for (std::size_t idx : selection.classes[c].indices) {
      const auto unit = normalized(pool[c][idx].values());
      for (std::size_t t = 0; t < acc.size(); ++t) acc[t] += unit[t];
      ++count;
    }
  }
  if (count > 0) {
    for (double& v : acc) v /= static_cast<double>(count);
  }
  return normalized(acc);
}

/// [unit(query) || context], the MLP input.
inline std::vector<double> threshold_input(const LocalDescriptor& query,
                                           std::span<const double> context) {
  if (query.dim() != context.size()) throw InvalidInput("query and context dimensions differ");
  std::vector<double> input = normalized(query.values());
  input.insert(input.end(), context.begin(), context.end());
  return input;
}

inline double predict_threshold(const ThresholdMlp& mlp, const LocalDescriptor& query,
                                std::span<const double> context) {
  return sigmoid(mlp.forward(threshold_input(query, context)).output);
}

inline double predict_threshold(const ThresholdMlp& mlp, const LocalDescriptor& query,
                                const CdsSelection& selection, const SupportPool& pool) {
  if (mlp.input_dim() != 2 * query.dim()) {
    throw InvalidInput("threshold MLP input size does not match 2 * descriptor dimension");
  }
  return predict_threshold(mlp, query, selection_context(selection, pool));
}

/// Soft gate 1 / (1 + exp(-lambda (D - V))).
inline double weights_map(double disc, double threshold, double lambda) {
  return sigmoid(lambda * (disc - threshold));
}

struct DescriptorEvaluation {
  std::vector<double> sims;
  Discrimination disc;
  double threshold = 0.0;
  double weight = 0.0;
};

struct QueryResult {
  std::size_t label = 0;
  std::vector<DescriptorEvaluation> descriptors;
  std::vector<double> scores;
  std::vector<double> posterior;
  double nll = 0.0;  // -log posterior[label]

  std::size_t predicted() const noexcept { return argmax(posterior); }
};

struct QueryEvaluation {
  std::vector<QueryResult> queries;
  double loss = 0.0;  // mean nll over queries

  std::size_t correct() const noexcept {
    std::size_t n = 0;
    for (const auto& q : queries) n += q.predicted() == q.label ? 1 : 0;
    return n;
  }
};

/// Per-class image score from per-descriptor evaluations.
///  weighted-sim: sum_i M_i * SIM_c(i)
///  literal:      sum over descriptors whose best class is c of V_i * M_i
inline std::vector<double> class_scores(std::span<const DescriptorEvaluation> descriptors,
                                        std::size_t num_classes, ScoreForm form) {
  std::vector<double> scores(num_classes, 0.0);
  for (const auto& e : descriptors) {
    if (form == ScoreForm::weighted_sim) {
      for (std::size_t c = 0; c < num_classes; ++c) scores[c] += e.weight * e.sims[c];
    } else {
      scores[e.disc.best_class] += e.threshold * e.weight;
    }
  }
  return scores;
}

/// Evaluates every query of `episode` against the selected support sets.
inline QueryEvaluation episode_scores(const Episode& episode, const SupportPool& pool,
                                      const CdsSelection& selection, const ThresholdMlp& mlp,
                                      const ScoreOptions& options) {
  if (mlp.input_dim() != 2 * pool.dim()) {
    throw InvalidInput("threshold MLP input size does not match 2 * descriptor dimension");
  }
  if (selection.num_classes() != pool.num_classes()) {
    throw InvalidInput("selection and pool disagree on class count");
  }
  const std::size_t n = pool.num_classes();
  const auto context = selection_context(selection, pool);
  const SelectedSupport support(selection, pool);

  QueryEvaluation eval;
  eval.queries.reserve(episode.queries.size());
  double loss_total = 0.0;
  for (const auto& q : episode.queries) {
    QueryResult r;
    r.label = q.label;
    r.descriptors.reserve(q.image.size());
    for (const auto& lq : q.image.descriptors()) {
      DescriptorEvaluation e;
      e.sims = support.similarity(lq);
      e.disc = query_disc_score(e.sims);
      e.threshold = predict_threshold(mlp, lq, context);
      e.weight = weights_map(e.disc.value, e.threshold, options.lambda);
      r.descriptors.push_back(std::move(e));
    }
    r.scores = class_scores(r.descriptors, n, options.form);
    r.posterior = softmax(r.scores);
    r.nll = cross_entropy(r.scores, r.label);
    loss_total += r.nll;
    eval.queries.push_back(std::move(r));
  }
  eval.loss = eval.queries.empty() ? 0.0 : loss_total / static_cast<double>(eval.queries.size());
  return eval;
}

}  // namespace tcds
