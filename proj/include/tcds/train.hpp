#pragma once

// Episodic sampling, backpropagation into the threshold MLP, Adam with a step
// decay schedule, and accuracy evaluation with confidence intervals.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tcds/cds.hpp"
#include "tcds/core.hpp"
#include "tcds/query.hpp"

namespace tcds {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; derives independent stream seeds from (base, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// EpisodePool
// ---------------------------------------------------------------------------

enum class Split { train, val, test };

struct PoolClass {
  std::string label;
  DescriptorSet images;  // image_count images of m descriptors each
};

/// Labeled descriptor sets grouped by class; episodes are sampled from here.
class EpisodePool {
 public:
  EpisodePool() = default;
  explicit EpisodePool(Split split) : split_(split) {}

  void add_class(std::string label, DescriptorSet images) {
    if (!classes_.empty()) {
      if (images.dim() != dim() || images.per_image() != per_image()) {
        throw InvalidInput("class '" + label + "' disagrees with the pool on d or m");
      }
    }
    for (const auto& c : classes_) {
      if (c.label == label) throw InvalidInput("duplicate class label '" + label + "'");
    }
    classes_.push_back({std::move(label), std::move(images)});
  }

  /// Appends every class of `other` (labels must stay unique).
  void merge(const EpisodePool& other) {
    for (const auto& c : other.classes_) add_class(c.label, c.images);
  }

  Split split() const noexcept { return split_; }
  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t dim() const noexcept { return classes_.empty() ? 0 : classes_.front().images.dim(); }
  std::size_t per_image() const noexcept {
    return classes_.empty() ? 0 : classes_.front().images.per_image();
  }
  const std::vector<PoolClass>& classes() const noexcept { return classes_; }
  const PoolClass& operator[](std::size_t i) const noexcept { return classes_[i]; }

 private:
  std::vector<PoolClass> classes_;
  Split split_ = Split::train;
};

/// Throws InvalidInput when two pools share a class label.
inline void require_disjoint_labels(const EpisodePool& a, const EpisodePool& b) {
  std::set<std::string> seen;
  for (const auto& c : a.classes()) seen.insert(c.label);
  for (const auto& c : b.classes()) {
    if (seen.count(c.label) != 0) {
      throw InvalidInput("label '" + c.label + "' appears in more than one split");
    }
  }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t way = 5;
  std::size_t shot = 5;
  std::size_t queries = 15;  // per class
  double k_fraction = 0.10;
  double lambda = 20.0;
  ScoreForm score_form = ScoreForm::weighted_sim;
  SupportMode mode = SupportMode::raw;
  std::size_t hidden_dim = 0;  // 0 selects d

  double learning_rate = 1e-3;
  double decay_factor = 0.1;
  std::size_t decay_every = 10;
  std::size_t epochs = 30;
  std::size_t episodes_per_epoch = 200;
  std::size_t batch_episodes = 1;  // episodes accumulated per Adam step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::uint64_t seed = 0;

  ScoreOptions score_options() const noexcept { return {lambda, score_form}; }

  /// Learning rate in effect during 1-based epoch `epoch`.
  double learning_rate_at(std::size_t epoch) const noexcept {
    const auto steps = static_cast<double>((epoch - 1) / decay_every);
    return learning_rate * std::pow(decay_factor, steps);
  }

  void validate() const {
    if (way < 2) throw InvalidConfig("way must be >= 2");
    if (shot < 1) throw InvalidConfig("shot must be >= 1");
    if (!(k_fraction > 0.0 && k_fraction <= 1.0)) throw InvalidConfig("K must lie in (0, 1]");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfig("lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning rate must be > 0");
    if (epochs < 1) throw InvalidConfig("epochs must be >= 1");
    if (decay_every < 1) throw InvalidConfig("decay interval must be >= 1");
    if (batch_episodes < 1) throw InvalidConfig("batch size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws n classes, then k support and q query images per class, all without
/// replacement. Only classes holding at least k + q images are eligible.
inline Episode sample_episode(const EpisodePool& pool, std::size_t way, std::size_t shot,
                              std::size_t queries, Rng& rng) {
  const std::size_t need = shot + queries;
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    if (pool[c].images.image_count() >= need) eligible.push_back(c);
  }
  if (eligible.size() < way) {
    throw PoolExhausted("pool has " + std::to_string(eligible.size()) + " classes with >= " +
                        std::to_string(need) + " images; episode needs " + std::to_string(way));
  }

  auto partial_shuffle = [&rng](std::vector<std::size_t>& v, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
      std::swap(v[i], v[pick(rng)]);
    }
  };
  partial_shuffle(eligible, way);

  Episode ep;
  ep.way = way;
  ep.shot = shot;
  for (std::size_t c = 0; c < way; ++c) {
    const std::size_t src = eligible[c];
    const DescriptorSet& images = pool[src].images;
    std::vector<std::size_t> order(images.image_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    partial_shuffle(order, need);

    std::vector<DescriptorSet> support;
    for (std::size_t s = 0; s < shot; ++s) support.push_back(images.image_set(order[s]));
    ep.support.push_back(concat_images(support));
    for (std::size_t q = 0; q < queries; ++q) {
      ep.queries.push_back({images.image_set(order[shot + q]), c});
    }
    ep.source_classes.push_back(src);
  }
  return ep;
}

inline Episode sample_episode(const EpisodePool& pool, const TrainConfig& cfg, Rng& rng) {
  return sample_episode(pool, cfg.way, cfg.shot, cfg.queries, rng);
}

/// Support pool and CDS selection of an episode, the inputs every query-side
/// computation shares.
struct PreparedEpisode {
  SupportPool pool;
  CdsSelection selection;
};

inline PreparedEpisode prepare_episode(const Episode& ep, SupportMode mode, double k_fraction) {
  PreparedEpisode p;
  p.pool = SupportPool::from_episode(ep, mode);
  p.selection = select_top_k(p.pool, k_fraction);
  return p;
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

struct LossAndGradients {
  double loss = 0.0;
  ThresholdMlp grads;  // same layout as the parameters
};

/// Episode cross-entropy and its derivative with respect to the MLP
/// parameters. Selection and discriminative scores are constants here; no
/// gradient reaches descriptors or the top-K choice.
///
/// The forward pass uses the same operations, in the same order, as
/// `episode_scores`, so `loss` equals its loss exactly.
inline LossAndGradients loss_and_gradients(const Episode& episode, const SupportPool& pool,
                                           const CdsSelection& selection, const ThresholdMlp& mlp,
                                           const ScoreOptions& options,
                                           std::optional<std::uint64_t> episode_seed = {}) {
  if (mlp.input_dim() != 2 * pool.dim()) {
    throw InvalidInput("threshold MLP input size does not match 2 * descriptor dimension");
  }
  const std::size_t n = pool.num_classes();
  const std::size_t hidden = mlp.hidden_dim();
  const std::size_t in = mlp.input_dim();
  const auto context = selection_context(selection, pool);
  const SelectedSupport support(selection, pool);
  const double lambda = options.lambda;
  const double inv_q = episode.queries.empty() ? 0.0 : 1.0 / static_cast<double>(episode.queries.size());

  LossAndGradients out;
  out.grads = mlp.zeros_like();
  auto gw1 = out.grads.w1();
  auto gb1 = out.grads.b1();
  auto gw2 = out.grads.w2();
  const auto w2 = mlp.w2();

  struct Cache {
    std::vector<double> input;
    ThresholdMlp::Activations act;
  };

  double loss_total = 0.0;
  for (const auto& q : episode.queries) {
    std::vector<DescriptorEvaluation> evals;
    std::vector<Cache> caches;
    evals.reserve(q.image.size());
    caches.reserve(q.image.size());
    for (const auto& lq : q.image.descriptors()) {
      DescriptorEvaluation e;
      e.sims = support.similarity(lq);
      e.disc = query_disc_score(e.sims);
      Cache cache;
      cache.input = threshold_input(lq, context);
      cache.act = mlp.forward(cache.input);
      e.threshold = sigmoid(cache.act.output);
      e.weight = weights_map(e.disc.value, e.threshold, lambda);
      evals.push_back(std::move(e));
      caches.push_back(std::move(cache));
    }
    const auto scores = class_scores(evals, n, options.form);
    const auto posterior = softmax(scores);
    loss_total += cross_entropy(scores, q.label);

    std::vector<double> g_score(n);
    for (std::size_t c = 0; c < n; ++c) {
      g_score[c] = (posterior[c] - (c == q.label ? 1.0 : 0.0)) * inv_q;
    }

    for (std::size_t i = 0; i < evals.size(); ++i) {
      const auto& e = evals[i];
      const auto& cache = caches[i];
      const double m = e.weight;
      const double v = e.threshold;
      const double dm_dv = -lambda * m * (1.0 - m);
      double g_v = 0.0;
      if (options.form == ScoreForm::weighted_sim) {
        double g_m = 0.0;
        for (std::size_t c = 0; c < n; ++c) g_m += g_score[c] * e.sims[c];
        g_v = g_m * dm_dv;
      } else {
        g_v = g_score[e.disc.best_class] * (m + v * dm_dv);
      }
      const double g_out = g_v * v * (1.0 - v);
      if (g_out == 0.0) continue;

      out.grads.b2() += g_out;
      for (std::size_t h = 0; h < hidden; ++h) {
        gw2[h] += g_out * cache.act.hidden[h];
        const double slope = cache.act.pre[h] > 0.0 ? 1.0 : kLeakySlope;
        const double g_pre = g_out * w2[h] * slope;
        gb1[h] += g_pre;
        auto row = gw1.subspan(h * in, in);
        for (std::size_t t = 0; t < in; ++t) row[t] += g_pre * cache.input[t];
      }
    }
  }
  out.loss = episode.queries.empty()
                 ? 0.0
                 : loss_total / static_cast<double>(episode.queries.size());

  bool finite = std::isfinite(out.loss);
  for (double g : out.grads.parameters()) finite = finite && std::isfinite(g);
  if (!finite) {
    throw NumericalFailure("non-finite loss or gradient" +
                           (episode_seed ? " (episode seed " + std::to_string(*episode_seed) + ")"
                                         : std::string{}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop
// ---------------------------------------------------------------------------

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t size, double beta1, double beta2, double epsilon)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      params[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

/// One training-log line: epoch, mean loss, lr, wall-clock seconds, tab-separated.
inline std::string format_log_line(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.10g\t%.6g\t%.3f", e.epoch, e.mean_loss, e.learning_rate,
                e.seconds);
  return buf;
}

struct TrainResult {
  ThresholdMlp mlp;
  std::vector<EpochLog> log;
};

inline std::size_t resolved_hidden_dim(const TrainConfig& cfg, std::size_t d) noexcept {
  return cfg.hidden_dim == 0 ? d : cfg.hidden_dim;
}

/// Initial parameters for a run; a pure function of (cfg.seed, d, H).
inline ThresholdMlp initial_mlp(const TrainConfig& cfg, std::size_t d) {
  Rng rng(derive_seed(cfg.seed, 0));
  return ThresholdMlp::initialized(d, resolved_hidden_dim(cfg, d), rng);
}

/// Episodic meta-training of the threshold MLP. Episode j (0-based, across
/// epochs) is sampled from its own stream seeded by derive_seed(seed, j + 1).
inline TrainResult meta_train(const EpisodePool& pool, const TrainConfig& cfg,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (pool.num_classes() == 0) throw InvalidInput("training pool is empty");
  TrainResult result;
  result.mlp = initial_mlp(cfg, pool.dim());
  if (cfg.episodes_per_epoch == 0) return result;

  Adam adam(result.mlp.parameter_count(), cfg.beta1, cfg.beta2, cfg.epsilon);
  ThresholdMlp accum = result.mlp.zeros_like();
  std::size_t pending = 0;
  std::uint64_t episode_index = 0;
  const auto options = cfg.score_options();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cfg.learning_rate_at(epoch);
    double loss_sum = 0.0;
    for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
      const std::uint64_t seed = derive_seed(cfg.seed, ++episode_index);
      Rng rng(seed);
      const Episode ep = sample_episode(pool, cfg, rng);
      const auto prep = prepare_episode(ep, cfg.mode, cfg.k_fraction);
      const auto lg = loss_and_gradients(ep, prep.pool, prep.selection, result.mlp, options, seed);
      loss_sum += lg.loss;

      auto acc = accum.parameters();
      const auto g = lg.grads.parameters();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
      ++pending;
      if (pending == cfg.batch_episodes || e + 1 == cfg.episodes_per_epoch) {
        if (pending > 1) {
          for (double& v : acc) v /= static_cast<double>(pending);
        }
        adam.step(result.mlp.parameters(), accum.parameters(), lr);
        std::fill(acc.begin(), acc.end(), 0.0);
        pending = 0;
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(cfg.episodes_per_epoch);
    entry.learning_rate = lr;
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Number of correctly classified query images in one episode.
inline std::size_t episode_correct(const Episode& ep, const ThresholdMlp& mlp,
                                   const TrainConfig& cfg) {
  const auto prep = prepare_episode(ep, cfg.mode, cfg.k_fraction);
  return episode_scores(ep, prep.pool, prep.selection, mlp, cfg.score_options()).correct();
}

/// Accuracy over `episodes` episodes drawn from streams derive_seed(seed, e).
/// Work is split across `threads` workers; counts are merged as integers, so
/// the result does not depend on the thread count.
inline double evaluate_once(const EpisodePool& pool, const ThresholdMlp& mlp,
                            const TrainConfig& cfg, std::size_t episodes, std::uint64_t seed,
                            std::size_t threads = 1) {
  if (episodes == 0) throw InvalidConfig("evaluation needs at least one episode");
  threads = std::max<std::size_t>(1, std::min(threads, episodes));
  std::vector<std::size_t> correct(threads, 0);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t e = worker; e < episodes; e += threads) {
        Rng rng(derive_seed(seed, e));
        correct[worker] += episode_correct(sample_episode(pool, cfg, rng), mlp, cfg);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool_threads;
    for (std::size_t w = 0; w < threads; ++w) pool_threads.emplace_back(work, w);
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  const double queries = static_cast<double>(episodes * cfg.way * cfg.queries);
  return static_cast<double>(total) / queries;
}

struct EvalResult {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample stddev of repeat means / sqrt(repeats)
  std::vector<double> per_repeat;
};

inline EvalResult summarize_repeats(std::vector<double> per_repeat) {
  EvalResult r;
  const auto count = static_cast<double>(per_repeat.size());
  double sum = 0.0;
  for (double a : per_repeat) sum += a;
  r.mean = sum / count;
  if (per_repeat.size() > 1) {
    double ss = 0.0;
    for (double a : per_repeat) ss += (a - r.mean) * (a - r.mean);
    r.ci95 = 1.96 * std::sqrt(ss / (count - 1.0)) / std::sqrt(count);
  }
  r.per_repeat = std::move(per_repeat);
  return r;
}

/// Seed of repeat `r` in `evaluate`.
inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) noexcept {
  return derive_seed(seed ^ 0x5EED5EED5EED5EEDULL, r);
}

inline EvalResult evaluate(const EpisodePool& pool, const ThresholdMlp& mlp,
                           const TrainConfig& cfg, std::size_t episodes, std::size_t repeats,
                           std::size_t threads = 1) {
  if (repeats == 0) throw InvalidConfig("evaluation needs at least one repeat");
  std::vector<double> acc;
  for (std::size_t r = 0; r < repeats; ++r) {
    acc.push_back(evaluate_once(pool, mlp, cfg, episodes, repeat_seed(cfg.seed, r), threads));
  }
  return summarize_repeats(std::move(acc));
}

}  // namespace tcds
