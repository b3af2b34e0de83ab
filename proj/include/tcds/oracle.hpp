#pragma once

// Brute-force reference for the full scoring pipeline and a runner that
// compares it against the library on random small instances.
//
// The naive_* functions deliberately share no code with core/cds/query: plain
// nested loops over std::vector<double>, softmax without max subtraction,
// selection by a full sort, and the MLP evaluated straight from the flat
// parameter buffer.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcds/cds.hpp"
#include "tcds/core.hpp"
#include "tcds/query.hpp"
#include "tcds/train.hpp"

namespace tcds {

namespace naive {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec to_vec(const LocalDescriptor& d) { return Vec(d.values().begin(), d.values().end()); }

inline double cos_sim(const Vec& a, const Vec& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  double c = ab / (std::sqrt(aa) * std::sqrt(bb));
  if (c > 1) c = 1;
  if (c < -1) c = -1;
  return c;
}

inline Vec softmax(const Vec& x) {
  Vec e(x.size());
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i]);
    s += e[i];
  }
  for (auto& v : e) v /= s;
  return e;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Scores {
  Mat intra, inter, d_intra, d_inter, cds;  // [class][descriptor]
};

/// pools[c][i] is descriptor i of class c.
inline Scores contrastive(const std::vector<Mat>& pools) {
  Scores s;
  const std::size_t n = pools.size();
  for (std::size_t c = 0; c < n; ++c) {
    Vec intra, inter;
    for (std::size_t i = 0; i < pools[c].size(); ++i) {
      double a = 0;
      int na = 0;
      for (std::size_t j = 0; j < pools[c].size(); ++j) {
        if (j == i) continue;
        a += cos_sim(pools[c][i], pools[c][j]);
        ++na;
      }
      double b = 0;
      int nb = 0;
      for (std::size_t o = 0; o < n; ++o) {
        if (o == c) continue;
        for (const auto& other : pools[o]) {
          b += cos_sim(pools[c][i], other);
          ++nb;
        }
      }
      intra.push_back(a / na);
      inter.push_back(b / nb);
    }
    Vec di = softmax(intra), de = softmax(inter), cds;
    for (std::size_t i = 0; i < di.size(); ++i) cds.push_back(logistic(di[i] / de[i]));
    s.intra.push_back(intra);
    s.inter.push_back(inter);
    s.d_intra.push_back(di);
    s.d_inter.push_back(de);
    s.cds.push_back(cds);
  }
  return s;
}

/// Indices of the top max(1, round(K * P)) scores; ties to the lower index.
inline std::vector<std::size_t> top_k(const Vec& cds, double k_fraction) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < cds.size(); ++i) order.push_back({cds[i], i});
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  auto keep = static_cast<std::size_t>(std::floor(k_fraction * cds.size() + 0.5));
  if (keep < 1) keep = 1;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < keep; ++i) idx.push_back(order[i].second);
  return idx;
}

inline Vec unit(const Vec& v) {
  double s = 0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  Vec out = v;
  if (s > 0) {
    for (auto& x : out) x /= s;
  }
  return out;
}

/// Straight-line evaluation of sigmoid(W2 leaky(W1 x + b1) + b2).
inline double threshold(const ThresholdMlp& mlp, const Vec& x) {
  const auto p = mlp.parameters();
  const std::size_t in = x.size();
  const std::size_t h = mlp.hidden_dim();
  double out = p[h * in + 2 * h];
  for (std::size_t r = 0; r < h; ++r) {
    double z = p[h * in + r];
    for (std::size_t c = 0; c < in; ++c) z += p[r * in + c] * x[c];
    const double a = z > 0 ? z : 0.01 * z;
    out += p[h * in + h + r] * a;
  }
  return logistic(out);
}

struct DescriptorRef {
  Vec sims;
  double disc = 0;
  std::size_t best = 0;
  double threshold = 0;
  double weight = 0;
};

struct QueryRef {
  std::vector<DescriptorRef> descriptors;
  Vec score_weighted, score_literal;
  Vec posterior_weighted, posterior_literal;
  double nll_weighted = 0, nll_literal = 0;
};

inline QueryRef query(const std::vector<Vec>& query_descs, const std::vector<Mat>& pools,
                      const std::vector<std::vector<std::size_t>>& selected,
                      const ThresholdMlp& mlp, double lambda, std::size_t label) {
  const std::size_t n = pools.size();
  const std::size_t d = pools[0][0].size();
  Vec ctx(d, 0.0);
  int count = 0;
  for (std::size_t c = 0; c < n; ++c) {
    for (auto idx : selected[c]) {
      Vec u = unit(pools[c][idx]);
      for (std::size_t t = 0; t < d; ++t) ctx[t] += u[t];
      ++count;
    }
  }
  for (auto& v : ctx) v /= count;
  ctx = unit(ctx);

  QueryRef r;
  r.score_weighted.assign(n, 0.0);
  r.score_literal.assign(n, 0.0);
  for (const auto& lq : query_descs) {
    DescriptorRef e;
    double total = 0;
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0;
      for (auto idx : selected[c]) s += cos_sim(lq, pools[c][idx]);
      e.sims.push_back(s);
      total += s;
    }
    if (total == 0) {
      e.disc = 1.0 / n;
      e.best = static_cast<std::size_t>(std::max_element(e.sims.begin(), e.sims.end()) - e.sims.begin());
    } else {
      e.best = 0;
      for (std::size_t c = 1; c < n; ++c) {
        if (e.sims[c] / total > e.sims[e.best] / total) e.best = c;
      }
      e.disc = e.sims[e.best] / total;
    }
    Vec x = unit(lq);
    x.insert(x.end(), ctx.begin(), ctx.end());
    e.threshold = threshold(mlp, x);
    e.weight = 1.0 / (1.0 + std::exp(-lambda * (e.disc - e.threshold)));
    for (std::size_t c = 0; c < n; ++c) r.score_weighted[c] += e.weight * e.sims[c];
    r.score_literal[e.best] += e.threshold * e.weight;
    r.descriptors.push_back(e);
  }
  r.posterior_weighted = softmax(r.score_weighted);
  r.posterior_literal = softmax(r.score_literal);
  r.nll_weighted = -std::log(r.posterior_weighted[label]);
  r.nll_literal = -std::log(r.posterior_literal[label]);
  return r;
}

}  // namespace naive

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

struct RandomInstance {
  Episode episode;
  SupportMode mode = SupportMode::raw;
  double k_fraction = 1.0;
  double lambda = 20.0;
  ThresholdMlp mlp;
};

/// Small random episode (n <= 5, k <= 2, m <= 6, d <= 8) with a random MLP.
inline RandomInstance random_instance(Rng& rng) {
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit01(0.0, 1.0);

  RandomInstance inst;
  const std::size_t n = uniform_int(2, 5);
  const std::size_t k = uniform_int(1, 2);
  const std::size_t m = uniform_int(2, 6);
  const std::size_t d = uniform_int(2, 8);
  const std::size_t q_per_class = uniform_int(1, 2);

  auto random_set = [&](std::size_t images) {
    std::vector<LocalDescriptor> descs;
    for (std::size_t i = 0; i < images * m; ++i) {
      std::vector<double> v(d);
      for (double& x : v) x = gauss(rng);
      descs.emplace_back(std::move(v));
    }
    return DescriptorSet(std::move(descs), images, m);
  };

  inst.episode.way = n;
  inst.episode.shot = k;
  for (std::size_t c = 0; c < n; ++c) inst.episode.support.push_back(random_set(k));
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t q = 0; q < q_per_class; ++q) inst.episode.queries.push_back({random_set(1), c});
  }
  inst.mode = unit01(rng) < 0.5 ? SupportMode::raw : SupportMode::class_mean;
  static constexpr double kGrid[] = {0.05, 0.1, 0.25, 0.3, 0.5, 0.75, 1.0};
  inst.k_fraction = kGrid[uniform_int(0, std::size(kGrid) - 1)];
  inst.lambda = 1.0 + 29.0 * unit01(rng);
  const std::size_t hidden = uniform_int(1, 8);
  inst.mlp = ThresholdMlp(d, hidden);
  for (double& p : inst.mlp.parameters()) p = gauss(rng);
  return inst;
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

struct OracleQuantity {
  std::string name;
  double max_deviation = 0.0;
  std::size_t mismatches = 0;  // only for index-set comparisons
};

struct OracleReport {
  std::size_t cases = 0;
  double tolerance = 1e-12;
  double seconds = 0.0;
  std::vector<OracleQuantity> quantities;

  bool passed() const noexcept {
    for (const auto& q : quantities) {
      if (!(q.max_deviation <= tolerance) || q.mismatches != 0) return false;
    }
    return cases > 0;
  }

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& q : quantities) {
      if (!(q.max_deviation <= tolerance) || q.mismatches != 0) out.push_back(q.name);
    }
    return out;
  }

  std::string to_text() const {
    std::string s = "quantity\tmax_abs_deviation\tmismatches\tstatus\n";
    char line[160];
    for (const auto& q : quantities) {
      const bool ok = q.max_deviation <= tolerance && q.mismatches == 0;
      std::snprintf(line, sizeof line, "%s\t%.3e\t%zu\t%s\n", q.name.c_str(), q.max_deviation,
                    q.mismatches, ok ? "ok" : "FAIL");
      s += line;
    }
    std::snprintf(line, sizeof line, "cases=%zu tolerance=%.0e elapsed=%.3fs result=%s\n", cases,
                  tolerance, seconds, passed() ? "PASS" : "FAIL");
    s += line;
    return s;
  }
};

/// Test hook: runs on the library's scores before they are compared and used
/// for selection. Lets a mutation test prove the suite notices a perturbation.
using ScoreMutation = std::function<void(std::vector<ClassScores>&)>;

inline OracleReport run_oracle_suite(std::uint64_t seed, std::size_t cases,
                                     const ScoreMutation& mutate = {}) {
  const auto start = std::chrono::steady_clock::now();
  OracleReport report;
  report.cases = cases;
  enum Q {
    kIntra, kInter, kDIntra, kDInter, kCds, kTopK, kClassSim, kDisc, kThreshold, kWeight,
    kScoreWeighted, kScoreLiteral, kPosterior, kLoss, kCount
  };
  report.quantities = {
      {"intra_similarity"}, {"inter_similarity"}, {"intra_softmax"}, {"inter_softmax"},
      {"contrastive_score"}, {"top_k_indices"}, {"class_similarity"}, {"query_disc_score"},
      {"threshold"}, {"weights_map"}, {"score_weighted_sim"}, {"score_literal"},
      {"posterior"}, {"loss"}};
  auto& qs = report.quantities;
  auto track = [&qs](int which, double a, double b) {
    const double dev = std::fabs(a - b);
    // NaN deviations must register as failures.
    if (!(dev <= qs[which].max_deviation)) qs[which].max_deviation = std::isnan(dev) ? INFINITY : dev;
  };

  for (std::size_t t = 0; t < cases; ++t) {
    Rng rng(derive_seed(seed, t));
    const RandomInstance inst = random_instance(rng);
    const Episode& ep = inst.episode;

    // Library path.
    const SupportPool pool = SupportPool::from_episode(ep, inst.mode);
    auto scores = contrastive_scores(pool);
    if (mutate) mutate(scores);
    const CdsSelection sel = select_top_k(scores, inst.k_fraction);

    // Reference path.
    std::vector<naive::Mat> ref_pools;
    for (const auto& set : ep.support) {
      naive::Mat cls;
      if (inst.mode == SupportMode::raw) {
        for (const auto& desc : set.descriptors()) cls.push_back(naive::to_vec(desc));
      } else {
        const std::size_t m = set.per_image(), k = set.image_count(), d = set.dim();
        for (std::size_t j = 0; j < m; ++j) {
          naive::Vec mean(d, 0.0);
          for (std::size_t img = 0; img < k; ++img) {
            for (std::size_t x = 0; x < d; ++x) mean[x] += set[img * m + j][x];
          }
          for (auto& v : mean) v /= static_cast<double>(k);
          cls.push_back(mean);
        }
      }
      ref_pools.push_back(cls);
    }
    const naive::Scores ref = naive::contrastive(ref_pools);
    std::vector<std::vector<std::size_t>> ref_sel;
    for (const auto& cds : ref.cds) ref_sel.push_back(naive::top_k(cds, inst.k_fraction));

    bool same_selection = true;
    for (std::size_t c = 0; c < ep.way; ++c) {
      for (std::size_t i = 0; i < ref_pools[c].size(); ++i) {
        track(kIntra, scores[c].sim_intra[i], ref.intra[c][i]);
        track(kInter, scores[c].sim_inter[i], ref.inter[c][i]);
        track(kDIntra, scores[c].d_intra[i], ref.d_intra[c][i]);
        track(kDInter, scores[c].d_inter[i], ref.d_inter[c][i]);
        track(kCds, scores[c].cds[i], ref.cds[c][i]);
      }
      if (sel.classes[c].indices != ref_sel[c]) {
        ++qs[kTopK].mismatches;
        same_selection = false;
      }
    }
    if (!same_selection) continue;  // downstream values are not comparable

    const ScoreOptions weighted{inst.lambda, ScoreForm::weighted_sim};
    const ScoreOptions literal{inst.lambda, ScoreForm::literal};
    const auto eval_w = episode_scores(ep, pool, sel, inst.mlp, weighted);
    const auto eval_l = episode_scores(ep, pool, sel, inst.mlp, literal);
    double ref_loss_w = 0, ref_loss_l = 0;
    for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
      const auto& q = ep.queries[qi];
      std::vector<naive::Vec> descs;
      for (const auto& desc : q.image.descriptors()) descs.push_back(naive::to_vec(desc));
      const auto r = naive::query(descs, ref_pools, ref_sel, inst.mlp, inst.lambda, q.label);
      const auto& lw = eval_w.queries[qi];
      const auto& ll = eval_l.queries[qi];
      for (std::size_t i = 0; i < descs.size(); ++i) {
        const auto& e = lw.descriptors[i];
        const auto& re = r.descriptors[i];
        for (std::size_t c = 0; c < ep.way; ++c) track(kClassSim, e.sims[c], re.sims[c]);
        // Also exercise the standalone operations, not just the batched path.
        const auto standalone = class_similarity(q.image[i], sel, pool);
        for (std::size_t c = 0; c < ep.way; ++c) track(kClassSim, standalone[c], re.sims[c]);
        track(kDisc, e.disc.value, re.disc);
        track(kDisc, query_disc_score(re.sims).value, re.disc);
        if (e.disc.best_class != re.best) ++qs[kDisc].mismatches;
        track(kThreshold, e.threshold, re.threshold);
        track(kThreshold, predict_threshold(inst.mlp, q.image[i], sel, pool), re.threshold);
        track(kWeight, e.weight, re.weight);
        track(kWeight, weights_map(re.disc, re.threshold, inst.lambda), re.weight);
      }
      for (std::size_t c = 0; c < ep.way; ++c) {
        track(kScoreWeighted, lw.scores[c], r.score_weighted[c]);
        track(kScoreLiteral, ll.scores[c], r.score_literal[c]);
        track(kPosterior, lw.posterior[c], r.posterior_weighted[c]);
        track(kPosterior, ll.posterior[c], r.posterior_literal[c]);
      }
      ref_loss_w += r.nll_weighted;
      ref_loss_l += r.nll_literal;
    }
    const auto nq = static_cast<double>(ep.queries.size());
    track(kLoss, eval_w.loss, ref_loss_w / nq);
    track(kLoss, eval_l.loss, ref_loss_l / nq);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace tcds
