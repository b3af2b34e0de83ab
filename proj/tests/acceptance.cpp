// End-to-end acceptance run. Each check prints one PASS/FAIL line,
// followed by indented measurements.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tcds/tcds.hpp"

using namespace tcds;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

int failures = 0;

void verdict(int id, bool ok, const std::string& what) {
  std::printf("%s [%d] %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void detail(const char* fmt, auto... args) {
  std::printf("       ");
  std::printf(fmt, args...);
  std::printf("\n");
  std::fflush(stdout);
}

// Separable pool geometry shared by several criteria.
SyntheticSpec separable_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.classes = 20;
  s.images_per_class = 40;
  s.d = 32;
  s.m = 25;
  s.background_ratio = 0.3;
  s.noise = 0.1;
  s.seed = seed;
  return s;
}

constexpr double kGrid[] = {1, 2, 5, 10, 25, 30};

void oracle_equivalence() {
  const auto r = run_oracle_suite(0, 100);
  double worst = 0.0;
  for (const auto& q : r.quantities) worst = std::max(worst, q.max_deviation);
  verdict(1, r.passed() && r.seconds < 10.0, "oracle equivalence, 100 cases, <= 1e-12, < 10 s");
  detail("max deviation %.3e, failing quantities %zu, %.2f s", worst, r.failing().size(),
         r.seconds);
}

void gradient_correctness() {
  const auto r = run_gradcheck(0, 20);
  verdict(2, r.passed() && r.seconds < 30.0,
          "gradient check, 20 cases, rel. error < 1e-4, < 30 s");
  detail("max relative error %.3e over %zu parameters (%zu at a kink skipped), %.2f s",
         r.max_relative_error, r.checked, r.skipped_kinks, r.seconds);
  detail("worst: %s", r.worst.c_str());
}

void chance_level() {
  SyntheticSpec spec = separable_spec(31);
  spec.background_ratio = 0.95;
  spec.noise = 2.0;
  const auto pool = generate_synthetic_pool(spec, Split::test).pool;
  TrainConfig cfg;
  const auto start = Clock::now();
  const double acc = evaluate_once(pool, initial_mlp(cfg, spec.d), cfg, 2000, 1);
  verdict(3, std::fabs(acc - 0.20) <= 0.02,
          "untrained 5-way accuracy on rho 0.95, noise 2.0 is 0.20 +- 0.02");
  detail("accuracy %.4f over 2000 episodes, %.1f s", acc, since(start));
}

struct TrainedModel {
  EpisodePool test;
  ThresholdMlp mlp;
  TrainConfig cfg;
};

TrainedModel separable_accuracy() {
  const auto start = Clock::now();
  const auto train = generate_synthetic_pool(separable_spec(1), Split::train).pool;
  const auto test = generate_synthetic_pool(separable_spec(2), Split::test).pool;
  require_disjoint_labels(train, test);
  TrainConfig cfg;
  cfg.seed = 3;
  const auto result = meta_train(train, cfg);
  const double train_seconds = since(start);

  TrainConfig five = cfg, one = cfg;
  one.shot = 1;
  const double acc5 = evaluate_once(test, result.mlp, five, 2000, 1);
  const double acc1 = evaluate_once(test, result.mlp, one, 2000, 1);
  const double seconds = since(start);
  verdict(4, acc5 >= 0.95 && acc1 >= 0.85 && seconds < 300.0,
          "separable pool: 5-shot >= 0.95, 1-shot >= 0.85, < 5 min");
  detail("5-way 5-shot %.4f, 5-way 1-shot %.4f (2000 episodes each)", acc5, acc1);
  detail("training %.1f s, total %.1f s", train_seconds, seconds);
  detail("mean training loss epoch 1 %.4e, epoch %zu %.4e", result.log.front().mean_loss,
         result.log.size(), result.log.back().mean_loss);
  return {test, result.mlp, cfg};
}

void background_discrimination() {
  const auto start = Clock::now();
  std::size_t wins = 0;
  double worst_gap = INFINITY;
  for (std::uint64_t p = 0; p < 100; ++p) {
    const auto s = generate_synthetic_pool(separable_spec(1000 + p));
    Rng rng(derive_seed(77, p));
    const auto ep = sample_episode(s.pool, 5, 5, 1, rng);
    const auto pool = SupportPool::from_episode(ep, SupportMode::raw);
    const auto scores = contrastive_scores(pool);
    double fg = 0.0, bg = 0.0;
    std::size_t nfg = 0, nbg = 0;
    for (const auto& cls : scores) {
      for (std::size_t i = 0; i < cls.cds.size(); ++i) {
        if (s.background[i % s.pool.per_image()]) {
          bg += cls.cds[i];
          ++nbg;
        } else {
          fg += cls.cds[i];
          ++nfg;
        }
      }
    }
    const double gap = fg / nfg - bg / nbg;
    worst_gap = std::min(worst_gap, gap);
    if (gap > 0.0) ++wins;
  }
  verdict(5, wins >= 95, "class descriptors outscore background in >= 95 of 100 pools");
  detail("%zu / 100 pools, smallest mean gap %.4e, %.1f s", wins, worst_gap, since(start));
}

void ablation_shape(const TrainedModel& model) {
  const auto start = Clock::now();
  TrainConfig cfg = model.cfg;
  std::vector<double> acc;
  for (double k : kGrid) {
    cfg.k_fraction = k / 100.0;
    acc.push_back(evaluate_once(model.test, model.mlp, cfg, 2000, cfg.seed));
  }
  const auto lo = std::min_element(acc.begin(), acc.end());
  const auto hi = std::max_element(acc.begin(), acc.end());
  const std::size_t best = static_cast<std::size_t>(hi - acc.begin());
  verdict(6, *hi > *lo, "top-K ablation on the separable pool is non-constant");
  std::string row;
  char cell[48];
  for (std::size_t i = 0; i < acc.size(); ++i) {
    std::snprintf(cell, sizeof cell, "%s%g%%=%.4f", i ? ", " : "", kGrid[i], acc[i]);
    row += cell;
  }
  detail("%s", row.c_str());
  detail("argmax K %g%% (lowest on ties), spread %.2e, %.1f s", kGrid[best], *hi - *lo,
         since(start));

  // Not part of the verdict: the same sweep on a noisier pool, untrained model.
  SyntheticSpec noisy = separable_spec(41);
  noisy.noise = 0.6;
  const auto pool = generate_synthetic_pool(noisy, Split::test).pool;
  const auto mlp = initial_mlp(model.cfg, noisy.d);
  row.clear();
  for (std::size_t i = 0; i < std::size(kGrid); ++i) {
    cfg.k_fraction = kGrid[i] / 100.0;
    std::snprintf(cell, sizeof cell, "%s%g%%=%.4f", i ? ", " : "", kGrid[i],
                  evaluate_once(pool, mlp, cfg, 500, cfg.seed));
    row += cell;
  }
  detail("reference, noise 0.6, 500 episodes: %s", row.c_str());
}

// --- invariant suites ------------------------------------------------------

bool scale_invariance(Rng& rng) {
  std::uniform_real_distribution<double> u(0.01, 100.0);
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const auto pool = SupportPool::from_episode(inst.episode, inst.mode);
    const double s = u(rng);
    std::vector<std::vector<LocalDescriptor>> scaled(pool.num_classes());
    for (std::size_t c = 0; c < pool.num_classes(); ++c) {
      for (const auto& d : pool[c]) {
        std::vector<double> v(d.values().begin(), d.values().end());
        for (double& x : v) x *= s;
        scaled[c].emplace_back(std::move(v));
      }
    }
    const auto a = contrastive_scores(pool);
    const auto b = contrastive_scores(SupportPool(std::move(scaled), pool.mode()));
    for (std::size_t c = 0; c < a.size(); ++c) {
      for (std::size_t i = 0; i < a[c].cds.size(); ++i) {
        if (std::fabs(a[c].cds[i] - b[c].cds[i]) > 1e-12) return false;
      }
    }
    const auto sa = select_top_k(a, inst.k_fraction), sb = select_top_k(b, inst.k_fraction);
    for (std::size_t c = 0; c < a.size(); ++c) {
      if (sa.classes[c].indices != sb.classes[c].indices) return false;
    }
  }
  return true;
}

bool softmax_normalization(Rng& rng) {
  std::uniform_real_distribution<double> u(-300.0, 300.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> x(1 + t % 40);
    for (double& v : x) v = u(rng);
    const auto p = softmax(x);
    if (std::fabs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) > 1e-12) return false;
  }
  return true;
}

bool weight_monotonicity(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10000; ++t) {
    const double d = u(rng), v = u(rng), lambda = 100.0 * u(rng), h = 1e-4;
    if (weights_map(d + h, v, lambda) < weights_map(d, v, lambda)) return false;
    if (weights_map(d, v + h, lambda) > weights_map(d, v, lambda)) return false;
  }
  return true;
}

bool posterior_validity(Rng& rng) {
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const auto prep = prepare_episode(inst.episode, inst.mode, inst.k_fraction);
    for (ScoreForm form : {ScoreForm::weighted_sim, ScoreForm::literal}) {
      const auto eval =
          episode_scores(inst.episode, prep.pool, prep.selection, inst.mlp, {inst.lambda, form});
      for (const auto& q : eval.queries) {
        double sum = 0.0;
        for (double p : q.posterior) {
          if (!(p >= 0.0 && p <= 1.0)) return false;
          sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-12 || !(q.nll >= 0.0)) return false;
      }
    }
  }
  return true;
}

bool permutation_equivariance(Rng& rng) {
  for (int t = 0; t < 100; ++t) {
    const auto inst = random_instance(rng);
    const auto pool = SupportPool::from_episode(inst.episode, inst.mode);
    const std::size_t n = pool.num_classes();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<LocalDescriptor>> classes(n);
    std::vector<std::vector<std::size_t>> inner(n);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& src = pool[perm[c]];
      inner[c].resize(src.size());
      std::iota(inner[c].begin(), inner[c].end(), 0u);
      std::shuffle(inner[c].begin(), inner[c].end(), rng);
      for (std::size_t i : inner[c]) classes[c].push_back(src[i]);
    }
    const auto a = contrastive_scores(pool);
    const auto b = contrastive_scores(SupportPool(std::move(classes), pool.mode()));
    for (std::size_t c = 0; c < n; ++c) {
      for (std::size_t i = 0; i < inner[c].size(); ++i) {
        if (std::fabs(b[c].cds[i] - a[perm[c]].cds[inner[c][i]]) > 1e-12) return false;
      }
    }
  }
  return true;
}

bool file_round_trip() {
  const auto pool = generate_synthetic_pool(separable_spec(5)).pool;
  const auto bytes = encode_descriptor_file(pool);
  const auto back = decode_descriptor_file(bytes);
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    if (back[c].label != pool[c].label) return false;
    if (back[c].images.descriptors() != pool[c].images.descriptors()) return false;
  }
  return encode_descriptor_file(back) == bytes;
}

bool checkpoint_round_trip(Rng& rng) {
  TrainConfig cfg;
  cfg.lambda = 7.3;
  cfg.score_form = ScoreForm::literal;
  const auto ck = Checkpoint::from_run(cfg, ThresholdMlp::initialized(32, 32, rng));
  const auto back = checkpoint_from_json(checkpoint_to_json(ck));
  return back.mlp == ck.mlp && back.lambda == ck.lambda && back.score_form == ck.score_form &&
         checkpoint_to_json(back) == checkpoint_to_json(ck);
}

bool seed_determinism() {
  SyntheticSpec spec = separable_spec(6);
  spec.classes = 8;
  spec.images_per_class = 20;
  const auto pool = generate_synthetic_pool(spec).pool;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.episodes_per_epoch = 10;
  cfg.seed = 9;
  const auto a = checkpoint_to_json(Checkpoint::from_run(cfg, meta_train(pool, cfg).mlp));
  const auto b = checkpoint_to_json(Checkpoint::from_run(cfg, meta_train(pool, cfg).mlp));
  return a == b;
}

void invariant_suites() {
  const auto start = Clock::now();
  Rng rng(2026);
  const std::vector<std::pair<const char*, std::function<bool()>>> suites = {
      {"scale invariance of CDS and selection", [&] { return scale_invariance(rng); }},
      {"softmax normalization", [&] { return softmax_normalization(rng); }},
      {"weights-map monotonicity", [&] { return weight_monotonicity(rng); }},
      {"posterior validity", [&] { return posterior_validity(rng); }},
      {"permutation equivariance", [&] { return permutation_equivariance(rng); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(rng); }},
      {"descriptor file round trip", file_round_trip},
      {"seed determinism", seed_determinism},
  };
  bool all = true;
  std::vector<std::string> lines;
  for (const auto& [name, run] : suites) {
    const bool ok = run();
    all = all && ok;
    lines.push_back(std::string(ok ? "ok   " : "FAIL ") + name);
  }
  verdict(7, all, "invariant suites");
  for (const auto& l : lines) detail("%s", l.c_str());
  detail("%.1f s", since(start));
}

void lambda_limit(const TrainedModel& model) {
  const ScoreOptions sharp{1e4, ScoreForm::weighted_sim};
  std::size_t checked = 0, exempt = 0, violations = 0;
  auto scan = [&](const QueryEvaluation& eval) {
    for (const auto& q : eval.queries) {
      for (const auto& e : q.descriptors) {
        if (std::fabs(e.disc.value - e.threshold) < 1e-3) {
          ++exempt;
          continue;
        }
        ++checked;
        if (std::min(e.weight, 1.0 - e.weight) > 1e-3) ++violations;
      }
    }
  };
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const auto inst = random_instance(rng);
    const auto prep = prepare_episode(inst.episode, inst.mode, inst.k_fraction);
    scan(episode_scores(inst.episode, prep.pool, prep.selection, inst.mlp, sharp));
  }
  for (std::uint64_t e = 0; e < 20; ++e) {
    Rng ep_rng(derive_seed(99, e));
    const auto ep = sample_episode(model.test, model.cfg, ep_rng);
    const auto prep = prepare_episode(ep, model.cfg.mode, model.cfg.k_fraction);
    scan(episode_scores(ep, prep.pool, prep.selection, model.mlp, sharp));
  }
  verdict(8, violations == 0 && checked > 0,
          "lambda 1e4: every weight within 1e-3 of 0 or 1 unless |D - V| < 1e-3");
  detail("%zu weights checked, %zu exempt, %zu violations", checked, exempt, violations);
}

}  // namespace

int main() {
  const auto start = Clock::now();
  oracle_equivalence();
  gradient_correctness();
  chance_level();
  const auto model = separable_accuracy();
  background_discrimination();
  ablation_shape(model);
  invariant_suites();
  lambda_limit(model);
  std::printf("%d of 8 criteria failed, %.1f s\n", failures, since(start));
  return failures == 0 ? 0 : 1;
}
