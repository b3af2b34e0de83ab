// tcds: command-line front end for synthetic data generation, meta-training,
// evaluation, the top-K ablation, and the verification suites.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcds/tcds.hpp"

namespace {

tcds::EpisodePool load_pools(const std::vector<std::string>& paths, tcds::Split split) {
  tcds::EpisodePool pool(split);
  for (const auto& path : paths) pool.merge(tcds::load_descriptor_file(path, split));
  return pool;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw tcds::InvalidConfig("bad grid entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw tcds::InvalidConfig("empty K grid");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive descriptor selection for few-shot classification"};
  app.require_subcommand(1);

  // gen-synth
  tcds::SyntheticSpec synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic descriptor pool (LDPK)");
  gen->add_option("--out", synth_out, "Output file")->required();
  gen->add_option("--classes", synth.classes, "Number of classes")->required();
  gen->add_option("--images", synth.images_per_class, "Images per class")->required();
  gen->add_option("--d", synth.d, "Descriptor dimension")->required();
  gen->add_option("--m", synth.m, "Descriptors per image")->required();
  gen->add_option("--background-ratio", synth.background_ratio, "Background fraction in [0,1)")
      ->required();
  gen->add_option("--noise", synth.noise, "Per-component noise stddev")->required();
  gen->add_option("--seed", synth.seed, "RNG seed")->required();

  // train
  tcds::TrainConfig cfg;
  std::vector<std::string> data;
  std::string ckpt_path, score_form = "weighted-sim", mode = "raw";
  double k_percent = 10.0;
  auto* train = app.add_subcommand("train", "Meta-train the threshold predictor");
  train->add_option("--data", data, "LDPK file (repeatable)")->required();
  train->add_option("--way", cfg.way, "Classes per episode")->capture_default_str();
  train->add_option("--shot", cfg.shot, "Support images per class")->capture_default_str();
  train->add_option("--queries", cfg.queries, "Query images per class")->capture_default_str();
  train->add_option("--k-percent", k_percent, "Top-K support selection, percent")
      ->capture_default_str();
  train->add_option("--lambda", cfg.lambda, "Weights-map sharpness")->capture_default_str();
  train->add_option("--score-form", score_form, "weighted-sim | literal")
      ->check(CLI::IsMember({"weighted-sim", "literal"}))
      ->capture_default_str();
  train->add_option("--mode", mode, "raw | class-mean")
      ->check(CLI::IsMember({"raw", "class-mean"}))
      ->capture_default_str();
  train->add_option("--lr", cfg.learning_rate, "Base learning rate")->capture_default_str();
  train->add_option("--epochs", cfg.epochs, "Epochs")->capture_default_str();
  train->add_option("--episodes-per-epoch", cfg.episodes_per_epoch, "Episodes per epoch")
      ->capture_default_str();
  train->add_option("--hidden", cfg.hidden_dim, "Hidden width (0 = d)")->capture_default_str();
  train->add_option("--batch", cfg.batch_episodes, "Episodes per optimizer step")
      ->capture_default_str();
  train->add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
  train->add_option("--ckpt", ckpt_path, "Checkpoint output")->required();

  // eval
  std::string eval_data;
  std::size_t episodes = 10000, repeats = 5, threads = 1;
  tcds::TrainConfig eval_cfg;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on sampled episodes");
  eval->add_option("--data", eval_data, "LDPK file")->required();
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval->add_option("--way", eval_cfg.way)->capture_default_str();
  eval->add_option("--shot", eval_cfg.shot)->capture_default_str();
  eval->add_option("--queries", eval_cfg.queries)->capture_default_str();
  eval->add_option("--episodes", episodes)->capture_default_str();
  eval->add_option("--repeats", repeats)->capture_default_str();
  eval->add_option("--seed", eval_cfg.seed)->capture_default_str();
  eval->add_option("--threads", threads, "Worker threads")->capture_default_str();

  // ablate-topk
  std::string grid = "1,2,5,10,25,30";
  std::size_t ablate_episodes = 2000;
  auto* ablate = app.add_subcommand("ablate-topk", "Accuracy as a function of K");
  ablate->add_option("--data", eval_data, "LDPK file")->required();
  ablate->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  ablate->add_option("--grid", grid, "Comma-separated K percentages")->capture_default_str();
  ablate->add_option("--way", eval_cfg.way)->capture_default_str();
  ablate->add_option("--shot", eval_cfg.shot)->capture_default_str();
  ablate->add_option("--queries", eval_cfg.queries)->capture_default_str();
  ablate->add_option("--episodes", ablate_episodes)->capture_default_str();
  ablate->add_option("--seed", eval_cfg.seed)->capture_default_str();
  ablate->add_option("--threads", threads, "Worker threads")->capture_default_str();

  // gradcheck / oracle
  std::uint64_t check_seed = 0;
  std::size_t check_cases = 20;
  auto* gradcheck = app.add_subcommand("gradcheck", "Analytic vs central-difference gradients");
  gradcheck->add_option("--seed", check_seed)->capture_default_str();
  gradcheck->add_option("--cases", check_cases)->capture_default_str();
  auto* oracle = app.add_subcommand("oracle", "Compare every pipeline quantity to a brute-force reference");
  oracle->add_option("--seed", check_seed)->capture_default_str();
  oracle->add_option("--cases", check_cases)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto pool = tcds::generate_synthetic_pool(synth);
      tcds::write_descriptor_file(synth_out, pool.pool);
      std::printf("wrote %zu classes x %zu images x %zu descriptors (d=%zu) to %s\n",
                  synth.classes, synth.images_per_class, synth.m, synth.d, synth_out.c_str());
      return 0;
    }
    if (*train) {
      cfg.k_fraction = k_percent / 100.0;
      cfg.score_form = tcds::parse_score_form(score_form);
      cfg.mode = tcds::parse_support_mode(mode);
      const auto pool = load_pools(data, tcds::Split::train);
      std::printf("epoch\tmean_loss\tlr\tseconds\n");
      const auto result = tcds::meta_train(pool, cfg, [](const tcds::EpochLog& e) {
        std::printf("%s\n", tcds::format_log_line(e).c_str());
        std::fflush(stdout);
      });
      tcds::save_checkpoint(ckpt_path, tcds::Checkpoint::from_run(cfg, result.mlp));
      return 0;
    }
    if (*eval || *ablate) {
      const auto pool = load_pools({eval_data}, tcds::Split::test);
      const auto ck = tcds::load_checkpoint(ckpt_path);
      if (ck.d() != pool.dim()) {
        throw tcds::InvalidInput("checkpoint d=" + std::to_string(ck.d()) +
                                 " does not match data d=" + std::to_string(pool.dim()));
      }
      ck.apply_to(eval_cfg);
      if (*eval) {
        const auto r = tcds::evaluate(pool, ck.mlp, eval_cfg, episodes, repeats, threads);
        std::printf("accuracy %.4f ± %.4f\n", r.mean, r.ci95);
        return 0;
      }
      std::printf("K_percent\taccuracy\n");
      double best_acc = -1.0, best_k = 0.0;
      for (double k : parse_grid(grid)) {
        eval_cfg.k_fraction = k / 100.0;
        const double acc =
            tcds::evaluate_once(pool, ck.mlp, eval_cfg, ablate_episodes, eval_cfg.seed, threads);
        std::printf("%g\t%.4f\n", k, acc);
        if (acc > best_acc) {
          best_acc = acc;
          best_k = k;
        }
      }
      std::printf("best K_percent %g (accuracy %.4f)\n", best_k, best_acc);
      return 0;
    }
    if (*gradcheck) {
      const auto r = tcds::run_gradcheck(check_seed, check_cases);
      std::fputs(r.to_text().c_str(), stdout);
      return r.passed() ? 0 : 1;
    }
    if (*oracle) {
      const auto r = tcds::run_oracle_suite(check_seed, check_cases);
      std::fputs(r.to_text().c_str(), stdout);
      return r.passed() ? 0 : 1;
    }
  } catch (const tcds::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
