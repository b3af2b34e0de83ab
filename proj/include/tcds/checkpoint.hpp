#pragma once

// JSON checkpoints of the threshold MLP plus the settings needed to score with
// it. Parameters are written with 17 significant digits, which round-trips
// every double exactly.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tcds/cds.hpp"
#include "tcds/query.hpp"
#include "tcds/train.hpp"

namespace tcds {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  double lambda = 20.0;
  double k_fraction = 0.1;
  ScoreForm score_form = ScoreForm::weighted_sim;
  SupportMode mode = SupportMode::raw;
  std::uint64_t seed = 0;
  ThresholdMlp mlp;

  std::size_t d() const noexcept { return mlp.descriptor_dim(); }
  std::size_t hidden_dim() const noexcept { return mlp.hidden_dim(); }

  /// Copies the scoring settings into `cfg`.
  void apply_to(TrainConfig& cfg) const {
    cfg.lambda = lambda;
    cfg.k_fraction = k_fraction;
    cfg.score_form = score_form;
    cfg.mode = mode;
    cfg.hidden_dim = hidden_dim();
  }

  static Checkpoint from_run(const TrainConfig& cfg, ThresholdMlp mlp) {
    Checkpoint ck;
    ck.lambda = cfg.lambda;
    ck.k_fraction = cfg.k_fraction;
    ck.score_form = cfg.score_form;
    ck.mode = cfg.mode;
    ck.seed = cfg.seed;
    ck.mlp = std::move(mlp);
    return ck;
  }
};

namespace detail {

inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_array(std::ostringstream& os, std::span<const double> values) {
  os << '[';
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? ", " : "") << exact(values[i]);
  os << ']';
}

}  // namespace detail

inline std::string checkpoint_to_json(const Checkpoint& ck) {
  const std::size_t h = ck.mlp.hidden_dim();
  const std::size_t in = ck.mlp.input_dim();
  std::ostringstream os;
  os << "{\n"
     << "  \"format_version\": " << ck.format_version << ",\n"
     << "  \"d\": " << ck.d() << ",\n"
     << "  \"hidden_dim\": " << h << ",\n"
     << "  \"lambda\": " << detail::exact(ck.lambda) << ",\n"
     << "  \"K\": " << detail::exact(ck.k_fraction) << ",\n"
     << "  \"score_form\": \"" << to_string(ck.score_form) << "\",\n"
     << "  \"mode\": \"" << to_string(ck.mode) << "\",\n"
     << "  \"seed\": " << ck.seed << ",\n"
     << "  \"parameters\": {\n"
     << "    \"W1\": [";
  for (std::size_t r = 0; r < h; ++r) {
    os << (r ? ",\n           " : "");
    detail::write_array(os, ck.mlp.w1().subspan(r * in, in));
  }
  os << "],\n    \"b1\": ";
  detail::write_array(os, ck.mlp.b1());
  os << ",\n    \"W2\": [";
  detail::write_array(os, ck.mlp.w2());
  os << "],\n    \"b2\": " << detail::exact(ck.mlp.b2()) << "\n  }\n}\n";
  return os.str();
}

inline Checkpoint checkpoint_from_json(const std::string& text) {
  using nlohmann::json;
  Checkpoint ck;
  try {
    const json j = json::parse(text);
    ck.format_version = j.at("format_version").get<int>();
    if (ck.format_version != kCheckpointVersion) {
      throw InvalidInput("unsupported checkpoint format_version " +
                         std::to_string(ck.format_version));
    }
    const auto d = j.at("d").get<std::size_t>();
    const auto h = j.at("hidden_dim").get<std::size_t>();
    ck.lambda = j.at("lambda").get<double>();
    ck.k_fraction = j.at("K").get<double>();
    ck.score_form = parse_score_form(j.at("score_form").get<std::string>());
    ck.mode = parse_support_mode(j.at("mode").get<std::string>());
    ck.seed = j.at("seed").get<std::uint64_t>();

    ck.mlp = ThresholdMlp(d, h);
    const auto& p = j.at("parameters");
    const auto& w1 = p.at("W1");
    if (w1.size() != h) throw InvalidInput("checkpoint W1 has wrong row count");
    auto dst_w1 = ck.mlp.w1();
    for (std::size_t r = 0; r < h; ++r) {
      if (w1[r].size() != 2 * d) throw InvalidInput("checkpoint W1 row has wrong length");
      for (std::size_t c = 0; c < 2 * d; ++c) dst_w1[r * 2 * d + c] = w1[r][c].get<double>();
    }
    const auto& b1 = p.at("b1");
    const auto& w2 = p.at("W2");
    if (b1.size() != h) throw InvalidInput("checkpoint b1 has wrong length");
    if (w2.size() != 1 || w2[0].size() != h) throw InvalidInput("checkpoint W2 must be 1 x H");
    for (std::size_t r = 0; r < h; ++r) {
      ck.mlp.b1()[r] = b1[r].get<double>();
      ck.mlp.w2()[r] = w2[0][r].get<double>();
    }
    ck.mlp.b2() = p.at("b2").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed checkpoint: ") + e.what());
  }
  for (double v : ck.mlp.parameters()) {
    if (!std::isfinite(v)) throw InvalidInput("checkpoint holds non-finite parameters");
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << checkpoint_to_json(ck);
  if (!out) throw Error("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace tcds
