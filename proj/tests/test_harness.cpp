#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "tcds/tcds.hpp"

using namespace tcds;

namespace {

SyntheticSpec tiny_spec(std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.classes = 4;
  s.images_per_class = 3;
  s.d = 5;
  s.m = 4;
  s.noise = 0.2;
  s.seed = seed;
  return s;
}

std::vector<std::uint8_t> u32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
}

std::vector<std::uint8_t> handmade_file(const std::string& header, std::size_t floats,
                                        float fill = 1.0f) {
  std::vector<std::uint8_t> out{'L', 'D', 'P', 'K'};
  for (auto b : u32(1)) out.push_back(b);
  for (auto b : u32(static_cast<std::uint32_t>(header.size()))) out.push_back(b);
  out.insert(out.end(), header.begin(), header.end());
  for (std::size_t i = 0; i < floats; ++i) {
    for (auto b : u32(std::bit_cast<std::uint32_t>(fill))) out.push_back(b);
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tcds_test_" + name)).string();
}

}  // namespace

TEST(DescriptorFile, RoundTripIsBitIdentical) {
  const auto pool = generate_synthetic_pool(tiny_spec()).pool;
  const auto bytes = encode_descriptor_file(pool);
  const auto back = decode_descriptor_file(bytes, Split::test);
  EXPECT_EQ(back.split(), Split::test);
  ASSERT_EQ(back.num_classes(), pool.num_classes());
  for (std::size_t c = 0; c < pool.num_classes(); ++c) {
    EXPECT_EQ(back[c].label, pool[c].label);
    EXPECT_EQ(back[c].images.descriptors(), pool[c].images.descriptors());
  }
  EXPECT_EQ(encode_descriptor_file(back), bytes);
}

TEST(DescriptorFile, FileRoundTrip) {
  const auto pool = generate_synthetic_pool(tiny_spec()).pool;
  const auto path = temp_path("pool.ldpk");
  write_descriptor_file(path, pool);
  const auto back = load_descriptor_file(path);
  std::filesystem::remove(path);
  EXPECT_EQ(encode_descriptor_file(back), encode_descriptor_file(pool));
}

TEST(DescriptorFile, TruncatedPayloadReportsSizes) {
  auto bytes = encode_descriptor_file(generate_synthetic_pool(tiny_spec()).pool);
  const std::size_t full = bytes.size();
  bytes.resize(full - 6);
  try {
    decode_descriptor_file(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string what = e.what();
    const std::size_t payload = 4 * 4 * 3 * 5 * 4;
    EXPECT_NE(what.find("expected " + std::to_string(payload)), std::string::npos) << what;
    EXPECT_NE(what.find(std::to_string(payload - 6) + " bytes"), std::string::npos) << what;
    EXPECT_EQ(e.offset(), full - payload);
  }
}

TEST(DescriptorFile, HeaderDimensionMismatch) {
  const std::string header = R"({"d":4,"m":1,"classes":[{"label":"a","image_count":1}]})";
  EXPECT_NO_THROW(decode_descriptor_file(handmade_file(header, 4)));
  EXPECT_THROW(decode_descriptor_file(handmade_file(header, 5)), FormatError);
}

TEST(DescriptorFile, ZeroNormDescriptorIsLocated) {
  const std::string header = R"({"d":2,"m":2,"classes":[{"label":"a","image_count":2}]})";
  auto bytes = handmade_file(header, 8);
  // Zero the descriptor at image 1, index 0.
  const std::size_t at = bytes.size() - 4 * 4;
  std::fill(bytes.begin() + static_cast<std::ptrdiff_t>(at),
            bytes.begin() + static_cast<std::ptrdiff_t>(at + 8), 0);
  try {
    decode_descriptor_file(bytes);
    FAIL() << "expected DegenerateDescriptor";
  } catch (const DegenerateDescriptor& e) {
    EXPECT_NE(std::string(e.what()).find("class 'a', image 1, index 0"), std::string::npos);
  }
}

TEST(DescriptorFile, BadPreamble) {
  const std::string header = R"({"d":1,"m":1,"classes":[{"label":"a","image_count":1}]})";
  auto bytes = handmade_file(header, 1);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_descriptor_file(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_descriptor_file(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(decode_descriptor_file(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 7)),
               FormatError);
  EXPECT_THROW(decode_descriptor_file(handmade_file("{not json", 0)), FormatError);
  EXPECT_THROW(decode_descriptor_file(handmade_file(header, 1, NAN)), FormatError);
}

TEST(Checkpoint, RoundTripIsExact) {
  TrainConfig cfg;
  cfg.lambda = 13.25;
  cfg.k_fraction = 0.05;
  cfg.score_form = ScoreForm::literal;
  cfg.mode = SupportMode::class_mean;
  cfg.seed = 987654321012345ULL;
  Rng rng(4);
  auto mlp = ThresholdMlp::initialized(6, 5, rng);
  mlp.b2() = -1.0 / 3.0;
  const auto ck = Checkpoint::from_run(cfg, mlp);
  const auto text = checkpoint_to_json(ck);
  const auto back = checkpoint_from_json(text);
  EXPECT_EQ(back.mlp, mlp);
  EXPECT_EQ(back.lambda, 13.25);
  EXPECT_EQ(back.k_fraction, 0.05);
  EXPECT_EQ(back.score_form, ScoreForm::literal);
  EXPECT_EQ(back.mode, SupportMode::class_mean);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(checkpoint_to_json(back), text);

  TrainConfig applied;
  back.apply_to(applied);
  EXPECT_EQ(applied.hidden_dim, 5u);
  EXPECT_EQ(applied.score_form, ScoreForm::literal);

  const auto path = temp_path("ckpt.json");
  save_checkpoint(path, ck);
  EXPECT_EQ(load_checkpoint(path).mlp, mlp);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMalformed) {
  const auto good = checkpoint_to_json(Checkpoint::from_run({}, ThresholdMlp(2, 2)));
  EXPECT_NO_THROW(checkpoint_from_json(good));
  EXPECT_THROW(checkpoint_from_json("{}"), InvalidInput);
  auto bad_version = good;
  bad_version.replace(bad_version.find("\"format_version\": 1"), 19, "\"format_version\": 2");
  EXPECT_THROW(checkpoint_from_json(bad_version), InvalidInput);
  auto bad_form = good;
  bad_form.replace(bad_form.find("weighted-sim"), 12, "summed");
  EXPECT_THROW(checkpoint_from_json(bad_form), InvalidConfig);
}

TEST(Checkpoint, SameSeedTrainingGivesIdenticalFiles) {
  SyntheticSpec spec = tiny_spec(8);
  spec.classes = 6;
  spec.images_per_class = 6;
  const auto pool = generate_synthetic_pool(spec).pool;
  TrainConfig cfg;
  cfg.shot = 2;
  cfg.queries = 2;
  cfg.epochs = 2;
  cfg.episodes_per_epoch = 3;
  cfg.seed = 5;
  const auto a = checkpoint_to_json(Checkpoint::from_run(cfg, meta_train(pool, cfg).mlp));
  const auto b = checkpoint_to_json(Checkpoint::from_run(cfg, meta_train(pool, cfg).mlp));
  EXPECT_EQ(a, b);
}

TEST(Synthetic, PureFunctionOfSpec) {
  const auto a = generate_synthetic_pool(tiny_spec(11));
  const auto b = generate_synthetic_pool(tiny_spec(11));
  const auto c = generate_synthetic_pool(tiny_spec(12));
  EXPECT_EQ(encode_descriptor_file(a.pool), encode_descriptor_file(b.pool));
  EXPECT_NE(encode_descriptor_file(a.pool), encode_descriptor_file(c.pool));
  EXPECT_EQ(a.background, b.background);
}

TEST(Synthetic, NoiselessDescriptorsAreCenters) {
  SyntheticSpec spec = tiny_spec();
  spec.noise = 0.0;
  spec.background_ratio = 0.5;
  const auto s = generate_synthetic_pool(spec);
  EXPECT_EQ(std::count(s.background.begin(), s.background.end(), true), 2);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const auto& set = s.pool[c].images;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto& center = s.background[i % spec.m] ? s.background_center : s.class_centers[c];
      for (std::size_t t = 0; t < spec.d; ++t) {
        EXPECT_EQ(set[i][t], static_cast<double>(static_cast<float>(center[t])));
      }
    }
  }
}

TEST(Synthetic, CentersAreOrthonormalWhenRoomAllows) {
  SyntheticSpec spec = tiny_spec();
  spec.d = 8;
  const auto s = generate_synthetic_pool(spec);
  auto all = s.class_centers;
  all.push_back(s.background_center);
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = 0; b < all.size(); ++b) {
      EXPECT_NEAR(dot(all[a], all[b]), a == b ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Synthetic, RejectsBadSpec) {
  auto s = tiny_spec();
  s.background_ratio = 1.0;
  EXPECT_THROW(generate_synthetic_pool(s), InvalidConfig);
  s = tiny_spec();
  s.d = 0;
  EXPECT_THROW(generate_synthetic_pool(s), InvalidConfig);
  s = tiny_spec();
  s.noise = -0.1;
  EXPECT_THROW(generate_synthetic_pool(s), InvalidConfig);
}

TEST(Synthetic, NoiselessPoolIsPerfectlyClassified) {
  SyntheticSpec spec;
  spec.classes = 8;
  spec.images_per_class = 10;
  spec.d = 16;
  spec.m = 9;
  spec.background_ratio = 0.0;
  spec.noise = 0.0;
  const auto pool = generate_synthetic_pool(spec).pool;
  TrainConfig cfg;
  cfg.queries = 3;
  EXPECT_EQ(evaluate_once(pool, initial_mlp(cfg, 16), cfg, 10, 1), 1.0);
}

TEST(Oracle, SuitePasses) {
  const auto r = run_oracle_suite(1, 100);
  EXPECT_TRUE(r.passed()) << r.to_text();
  EXPECT_LT(r.seconds, 10.0);
  EXPECT_EQ(r.quantities.size(), 14u);
}

TEST(Oracle, PerturbedScoreIsNamed) {
  const auto r = run_oracle_suite(1, 20, [](std::vector<ClassScores>& scores) {
    scores[0].cds[0] += 1e-6;
  });
  EXPECT_FALSE(r.passed());
  const auto failing = r.failing();
  EXPECT_NE(std::find(failing.begin(), failing.end(), "contrastive_score"), failing.end());
  EXPECT_NE(r.to_text().find("contrastive_score\t"), std::string::npos);
}

TEST(Gradcheck, ReportFormat) {
  const auto r = run_gradcheck(3, 2);
  EXPECT_TRUE(r.passed()) << r.to_text();
  EXPECT_NE(r.to_text().find("result=PASS"), std::string::npos);
  EXPECT_NEAR(relative_error(1.0, 1.0 + 1e-6, 1e-5), 1e-6 / (1.0 + 1e-6), 1e-15);
  EXPECT_NEAR(relative_error(0.0, 1e-10, 1e-5), 1e-5, 1e-15);
}
