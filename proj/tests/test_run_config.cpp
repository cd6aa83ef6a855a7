#include "thermosynth/run_config.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace thermosynth;
using nlohmann::json;

TEST(RunConfig, EmptyDocumentGivesDefaults) {
  const RunConfig c = RunConfig::from_json(json::object());
  EXPECT_FALSE(c.seed.has_value());
  EXPECT_EQ(c.gan, TrainConfig::defaults(Phase::gan));
  EXPECT_EQ(c.inversion, TrainConfig::defaults(Phase::inversion));
  EXPECT_EQ(c.eval, EvalConfig{});
  EXPECT_EQ(c.grid, GridConfig{});
  EXPECT_EQ(c.privacy.detector, "blob");
}

TEST(RunConfig, SectionPhaseIsImplied) {
  const RunConfig c = RunConfig::from_json({{"gan", {{"steps", 3}}}, {"inversion", {{"steps", 5}}}});
  EXPECT_EQ(c.gan.phase, Phase::gan);
  EXPECT_EQ(c.gan.steps, 3);
  EXPECT_EQ(c.inversion.phase, Phase::inversion);
  EXPECT_EQ(c.inversion.steps, 5);
  // Unset keys keep the phase defaults.
  EXPECT_EQ(c.inversion.epochs, TrainConfig::defaults(Phase::inversion).epochs);
}

TEST(RunConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(RunConfig::from_json({{"gann", json::object()}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"stepz", 1}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"eval", {{"draw", 1}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"privacy", {{"scenes", {{"cnt", 1}}}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"phase", "inversion"}}}}), ConfigError);
}

TEST(RunConfig, BadValuesAreConfigErrors) {
  EXPECT_THROW(RunConfig::from_json({{"gan", {{"steps", "many"}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"eval", {{"draws", 0}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"privacy", {{"resolutions", {"160by120"}}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"bench", {{"batch_sizes", json::array()}}}}), ConfigError);
}

TEST(RunConfig, GlobalSeedReachesEverySection) {
  const RunConfig c = RunConfig::from_json({{"seed", 42}, {"gan", {{"seed", 3}}}});
  EXPECT_EQ(c.synthetic.seed, 42u);
  EXPECT_EQ(c.gan.seed, 42u);
  EXPECT_EQ(c.inversion.seed, 42u);
  EXPECT_EQ(c.eval.seed, 42u);
  EXPECT_EQ(c.grid.seed, 42u);
  EXPECT_EQ(c.privacy.scenes.seed, 42u);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = RunConfig::from_json({{"seed", 9}, {"gan", {{"steps", 12}, {"lr_g", 1e-4}}}, {"eval", {{"draws", 2}}}});
  const RunConfig back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.gan, c.gan);
  EXPECT_EQ(back.eval, c.eval);
}

TEST(Override, ParsesJsonValuesAndFallsBackToStrings) {
  json doc = json::object();
  apply_override(doc, "gan.steps=12");
  apply_override(doc, "gan.lr_g=0.001");
  apply_override(doc, "gan.train_discriminator=false");
  apply_override(doc, "model.encoder_channels=[1,2,3,4]");
  apply_override(doc, "privacy.detector=python3 det.py");
  EXPECT_EQ(doc["gan"]["steps"], 12);
  EXPECT_DOUBLE_EQ(doc["gan"]["lr_g"].get<double>(), 0.001);
  EXPECT_EQ(doc["gan"]["train_discriminator"], false);
  EXPECT_EQ(doc["model"]["encoder_channels"], json({1, 2, 3, 4}));
  EXPECT_EQ(doc["privacy"]["detector"], "python3 det.py");
}

TEST(Override, MalformedAssignments) {
  json doc = {{"gan", 3}};
  EXPECT_THROW(apply_override(doc, "gan.steps"), ConfigError);
  EXPECT_THROW(apply_override(doc, "=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "gan.steps=3"), ConfigError);
}

TEST(Resolve, FileThenOverridesThenSeed) {
  testutil::TempDir dir("runcfg");
  const auto file = dir / "c.json";
  std::ofstream(file) << R"({"gan": {"steps": 7, "batch": 4}, "seed": 1})";
  const RunConfig c = resolve_config(file, {"gan.steps=9"}, 5);
  EXPECT_EQ(c.gan.steps, 9);
  EXPECT_EQ(c.gan.batch, 4);
  EXPECT_EQ(c.gan.seed, 5u);
  EXPECT_EQ(c.seed, std::optional<std::uint64_t>(5));
}

TEST(Resolve, RunManifestReloadsToTheSameConfig) {
  testutil::TempDir dir("runcfg");
  const RunConfig first = resolve_config(std::nullopt, {"gan.steps=3", "eval.draws=2"}, 11);
  const auto manifest = dir / "x.run.json";
  std::ofstream(manifest) << json{{"subcommand", "train-gan"}, {"resolved_config", first.to_json()}}.dump();
  const RunConfig again = resolve_config(manifest, {}, std::nullopt);
  EXPECT_EQ(again.to_json(), first.to_json());
}

TEST(Resolve, MissingOrBrokenFiles) {
  testutil::TempDir dir("runcfg");
  EXPECT_THROW(resolve_config(dir / "absent.json", {}, std::nullopt), ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(resolve_config(dir / "bad.json", {}, std::nullopt), ConfigError);
  std::ofstream(dir / "list.json") << "[1, 2]";
  EXPECT_THROW(resolve_config(dir / "list.json", {}, std::nullopt), ConfigError);
}

TEST(Resolution, Parsing) {
  const Resolution r = parse_resolution("160x120");
  EXPECT_EQ(r.width, 160);
  EXPECT_EQ(r.height, 120);
  for (const char* bad : {"160", "x120", "160x", "0x5", "16x12x3", "16 x12", "-4x3"}) {
    EXPECT_THROW(parse_resolution(bad), ConfigError) << bad;
  }
}

TEST(ToyConfig, ShippedFileResolves) {
  const RunConfig c = resolve_config(std::filesystem::path(THERMOSYNTH_SOURCE_DIR) / "configs/toy.json", {}, std::nullopt);
  EXPECT_EQ(c.synthetic.count, 64);
  EXPECT_EQ(c.model.rgb_shape(), (Shape{1, 3, 48, 64}));
  EXPECT_LE(c.gan.steps, 2000);
  EXPECT_LE(c.inversion.steps, 500);
  EXPECT_EQ(c.gan.seed, 7u);
}
