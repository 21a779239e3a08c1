#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "stylealign/config.hpp"

using namespace stylealign;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = fs::temp_directory_path() / ("stylealign_test_" + std::to_string(::getpid()) + "_" + name);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const RunConfig c;
  const auto back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(c.augment.k, 8);
  EXPECT_EQ(c.disentangler.beta, 1.0);
}

TEST(Config, OverridesParseJsonOrString) {
  const auto c = load_run_config("", {"augment.k=4", "disentangler.beta=0.5", "eval.ks=[0,2]",
                                      "data.manifest=some/dir/manifest.jsonl", "seed=7"});
  EXPECT_EQ(c.augment.k, 4);
  EXPECT_EQ(c.disentangler.beta, 0.5);
  EXPECT_EQ(c.eval.ks, (std::vector<int>{0, 2}));
  EXPECT_EQ(c.data.manifest, "some/dir/manifest.jsonl");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_NE(config_hash(c), config_hash(RunConfig{}));
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(load_run_config("", {"augment.kk=4"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"nonsense=1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"noequals"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"augment..k=1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"seed.x=1"}), ConfigError);
  try {
    load_run_config("", {"detector.colour=1"});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("colour"), std::string::npos);
  }
}

TEST(Config, InvalidValuesAreRejected) {
  EXPECT_THROW(load_run_config("", {"augment.k=-1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"deterministic=false"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"eval.variants=[\"mystery\"]"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"augment.k=\"four\""}), ConfigError);
  EXPECT_THROW(load_run_config("", {"disentangler.beta=-1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"augment.donor_sampling=\"with_replacement\""}), ConfigError);
}

TEST(Config, FileThenOverridePrecedence) {
  const auto path = write_temp("cfg.json", R"({"augment": {"k": 2}, "detector": {"epochs": 3}})");
  const auto c = load_run_config(path, {"augment.k=5"});
  EXPECT_EQ(c.augment.k, 5);
  EXPECT_EQ(c.detector.epochs, 3);
  EXPECT_EQ(c.detector.batch_size, DetectorConfig{}.batch_size);
  fs::remove(path);
}

TEST(Config, BadFilesAreRejected) {
  EXPECT_THROW(load_run_config("/nonexistent/cfg.json", {}), ConfigError);
  const auto bad = write_temp("bad.json", "{not json");
  EXPECT_THROW(load_run_config(bad, {}), ConfigError);
  const auto unknown = write_temp("unknown.json", R"({"augment": {"styles": 2}})");
  EXPECT_THROW(load_run_config(unknown, {}), ConfigError);
  fs::remove(bad);
  fs::remove(unknown);
}
