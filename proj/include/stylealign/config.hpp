#pragma once

// Run configuration: one JSON document with a section per stage, dotted-path
// command-line overrides, and strict rejection of unknown keys.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylealign/evaluation.hpp"
#include "stylealign/hash.hpp"
#include "stylealign/json_util.hpp"

namespace stylealign {

struct DataConfig {
  /// Existing manifest to use instead of generated synthetic data. Image
  /// paths in it are relative to the manifest's directory.
  std::string manifest;
  int n = 300;
  int image_size = 64;
  int channels = 3;
  /// The first train_count records train; the rest are the test split.
  int train_count = 150;
};

struct EvalConfig {
  NormalizationKind normalization = NormalizationKind::InterOcular;
  std::vector<int> ks = {0, 4, 8};
  std::vector<std::string> variants = {"baseline", "no_kl", "no_perceptual", "full"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool deterministic = true;
  DataConfig data;
  DisentanglerConfig disentangler;
  AugmentConfig augment;
  DetectorConfig detector;
  EvalConfig eval;
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"deterministic", c.deterministic},
          {"data",
           {{"manifest", c.data.manifest},
            {"n", c.data.n},
            {"image_size", c.data.image_size},
            {"channels", c.data.channels},
            {"train_count", c.data.train_count}}},
          {"disentangler", to_json(c.disentangler)},
          {"augment", to_json(c.augment)},
          {"detector", to_json(c.detector)},
          {"eval",
           {{"normalization", c.eval.normalization},
            {"ks", c.eval.ks},
            {"variants", c.eval.variants},
            {"seeds", c.eval.seeds}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  StrictReader r(j, "");
  r.get("seed", c.seed);
  r.get("deterministic", c.deterministic);
  r.nested("data", [&](StrictReader& d) {
    d.get("manifest", c.data.manifest);
    d.get("n", c.data.n);
    d.get("image_size", c.data.image_size);
    d.get("channels", c.data.channels);
    d.get("train_count", c.data.train_count);
  });
  r.nested("disentangler", [&](StrictReader& d) { read_config(d, c.disentangler); });
  r.nested("augment", [&](StrictReader& a) { read_config(a, c.augment); });
  r.nested("detector", [&](StrictReader& d) { read_config(d, c.detector); });
  r.nested("eval", [&](StrictReader& e) {
    e.get("normalization", c.eval.normalization);
    e.get("ks", c.eval.ks);
    e.get("variants", c.eval.variants);
    e.get("seeds", c.eval.seeds);
  });
  r.finish();
  if (!c.deterministic) throw ConfigError("only deterministic mode is implemented (deterministic = true)");
  if (c.data.n <= 0 || c.data.image_size <= 0) throw ConfigError("data.n and data.image_size must be positive");
  if (c.data.train_count <= 0) throw ConfigError("data.train_count must be positive");
  if (c.eval.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  c.disentangler.validate();
  c.detector.validate();
  for (const auto& v : c.eval.variants)
    if (std::find(loss_variants().begin(), loss_variants().end(), v) == loss_variants().end())
      throw ConfigError("unknown loss variant '" + v + "' in eval.variants");
  return c;
}

/// Parses the right-hand side of --set: JSON when it parses, a plain string otherwise.
inline nlohmann::json override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

/// Applies "a.b.c=value" to a JSON document. Missing intermediate objects
/// are created; unknown leaf keys are caught later by the strict reader.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = override_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

/// Defaults, then the config file (if any), then overrides in order.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(RunConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    // Validate the file on its own first so its unknown keys are reported
    // against the file rather than the merged document.
    run_config_from_json(file);
    doc.merge_patch(file);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

inline std::string config_hash(const RunConfig& c) { return hash_string(to_json(c).dump()); }

}  // namespace stylealign
