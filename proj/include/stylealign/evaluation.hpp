#pragma once

// Face-alignment metrics (NME, failure rate, CED, AUC), evaluation reports
// with per-attribute breakdowns, and the k / loss-variant experiment harnesses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylealign/detector.hpp"
#include "stylealign/translation.hpp"

namespace stylealign {

enum class NormalizationKind { InterOcular, InterPupil, CustomPair };

NLOHMANN_JSON_SERIALIZE_ENUM(NormalizationKind, {{NormalizationKind::InterOcular, "inter_ocular"},
                                                 {NormalizationKind::InterPupil, "inter_pupil"},
                                                 {NormalizationKind::CustomPair, "custom_pair"}})

/// The normalizing distance is between the centroids of two landmark groups.
/// Single-landmark groups give a plain point-to-point distance.
struct NormalizationRule {
  NormalizationKind kind = NormalizationKind::InterOcular;
  std::vector<int> first, second;

  static NormalizationRule custom_pair(int a, int b) { return {NormalizationKind::CustomPair, {a}, {b}}; }

  static NormalizationRule inter_ocular(const Scheme& s) {
    switch (s.kind) {
      case SchemeKind::P68: return {NormalizationKind::InterOcular, {36}, {45}};
      case SchemeKind::P98: return {NormalizationKind::InterOcular, {60}, {72}};
      case SchemeKind::Synth:
        if (s.count == 10) return {NormalizationKind::InterOcular, {2}, {5}};
        break;
      default: break;
    }
    throw ConfigError("no inter-ocular convention for scheme " + s.name());
  }

  static NormalizationRule inter_pupil(const Scheme& s) {
    switch (s.kind) {
      case SchemeKind::P68: return {NormalizationKind::InterPupil, {36, 37, 38, 39, 40, 41}, {42, 43, 44, 45, 46, 47}};
      case SchemeKind::P98:
        return {NormalizationKind::InterPupil, {60, 61, 62, 63, 64, 65, 66, 67}, {68, 69, 70, 71, 72, 73, 74, 75}};
      case SchemeKind::Synth:
        if (s.count == 10) return {NormalizationKind::InterPupil, {0}, {1}};
        break;
      default: break;
    }
    throw ConfigError("no inter-pupil convention for scheme " + s.name());
  }

  static NormalizationRule for_kind(NormalizationKind k, const Scheme& s) {
    if (k == NormalizationKind::InterPupil) return inter_pupil(s);
    if (k == NormalizationKind::InterOcular) return inter_ocular(s);
    throw ConfigError("custom_pair normalization needs explicit indices");
  }

  void validate(const Scheme& s) const {
    if (first.empty() || second.empty()) throw ConfigError("normalization groups must be non-empty");
    for (const auto* g : {&first, &second})
      for (int i : *g)
        if (i < 0 || i >= s.count)
          throw ConfigError("normalization landmark " + std::to_string(i) + " is out of range for " + s.name());
  }

  double normalizer(const LandmarkSet& gt) const {
    validate(gt.scheme());
    auto centroid = [&](const std::vector<int>& g) {
      Point c{0, 0};
      for (int i : g) c.x += gt[i].x, c.y += gt[i].y;
      return Point{c.x / g.size(), c.y / g.size()};
    };
    const Point a = centroid(first), b = centroid(second);
    return std::hypot(a.x - b.x, a.y - b.y);
  }
};

inline const char* normalization_name(NormalizationKind k) {
  switch (k) {
    case NormalizationKind::InterOcular: return "inter_ocular";
    case NormalizationKind::InterPupil: return "inter_pupil";
    default: return "custom_pair";
  }
}

/// NME of one face, or nullopt when the normalizer is zero.
inline std::optional<double> try_nme(const LandmarkSet& pred, const LandmarkSet& gt, const NormalizationRule& rule) {
  if (!(pred.scheme() == gt.scheme()))
    throw InvalidInput("prediction scheme " + pred.scheme().name() + " does not match ground truth " +
                       gt.scheme().name());
  const double d = rule.normalizer(gt);
  if (!(d > 0.0)) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) sum += std::hypot(pred[i].x - gt[i].x, pred[i].y - gt[i].y);
  return sum / static_cast<double>(gt.size()) / d;
}

inline double nme(const LandmarkSet& pred, const LandmarkSet& gt, const NormalizationRule& rule) {
  const auto v = try_nme(pred, gt, rule);
  if (!v) throw InvalidInput("normalizing distance is zero");
  return *v;
}

inline constexpr double kFailureThreshold = 0.1;
inline constexpr double kAucLimit = 0.1;
inline constexpr int kCurveResolution = 1000;

/// Fraction of errors strictly above `threshold`.
inline double failure_rate(const std::vector<double>& nmes, double threshold = kFailureThreshold) {
  if (nmes.empty()) throw InvalidInput("failure_rate of an empty list");
  if (!(threshold > 0)) throw InvalidInput("failure threshold must be positive");
  std::size_t n = 0;
  for (double e : nmes) n += e > threshold;
  return static_cast<double>(n) / static_cast<double>(nmes.size());
}

/// `resolution` evenly spaced thresholds from 0 to `limit` inclusive.
inline std::vector<double> ced_grid(double limit = kAucLimit, int resolution = kCurveResolution) {
  if (!(limit > 0)) throw InvalidInput("curve limit must be positive");
  if (resolution < 2) throw InvalidInput("curve resolution must be at least 2");
  std::vector<double> g(resolution);
  for (int i = 0; i < resolution; ++i) g[i] = limit * i / (resolution - 1);
  return g;
}

/// Fraction of errors <= each threshold. The grid must be non-negative and
/// strictly increasing.
inline std::vector<double> ced(const std::vector<double>& nmes, const std::vector<double>& grid) {
  if (nmes.empty() || grid.empty()) throw InvalidInput("ced of an empty list");
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i] < 0 || (i > 0 && !(grid[i] > grid[i - 1])))
      throw InvalidInput("ced grid must be non-negative and strictly increasing");
  std::vector<double> sorted = nmes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), grid[i]) - sorted.begin();
    out[i] = static_cast<double>(n) / static_cast<double>(sorted.size());
  }
  return out;
}

/// Trapezoidal area under the CED on [0, limit], divided by `limit`.
inline double auc(const std::vector<double>& nmes, double limit = kAucLimit, int resolution = kCurveResolution) {
  const auto grid = ced_grid(limit, resolution);
  const auto curve = ced(nmes, grid);
  double area = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) area += 0.5 * (curve[i] + curve[i - 1]) * (grid[i] - grid[i - 1]);
  return std::clamp(area / limit, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricSummary {
  std::size_t n = 0;
  double nme_mean = 0, failure_rate = 0, auc = 0;
  std::vector<double> ced;  // on EvalReport::grid
};

struct EvalReport {
  std::string normalization;
  std::vector<double> grid;
  MetricSummary overall;
  std::map<std::string, MetricSummary> per_subset;  // keyed by attribute name
  std::size_t n_evaluated = 0;
  std::size_t n_skipped = 0;
  std::vector<std::pair<std::string, double>> per_sample;  // (id, nme) in dataset order
};

/// Mean of a sorted copy, so the result does not depend on input order.
inline double order_free_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline MetricSummary summarize(const std::vector<double>& nmes, const std::vector<double>& grid) {
  MetricSummary m;
  m.n = nmes.size();
  if (nmes.empty()) return m;
  m.nme_mean = order_free_mean(nmes);
  m.failure_rate = failure_rate(nmes);
  m.auc = auc(nmes);
  m.ced = ced(nmes, grid);
  return m;
}

/// Scores predictions against a dataset. `predictions[i]` belongs to dataset[i].
inline EvalReport evaluate_predictions(const Dataset& dataset, const std::vector<LandmarkSet>& predictions,
                                       const NormalizationRule& rule) {
  if (predictions.size() != dataset.size())
    throw InvalidInput("got " + std::to_string(predictions.size()) + " predictions for " +
                       std::to_string(dataset.size()) + " samples");
  rule.validate(dataset.scheme());
  EvalReport r;
  r.normalization = normalization_name(rule.kind);
  r.grid = ced_grid();
  std::vector<double> all;
  std::map<std::string, std::vector<double>> subsets;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto e = try_nme(predictions[i], dataset[i].landmarks, rule);
    if (!e) {
      ++r.n_skipped;
      continue;
    }
    all.push_back(*e);
    r.per_sample.emplace_back(dataset[i].id, *e);
    if (dataset[i].attributes)
      for (Attribute a : kAllAttributes)
        if (has(*dataset[i].attributes, a)) subsets[attribute_name(a)].push_back(*e);
  }
  r.n_evaluated = all.size();
  if (all.empty()) throw InvalidInput("no sample in the evaluation set has a usable normalizer");
  r.overall = summarize(all, r.grid);
  for (const auto& [name, v] : subsets) r.per_subset[name] = summarize(v, r.grid);
  return r;
}

inline EvalReport evaluate(const std::function<LandmarkSet(const Sample&)>& predictor, const Dataset& dataset,
                           const NormalizationRule& rule) {
  std::vector<LandmarkSet> preds;
  preds.reserve(dataset.size());
  for (const auto& s : dataset) preds.push_back(predictor(s));
  return evaluate_predictions(dataset, preds, rule);
}

template <typename T>
EvalReport evaluate(const DetectorModel<T>& model, const Dataset& dataset, const NormalizationRule& rule) {
  return evaluate([&](const Sample& s) { return predict(model, s); }, dataset, rule);
}

/// One JSON object per line: a summary record, one per attribute subset, one
/// per evaluated sample.
inline std::string report_jsonl(const EvalReport& r) {
  auto metrics = [](const MetricSummary& m) {
    return nlohmann::json{{"n", m.n}, {"nme", m.nme_mean}, {"failure_rate", m.failure_rate}, {"auc", m.auc}};
  };
  std::string out;
  auto summary = metrics(r.overall);
  summary["record"] = "summary";
  summary["normalization"] = r.normalization;
  summary["n_evaluated"] = r.n_evaluated;
  summary["n_skipped"] = r.n_skipped;
  summary["failure_threshold"] = kFailureThreshold;
  summary["auc_limit"] = kAucLimit;
  out += summary.dump() + "\n";
  for (const auto& [name, m] : r.per_subset) {
    auto j = metrics(m);
    j["record"] = "subset";
    j["attribute"] = name;
    out += j.dump() + "\n";
  }
  for (const auto& [id, e] : r.per_sample) out += nlohmann::json{{"record", "sample"}, {"id", id}, {"nme", e}}.dump() + "\n";
  return out;
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "normalization: " << r.normalization << "  evaluated: " << r.n_evaluated << "  skipped: " << r.n_skipped
     << "\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s %6s %8s %8s %8s\n", "subset", "n", "NME(%)", "FR(%)", "AUC@0.1");
  os << line;
  auto row = [&](const std::string& name, const MetricSummary& m) {
    std::snprintf(line, sizeof(line), "%-14s %6zu %8s %8s %8.4f\n", name.c_str(), m.n, percent(m.nme_mean).c_str(),
                  percent(m.failure_rate).c_str(), m.auc);
    os << line;
  };
  row("all", r.overall);
  for (Attribute a : kAllAttributes) {
    auto it = r.per_subset.find(attribute_name(a));
    if (it != r.per_subset.end()) row(it->first, it->second);
  }
  return os.str();
}

/// Two columns: threshold, fraction of faces at or below it.
inline std::string ced_csv(const std::vector<double>& grid, const std::vector<double>& curve) {
  std::string out = "threshold,fraction\n";
  for (std::size_t i = 0; i < grid.size(); ++i) out += format_number(grid[i], 1) + "," + format_number(curve[i], 1) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Experiment harnesses

struct ExperimentConfig {
  DetectorConfig detector;
  AugmentConfig augment;
  NormalizationKind normalization = NormalizationKind::InterOcular;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct AblationRow {
  std::string variant;  // "k=4", "full", "no_kl", ...
  int k = 0;
  std::uint64_t seed = 0;
  double nme = 0, failure_rate = 0, auc = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median NME over seeds for rows whose variant is `variant`.
inline double median_nme(const std::vector<AblationRow>& rows, const std::string& variant) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.variant == variant) v.push_back(r.nme);
  return median(v);
}

/// Stage 2 for one seed: augment `train` with k styles from `model` (none when
/// model is null or k = 0), train a fresh detector on the union, evaluate.
template <typename T>
AblationRow stage2_row(const Dataset& train, const Dataset& test, const Disentangler<T>* model, int k,
                       const ExperimentConfig& cfg, std::uint64_t seed, const std::string& variant) {
  Dataset synthetic(train.scheme());
  if (model && k > 0) {
    AugmentConfig a = cfg.augment;
    a.k = k;
    a.seed = seed;
    synthetic = augment_dataset(*model, train, a);
  }
  const auto det = train_detector<float>(train, synthetic, cfg.detector, seed);
  const auto rep = evaluate(det.model, test, NormalizationRule::for_kind(cfg.normalization, test.scheme()));
  return {variant, model ? k : 0, seed, rep.overall.nme_mean, rep.overall.failure_rate, rep.overall.auc};
}

/// Detector NME for each k with one disentangler per seed, supplied by
/// `model_for_seed`.
template <typename T>
std::vector<AblationRow> run_k_ablation(const Dataset& train, const Dataset& test,
                                        const std::function<const Disentangler<T>&(std::uint64_t)>& model_for_seed,
                                        const std::vector<int>& ks, const ExperimentConfig& cfg) {
  for (int k : ks)
    if (k < 0 || (k > 0 && static_cast<std::size_t>(k) + 1 > train.size()))
      throw ConfigError("k = " + std::to_string(k) + " is not valid for " + std::to_string(train.size()) +
                        " training samples");
  std::vector<AblationRow> rows;
  for (int k : ks)
    for (std::uint64_t seed : cfg.seeds) {
      const Disentangler<T>* m = k > 0 ? &model_for_seed(seed) : nullptr;
      auto row = stage2_row(train, test, m, k, cfg, seed, "k=" + std::to_string(k));
      row.k = k;
      rows.push_back(row);
    }
  return rows;
}

inline const std::vector<std::string>& loss_variants() {
  static const std::vector<std::string> v = {"baseline", "no_kl", "no_perceptual", "full"};
  return v;
}

/// Disentangler settings for a loss variant: no_kl drops the KL weight,
/// no_perceptual reconstructs with mean pixel L2.
inline DisentanglerConfig variant_config(DisentanglerConfig c, const std::string& variant) {
  if (variant == "no_kl") c.beta = 0.0;
  else if (variant == "no_perceptual") c.reconstruction = ReconstructionKind::Pixel;
  else if (variant != "full") throw ConfigError("unknown loss variant '" + variant + "'");
  return c;
}

/// Loss-variant table. `model_for` returns the trained disentangler for a
/// (variant, seed); "baseline" rows use no augmentation.
template <typename T>
std::vector<AblationRow> run_loss_ablation(
    const Dataset& train, const Dataset& test, const std::vector<std::string>& variants,
    const std::function<const Disentangler<T>&(const std::string&, std::uint64_t)>& model_for,
    const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    if (std::find(loss_variants().begin(), loss_variants().end(), v) == loss_variants().end())
      throw ConfigError("unknown loss variant '" + v + "'");
    for (std::uint64_t seed : cfg.seeds) {
      const Disentangler<T>* m = v == "baseline" ? nullptr : &model_for(v, seed);
      auto row = stage2_row(train, test, m, cfg.augment.k, cfg, seed, v);
      rows.push_back(row);
    }
  }
  return rows;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"variant", r.variant}, {"k", r.k}, {"seed", r.seed}, {"nme", r.nme},
                 {"failure_rate", r.failure_rate}, {"auc", r.auc}});
  return j;
}

/// One row per variant: median NME / FR / AUC across seeds, in first-seen order.
inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %6s %12s %10s %10s\n", "variant", "seeds", "NME(%) med", "FR(%) med",
                "AUC med");
  os << line;
  for (const auto& v : order) {
    std::vector<double> e, f, a;
    for (const auto& r : rows)
      if (r.variant == v) e.push_back(r.nme), f.push_back(r.failure_rate), a.push_back(r.auc);
    std::snprintf(line, sizeof(line), "%-16s %6zu %12s %10s %10.4f\n", v.c_str(), e.size(), percent(median(e)).c_str(),
                  percent(median(f)).c_str(), median(a));
    os << line;
  }
  return os.str();
}

}  // namespace stylealign
