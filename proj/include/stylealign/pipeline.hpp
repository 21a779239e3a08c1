#pragma once

// Pipeline stages behind the command-line subcommands. Every stage reads its
// inputs from a run directory, writes one output directory atomically and
// leaves a provenance record next to its outputs.
//
//   <run>/data/           synth           manifest.jsonl, factors.csv, images/
//   <run>/disentangler/   train-disentangler  checkpoint.bin, log.csv
//   <run>/augment/        augment         manifest.jsonl, images/
//   <run>/detector/       train-detector  checkpoint.bin, log.csv
//   <run>/eval/           evaluate        report.jsonl, report.txt, ced.csv
//   <run>/ablate_k/       ablate-k        rows.jsonl, table.jsonl, table.txt
//   <run>/ablate_loss/    ablate-loss     rows.jsonl, table.jsonl, table.txt
//   <run>/plots/          plot            ced.svg, ablate_k.svg, ablate_loss.svg

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <unistd.h>

#include "stylealign/config.hpp"
#include "stylealign/synth.hpp"

namespace stylealign {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("short write to " + p.string());
}

/// Output directory that only appears under its final name once complete.
class StageDir {
 public:
  StageDir(const fs::path& root, const std::string& name) : final_(root / name) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create output directory " + root.string() + ": " + ec.message());
    tmp_ = root / ("." + name + ".tmp-" + std::to_string(::getpid()));
    fs::remove_all(tmp_, ec);
    fs::create_directories(tmp_, ec);
    if (ec) throw IoError("cannot create " + tmp_.string() + ": " + ec.message());
  }
  ~StageDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  StageDir(const StageDir&) = delete;
  StageDir& operator=(const StageDir&) = delete;

  const fs::path& path() const { return tmp_; }
  fs::path operator/(const std::string& rel) const { return tmp_ / rel; }

  fs::path commit() {
    std::error_code ec;
    fs::remove_all(final_, ec);
    fs::rename(tmp_, final_, ec);
    if (ec) throw IoError("cannot move " + tmp_.string() + " to " + final_.string() + ": " + ec.message());
    committed_ = true;
    return final_;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

struct Provenance {
  std::string subcommand;
  const RunConfig* config = nullptr;
  std::map<std::string, std::string> inputs = {};  // path -> content hash
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const fs::path& p) { inputs[p.string()] = hash_file(p.string()); }

  void write(const fs::path& dir) const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["config_hash"] = config_hash(*config);
    j["config"] = to_json(*config);
    j["seed"] = config->seed;
    j["inputs"] = inputs;
    j["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text(dir / "provenance.json", j.dump(2) + "\n");
  }
};

inline fs::path require_artifact(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifact("missing " + p.string() + "; run `stylealign " + producer + "` with the same --out first");
  return p;
}

/// The dataset this run works on, images loaded, split into train / test.
struct SplitData {
  Dataset train, test;
  fs::path manifest;
};

inline SplitData load_split(const RunConfig& cfg, const fs::path& run) {
  const fs::path manifest =
      cfg.data.manifest.empty() ? require_artifact(run / "data" / "manifest.jsonl", "synth") : fs::path(cfg.data.manifest);
  if (!fs::exists(manifest)) throw MissingArtifact("data.manifest " + manifest.string() + " does not exist");
  Dataset all = load_manifest(manifest);
  load_images(all, manifest.parent_path());
  const std::size_t n_train = std::min<std::size_t>(cfg.data.train_count, all.size());
  return {all.slice(0, n_train), all.slice(n_train, all.size() - n_train), manifest};
}

/// Copies data-dependent sizes into the stage configs.
inline DisentanglerConfig disentangler_config_for(const RunConfig& cfg, const Dataset& ds) {
  DisentanglerConfig c = cfg.disentangler;
  c.landmarks = ds.scheme().count;
  if (!ds.empty()) c.image_channels = channels(ds[0].image);
  return c;
}

inline DetectorConfig detector_config_for(const RunConfig& cfg, const Dataset& ds) {
  DetectorConfig c = cfg.detector;
  c.landmarks = ds.scheme().count;
  if (!ds.empty()) c.image_channels = channels(ds[0].image);
  return c;
}

inline void write_images(const Dataset& ds, const fs::path& dir) {
  for (const auto& s : ds) {
    const fs::path p = dir / s.image_path;
    fs::create_directories(p.parent_path());
    write_pnm(p.string(), s.image);
  }
}

// ---------------------------------------------------------------------------

inline fs::path cmd_synth(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"synth", &cfg};
  const auto sd = generate_synth_dataset(cfg.data.n, cfg.data.image_size, cfg.seed, cfg.data.channels);
  StageDir out(run, "data");
  write_images(sd.dataset, out.path());
  save_manifest(sd.dataset, out / "manifest.jsonl");
  write_text(out / "factors.csv", factors_csv(sd.dataset, sd.factors));
  prov.write(out.path());
  return out.commit();
}

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string s = "epoch,lr,loss,reconstruction,kl\n";
  for (const auto& e : log)
    s += std::to_string(e.epoch) + "," + format_number(e.lr, 1) + "," + format_number(e.loss, 1) + "," +
         format_number(e.reconstruction, 1) + "," + format_number(e.kl, 1) + "\n";
  return s;
}

inline fs::path cmd_train_disentangler(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"train-disentangler", &cfg};
  const auto data = load_split(cfg, run);
  prov.input(data.manifest);
  const auto dcfg = disentangler_config_for(cfg, data.train);
  const auto st = train_disentangler<float>(data.train, dcfg, cfg.seed);
  StageDir out(run, "disentangler");
  disentangler_checkpoint(st, cfg.seed).save(out / "checkpoint.bin");
  write_text(out / "log.csv", epoch_log_csv(st.log));
  prov.write(out.path());
  return out.commit();
}

inline fs::path cmd_augment(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"augment", &cfg};
  const auto data = load_split(cfg, run);
  const fs::path ckpt = require_artifact(run / "disentangler" / "checkpoint.bin", "train-disentangler");
  prov.input(data.manifest);
  prov.input(ckpt);
  const auto container = Container::load(ckpt);
  const auto st = disentangler_from_checkpoint<float>(container);
  AugmentConfig a = cfg.augment;
  a.seed = cfg.seed;
  const auto synthetic = augment_dataset(st.model, data.train, a, container.content_hash());
  StageDir out(run, "augment");
  write_images(synthetic, out.path());
  save_manifest(synthetic, out / "manifest.jsonl");
  prov.write(out.path());
  return out.commit();
}

inline std::string detector_log_csv(const std::vector<DetectorEpochLog>& log) {
  std::string s = "epoch,lr,loss\n";
  for (const auto& e : log)
    s += std::to_string(e.epoch) + "," + format_number(e.lr, 1) + "," + format_number(e.loss, 1) + "\n";
  return s;
}

inline fs::path cmd_train_detector(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"train-detector", &cfg};
  const auto data = load_split(cfg, run);
  const fs::path aug_manifest = require_artifact(run / "augment" / "manifest.jsonl", "augment");
  prov.input(data.manifest);
  prov.input(aug_manifest);
  Dataset synthetic = load_manifest(aug_manifest);
  load_images(synthetic, aug_manifest.parent_path());
  const auto st = train_detector<float>(data.train, synthetic, detector_config_for(cfg, data.train), cfg.seed);
  StageDir out(run, "detector");
  detector_checkpoint(st, cfg.seed).save(out / "checkpoint.bin");
  write_text(out / "log.csv", detector_log_csv(st.log));
  prov.write(out.path());
  return out.commit();
}

inline fs::path cmd_evaluate(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"evaluate", &cfg};
  const auto data = load_split(cfg, run);
  const fs::path ckpt = require_artifact(run / "detector" / "checkpoint.bin", "train-detector");
  prov.input(data.manifest);
  prov.input(ckpt);
  if (data.test.empty()) throw InvalidInput("the test split is empty (data.train_count covers every record)");
  const auto st = detector_from_checkpoint<float>(Container::load(ckpt));
  const auto report = evaluate(st.model, data.test, NormalizationRule::for_kind(cfg.eval.normalization, data.test.scheme()));
  StageDir out(run, "eval");
  write_text(out / "report.jsonl", report_jsonl(report));
  write_text(out / "report.txt", report_table(report));
  write_text(out / "ced.csv", ced_csv(report.grid, report.overall.ced));
  prov.write(out.path());
  return out.commit();
}

inline ExperimentConfig experiment_config_for(const RunConfig& cfg, const Dataset& train) {
  ExperimentConfig e;
  e.detector = detector_config_for(cfg, train);
  e.augment = cfg.augment;
  e.normalization = cfg.eval.normalization;
  e.seeds = cfg.eval.seeds;
  return e;
}

/// Per-variant medians, one JSON object per line, in first-seen order.
inline std::string ablation_summary_jsonl(const std::vector<AblationRow>& rows) {
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  std::string out;
  for (const auto& v : order) {
    std::vector<double> e, f, a;
    int k = 0;
    for (const auto& r : rows)
      if (r.variant == v) e.push_back(r.nme), f.push_back(r.failure_rate), a.push_back(r.auc), k = r.k;
    out += nlohmann::json{{"variant", v}, {"k", k}, {"seeds", e.size()}, {"nme", median(e)},
                          {"failure_rate", median(f)}, {"auc", median(a)}}
               .dump() +
           "\n";
  }
  return out;
}

inline std::string rows_jsonl(const std::vector<AblationRow>& rows) {
  std::string out;
  for (const auto& r : ablation_json(rows)) out += r.dump() + "\n";
  return out;
}

inline fs::path cmd_ablate_k(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"ablate-k", &cfg};
  const auto data = load_split(cfg, run);
  prov.input(data.manifest);
  if (data.test.empty()) throw InvalidInput("the test split is empty (data.train_count covers every record)");
  const auto dcfg = disentangler_config_for(cfg, data.train);
  std::map<std::uint64_t, std::unique_ptr<DisentanglerState<float>>> models;
  auto model_for = [&](std::uint64_t seed) -> const Disentangler<float>& {
    auto& m = models[seed];
    if (!m) m = std::make_unique<DisentanglerState<float>>(train_disentangler<float>(data.train, dcfg, seed));
    return m->model;
  };
  const auto rows = run_k_ablation<float>(data.train, data.test, model_for, cfg.eval.ks,
                                          experiment_config_for(cfg, data.train));
  StageDir out(run, "ablate_k");
  write_text(out / "rows.jsonl", rows_jsonl(rows));
  write_text(out / "table.jsonl", ablation_summary_jsonl(rows));
  write_text(out / "table.txt", ablation_table(rows));
  prov.write(out.path());
  return out.commit();
}

inline fs::path cmd_ablate_loss(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"ablate-loss", &cfg};
  const auto data = load_split(cfg, run);
  prov.input(data.manifest);
  if (data.test.empty()) throw InvalidInput("the test split is empty (data.train_count covers every record)");
  const auto dcfg = disentangler_config_for(cfg, data.train);
  std::map<std::pair<std::string, std::uint64_t>, std::unique_ptr<DisentanglerState<float>>> models;
  auto model_for = [&](const std::string& variant, std::uint64_t seed) -> const Disentangler<float>& {
    auto& m = models[{variant, seed}];
    if (!m)
      m = std::make_unique<DisentanglerState<float>>(
          train_disentangler<float>(data.train, variant_config(dcfg, variant), seed));
    return m->model;
  };
  const auto rows = run_loss_ablation<float>(data.train, data.test, cfg.eval.variants, model_for,
                                             experiment_config_for(cfg, data.train));
  StageDir out(run, "ablate_loss");
  write_text(out / "rows.jsonl", rows_jsonl(rows));
  write_text(out / "table.jsonl", ablation_summary_jsonl(rows));
  write_text(out / "table.txt", ablation_table(rows));
  prov.write(out.path());
  return out.commit();
}

// ---------------------------------------------------------------------------
// Plots (SVG)

inline std::vector<std::pair<double, double>> read_ced_csv(const fs::path& p) {
  const auto lines = detail::split_lines(read_text(p));
  if (lines.empty() || detail::trim(lines[0]) != "threshold,fraction")
    throw ParseError("CED file " + p.string() + " lacks the threshold,fraction header", 1);
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double a = 0, b = 0;
    if (comma == std::string::npos || !parse_number(line.substr(0, comma), a) ||
        !parse_number(line.substr(comma + 1), b))
      throw ParseError("malformed CED row in " + p.string(), i + 1);
    out.emplace_back(a, b);
  }
  return out;
}

inline std::string svg_line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                  const std::vector<std::pair<double, double>>& pts, double xmax, double ymax) {
  const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  auto px = [&](double x) { return L + (W - L - R) * x / xmax; };
  auto py = [&](double y) { return H - B - (H - T - B) * y / ymax; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    os << "<text x=\"" << px(xmax * i / 4) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << format_number(xmax * i / 4, 0) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(ymax * i / 4) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
       << format_number(ymax * i / 4, 0) << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">" << xlabel
     << "</text>\n"
     << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
     << ")\" text-anchor=\"middle\" font-size=\"12\">" << ylabel << "</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (const auto& [x, y] : pts) os << px(x) << "," << py(y) << " ";
  os << "\"/>\n</svg>\n";
  return os.str();
}

inline std::string svg_bar_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  const double W = 480, H = 360, L = 60, R = 20, T = 40, B = 60;
  double ymax = 0;
  for (const auto& [_, v] : bars) ymax = std::max(ymax, v);
  ymax = ymax > 0 ? ymax * 1.15 : 1.0;
  const double slot = (W - L - R) / std::max<std::size_t>(bars.size(), 1);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = (H - T - B) * bars[i].second / ymax;
    const double x = L + slot * i + slot * 0.15;
    os << "<rect x=\"" << x << "\" y=\"" << H - B - h << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
       << "\" fill=\"#1f77b4\"/>\n"
       << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << H - B - h - 4
       << "\" text-anchor=\"middle\" font-size=\"11\">" << percent(bars[i].second) << "</text>\n"
       << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << bars[i].first << "</text>\n";
  }
  os << "<text x=\"16\" y=\"" << H / 2 << "\" transform=\"rotate(-90 16 " << H / 2
     << ")\" text-anchor=\"middle\" font-size=\"12\">median NME (%)</text>\n</svg>\n";
  return os.str();
}

inline std::vector<std::pair<std::string, double>> read_ablation_table(const fs::path& p) {
  std::vector<std::pair<std::string, double>> bars;
  std::size_t line_no = 0;
  for (const auto& line : detail::split_lines(read_text(p))) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      bars.emplace_back(j.at("variant").get<std::string>(), j.at("nme").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("malformed ablation row in " + p.string() + ": " + e.what(), line_no);
    }
  }
  return bars;
}

/// Plots whatever upstream tables exist; fails if there are none.
inline fs::path cmd_plot(const RunConfig& cfg, const fs::path& run) {
  Provenance prov{"plot", &cfg};
  const fs::path ced = run / "eval" / "ced.csv";
  const fs::path k_table = run / "ablate_k" / "table.jsonl";
  const fs::path loss_table = run / "ablate_loss" / "table.jsonl";
  if (!fs::exists(ced) && !fs::exists(k_table) && !fs::exists(loss_table))
    throw MissingArtifact("nothing to plot under " + run.string() +
                          "; run `stylealign evaluate`, `stylealign ablate-k` or `stylealign ablate-loss` first");
  StageDir out(run, "plots");
  if (fs::exists(ced)) {
    prov.input(ced);
    const auto pts = read_ced_csv(ced);
    const double xmax = pts.empty() ? kAucLimit : pts.back().first;
    write_text(out / "ced.svg", svg_line_chart("Cumulative error distribution", "NME", "fraction of faces", pts,
                                               xmax > 0 ? xmax : kAucLimit, 1.0));
  }
  if (fs::exists(k_table)) {
    prov.input(k_table);
    write_text(out / "ablate_k.svg", svg_bar_chart("Detector NME vs. styles per image", read_ablation_table(k_table)));
  }
  if (fs::exists(loss_table)) {
    prov.input(loss_table);
    write_text(out / "ablate_loss.svg", svg_bar_chart("Detector NME by loss variant", read_ablation_table(loss_table)));
  }
  prov.write(out.path());
  return out.commit();
}

}  // namespace stylealign
