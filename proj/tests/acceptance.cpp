// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--group fast|trends|all] [--criterion NAME]
//
// The trend criteria train on the 300-face synthetic benchmark with the
// settings in configs/desk.json and take tens of minutes on one core.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "grad_check.hpp"
#include "stylealign/config.hpp"
#include "stylealign/pipeline.hpp"
#include "stylealign/probe.hpp"

using namespace stylealign;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Metric oracles

double brute_nme(const LandmarkSet& p, const LandmarkSet& g, int a, int b) {
  double s = 0;
  for (std::size_t i = 0; i < g.size(); ++i) s += std::hypot(p[i].x - g[i].x, p[i].y - g[i].y);
  return s / static_cast<double>(g.size()) / std::hypot(g[a].x - g[b].x, g[a].y - g[b].y);
}

double brute_fr(const std::vector<double>& e, double t) {
  int n = 0;
  for (double v : e)
    if (v > t) ++n;
  return static_cast<double>(n) / static_cast<double>(e.size());
}

std::vector<double> brute_ced(const std::vector<double>& e, const std::vector<double>& grid) {
  std::vector<double> out;
  for (double t : grid) {
    int n = 0;
    for (double v : e)
      if (v <= t) ++n;
    out.push_back(static_cast<double>(n) / static_cast<double>(e.size()));
  }
  return out;
}

// Exact area under the step CED on [0, limit], divided by limit.
double exact_auc(const std::vector<double>& e, double limit) {
  double area = 0;
  for (double v : e) area += std::max(0.0, limit - v);
  return area / static_cast<double>(e.size()) / limit;
}

Outcome metric_oracles() {
  Rng rng(101);
  const Scheme scheme = Scheme::p68();
  int mismatches = 0;
  double worst_auc = 0;
  for (int c = 0; c < 100; ++c) {
    const int n = 1 + static_cast<int>(rng.below(60));
    std::vector<double> nmes, brute;
    for (int i = 0; i < n; ++i) {
      std::vector<Point> g, p;
      for (int j = 0; j < 68; ++j) {
        g.push_back({rng.uniform(0, 256), rng.uniform(0, 256)});
        const double s = rng.uniform(0.1, 12.0);
        p.push_back({g.back().x + rng.normal() * s, g.back().y + rng.normal() * s});
      }
      const LandmarkSet gl(scheme, g), pl(scheme, p);
      nmes.push_back(nme(pl, gl, NormalizationRule::inter_ocular(scheme)));
      brute.push_back(brute_nme(pl, gl, 36, 45));
    }
    if (nmes != brute) ++mismatches;
    if (failure_rate(nmes) != brute_fr(brute, 0.1)) ++mismatches;
    const auto grid = ced_grid();
    if (ced(nmes, grid) != brute_ced(brute, grid)) ++mismatches;
    worst_auc = std::max(worst_auc, std::abs(auc(nmes, 0.1, 1000) - exact_auc(brute, 0.1)));
  }
  return {mismatches == 0 && worst_auc < 1e-3,
          fmt("100 cases, exact mismatches %d, max |auc - exact| %.2e", mismatches, worst_auc)};
}

// ---------------------------------------------------------------------------

double log_ratio(const StylePosterior<double>& q, const Tensor<double>& z) {
  double lr = 0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    const double u = z[d] - q.mu[d];
    lr += -0.5 * (q.logvar[d] + u * u / std::exp(q.logvar[d])) + 0.5 * z[d] * z[d];
  }
  return lr;
}

// E_q[log q(z) - log p(z)] from 1e5 draws taken as antithetic pairs
// (z, 2 mu - z), which cancels the term linear in the noise.
Outcome kl_monte_carlo() {
  Rng rng(202);
  double worst = 0;
  const int n = 100000;
  for (int c = 0; c < 20; ++c) {
    StylePosterior<double> q{Tensor<double>({8}), Tensor<double>({8})};
    for (int d = 0; d < 8; ++d) q.mu[d] = rng.uniform(-1.0, 1.0), q.logvar[d] = rng.uniform(-1.0, 0.5);
    double acc = 0;
    for (int s = 0; s < n / 2; ++s) {
      const auto z = sample_posterior(q, rng).z;
      Tensor<double> mirror(z.shape());
      for (std::size_t d = 0; d < z.size(); ++d) mirror[d] = 2 * q.mu[d] - z[d];
      acc += log_ratio(q, z) + log_ratio(q, mirror);
    }
    worst = std::max(worst, std::abs(acc / n - kl_divergence(q)));
  }
  return {worst < 1e-2, fmt("20 posteriors, D = 8, 1e5 draws, max |closed - MC| %.4f", worst)};
}

// ---------------------------------------------------------------------------

Outcome gradient_checks() {
  DisentanglerConfig c;
  c.image_size = 16;
  c.heatmap_size = 8;
  c.landmarks = 10;
  c.blocks = 2;
  c.base_channels = 4;
  c.max_channels = 8;
  c.style_dim = 4;
  c.perceptual.stage_channels = {4, 4};
  const auto ds = generate_synth_dataset(1, 16, 5).dataset;
  const auto ns = prepare_sample<double>(ds[0], c);
  std::string detail;
  bool pass = true;
  for (bool perceptual : {true, false}) {
    Disentangler<double> m(c, 3);
    const auto pnet = PerceptualNet<double>::from_config(c);
    auto r = gradcheck::check(m.parameters(), [&] {
      Rng rng(9);
      return disentangle_loss(m, perceptual ? &pnet : nullptr, ns.image, ns.heatmaps, rng, 1.0).first;
    });
    pass = pass && r.max_rel_error < 1e-3;
    detail += fmt("%s %.1e over %zu params; ", perceptual ? "disentangle(perceptual)" : "disentangle(pixel)",
                  r.max_rel_error, r.checked);
  }
  DetectorConfig dc;
  dc.input_size = 16;
  dc.landmarks = 10;
  dc.blocks = 2;
  dc.base_channels = 4;
  dc.max_channels = 8;
  DetectorModel<double> det(dc, 4);
  const auto target = normalized_target<double>(ds[0].landmarks, 16);
  auto r = gradcheck::check(det.parameters(), [&] { return detector_loss(det, ns.image, target); });
  pass = pass && r.max_rel_error < 1e-3;
  detail += fmt("detector %.1e over %zu params", r.max_rel_error, r.checked);
  return {pass, detail};
}

// ---------------------------------------------------------------------------

DisentanglerConfig tiny_disentangler() {
  DisentanglerConfig c;
  c.image_size = 32;
  c.heatmap_size = 16;
  c.landmarks = 10;
  c.blocks = 2;
  c.base_channels = 8;
  c.max_channels = 8;
  c.style_dim = 4;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr_start = 1e-3;
  c.lr_end = 1e-4;
  c.perceptual.stage_channels = {4, 4};
  return c;
}

bool same_bits(const LandmarkSet& a, const LandmarkSet& b) {
  if (!(a.scheme() == b.scheme()) || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(Point)) != 0) return false;
  return true;
}

Outcome structure_preservation() {
  const auto ds = generate_synth_dataset(12, 32, 31).dataset;
  const auto st = train_disentangler<float>(ds, tiny_disentangler(), 1);
  Rng rng(1);
  int broken = 0, compared = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto ref = translate_style(st.model, ds[(r + 1) % ds.size()], ds[r], true, rng).structure;
    for (std::size_t d = 0; d < ds.size(); ++d) {
      if (d == r) continue;
      for (bool mean : {true, false}) {
        ++compared;
        if (!(translate_style(st.model, ds[d], ds[r], mean, rng).structure == ref)) ++broken;
      }
    }
  }
  AugmentConfig a;
  a.k = 11;
  const auto syn = augment_dataset(st.model, ds, a);
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : ds) by_id[s.id] = &s;
  int bad_landmarks = 0;
  for (const auto& s : syn)
    if (!same_bits(s.landmarks, by_id.at(*s.recipient)->landmarks) ||
        serialize_pts(s.landmarks) != serialize_pts(by_id.at(*s.recipient)->landmarks))
      ++bad_landmarks;
  return {broken == 0 && bad_landmarks == 0 && syn.size() == 132,
          fmt("%d/%d structure mismatches, %d/%zu synthetic samples with altered landmarks", broken, compared,
              bad_landmarks, syn.size())};
}

Outcome self_translation() {
  const auto ds = generate_synth_dataset(10, 32, 41).dataset;
  const auto st = train_disentangler<float>(ds, tiny_disentangler(), 2);
  Rng rng(1);
  int differ = 0;
  for (const auto& s : ds)
    if (!(translate_style(st.model, s, s, true, rng).image == reconstruct_sample(st.model, s))) ++differ;
  return {differ == 0, fmt("%d/10 probes differ from the reconstruction", differ)};
}

// ---------------------------------------------------------------------------

Outcome parser_fidelity(const fs::path& fixtures) {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const std::string pts = slurp(fixtures / "face_68.pts");
  expect(serialize_pts(parse_pts(pts)) == pts, "pts round trip");
  const std::string wflw = slurp(fixtures / "wflw_line.txt");
  const std::string line = wflw.substr(0, wflw.find('\n'));
  expect(serialize_wflw_line(parse_wflw_line(line)) == line, "wflw round trip");
  const auto list = load_wflw_file((fixtures / "wflw_list.txt").string());
  expect(manifest_text(parse_manifest(manifest_text(list))) == manifest_text(list), "wflw manifest round trip");
  auto synth = generate_synth_dataset(20, 32, 7).dataset;
  AugmentConfig a;
  a.k = 2;
  const auto syn = augment_dataset(Disentangler<float>(tiny_disentangler(), 1), synth, a, "0123abcd");
  for (const Dataset* d : std::initializer_list<const Dataset*>{&synth, &syn}) {
    const auto back = parse_manifest(manifest_text(*d));
    expect(back.same_records(*d), "manifest field round trip");
  }
  auto error_contains = [&](const std::function<void()>& fn, const std::string& needle, const std::string& what) {
    try {
      fn();
      failures.push_back(what + " (no error)");
    } catch (const ParseError& e) {
      expect(std::string(e.what()).find(needle) != std::string::npos, what + ": " + e.what());
    }
  };
  error_contains([&] { load_pts((fixtures / "bad_count.pts").string()); }, "n_points: 68 but 67 points", "bad count");
  error_contains([&] { load_pts((fixtures / "bad_token.pts").string()); }, "non-numeric token 'abc'", "bad token");
  error_contains([&] { load_pts((fixtures / "truncated.pts").string()); }, "missing '}'", "truncated");
  error_contains([&] { load_wflw_file((fixtures / "wflw_short.txt").string()); }, "expected 207", "short wflw");
  error_contains([&] { load_wflw_file((fixtures / "wflw_bad_attr.txt").string()); }, "must be 0 or 1", "bad attribute");
  error_contains([&] { parse_manifest(manifest_text(synth) + "{\"id\": \"x\", \"colour\": 1}\n"); },
                 "unknown field 'colour'", "manifest unknown field");
  std::string detail = failures.empty() ? "all fixtures" : "";
  for (const auto& f : failures) detail += f + "; ";
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STYLEALIGN_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility(const fs::path& fixtures) {
  const fs::path root = fs::temp_directory_path() / ("stylealign_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string config = " --config " + (fixtures / "tiny_run.json").string();
  for (const char* run : {"a", "b"})
    for (const char* sub : {"synth", "train-disentangler", "augment", "train-detector", "evaluate"})
      if (int code = run_cli(std::string(sub) + config + " --out " + (root / run).string()); code != 0) {
        fs::remove_all(root);
        return {false, fmt("`%s` exited with %d", sub, code)};
      }
  int differ = 0;
  std::string which;
  for (const char* p : {"data/manifest.jsonl", "disentangler/checkpoint.bin", "augment/manifest.jsonl",
                        "detector/checkpoint.bin", "eval/report.jsonl", "eval/report.txt", "eval/ced.csv"})
    if (hash_file((root / "a" / p).string()) != hash_file((root / "b" / p).string())) ++differ, which += p, which += " ";
  fs::remove_all(root);
  return {differ == 0, differ == 0 ? "manifests, checkpoints and reports identical" : "differ: " + which};
}

// ---------------------------------------------------------------------------
// Desk-scale trends. One full-loss and one no-KL disentangler per seed are
// shared by the three criteria; each criterion reports the time of the work it
// needs on its own.

struct TrendRun {
  RunConfig cfg;
  Dataset train, test;
  std::vector<SynthFactors> train_factors, test_factors;
  std::map<std::uint64_t, double> k0, k4_full, k4_no_kl;
  std::map<std::uint64_t, ProbeResult> probe;
  double t_full = 0, t_no_kl = 0, t_k0 = 0, t_k4_full = 0, t_k4_no_kl = 0, t_probe = 0;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrendRun run_trends(const fs::path& config_path, bool need_k, bool need_loss, bool need_probe) {
  TrendRun t;
  t.cfg = load_run_config(config_path.string(), {});
  const auto& cfg = t.cfg;
  auto sd = generate_synth_dataset(cfg.data.n, cfg.data.image_size, cfg.seed, cfg.data.channels);
  // The CLI stores images as 8-bit files; train on the same quantized pixels.
  Dataset all(sd.dataset.scheme());
  for (auto s : sd.dataset) {
    s.image = quantize8(s.image);
    all.push_back(std::move(s));
  }
  const std::size_t n_train = static_cast<std::size_t>(cfg.data.train_count);
  t.train = all.slice(0, n_train);
  t.test = all.slice(n_train, all.size() - n_train);
  t.train_factors.assign(sd.factors.begin(), sd.factors.begin() + n_train);
  t.test_factors.assign(sd.factors.begin() + n_train, sd.factors.end());
  const auto dcfg = disentangler_config_for(cfg, t.train);
  const auto ecfg = experiment_config_for(cfg, t.train);
  for (std::uint64_t seed : cfg.eval.seeds) {
    auto t0 = std::chrono::steady_clock::now();
    const auto full = train_disentangler<float>(t.train, variant_config(dcfg, "full"), seed);
    t.t_full += seconds_since(t0);
    if (need_probe) {
      t0 = std::chrono::steady_clock::now();
      t.probe[seed] = probe_disentanglement(full.model, t.train, t.train_factors, t.test, t.test_factors);
      t.t_probe += seconds_since(t0);
      std::printf("  seed %llu probe: style R2 %.3f, structure R2 %.3f\n", static_cast<unsigned long long>(seed),
                  t.probe[seed].style_mean, t.probe[seed].structure_mean);
    }
    if (need_k) {
      t0 = std::chrono::steady_clock::now();
      t.k0[seed] = stage2_row<float>(t.train, t.test, nullptr, 0, ecfg, seed, "k=0").nme;
      t.t_k0 += seconds_since(t0);
    }
    if (need_k || need_loss) {
      t0 = std::chrono::steady_clock::now();
      t.k4_full[seed] = stage2_row<float>(t.train, t.test, &full.model, 4, ecfg, seed, "k=4").nme;
      t.t_k4_full += seconds_since(t0);
    }
    if (need_loss) {
      t0 = std::chrono::steady_clock::now();
      const auto no_kl = train_disentangler<float>(t.train, variant_config(dcfg, "no_kl"), seed);
      t.t_no_kl += seconds_since(t0);
      t0 = std::chrono::steady_clock::now();
      t.k4_no_kl[seed] = stage2_row<float>(t.train, t.test, &no_kl.model, 4, ecfg, seed, "no_kl").nme;
      t.t_k4_no_kl += seconds_since(t0);
    }
    std::printf("  seed %llu:%s%s%s\n", static_cast<unsigned long long>(seed),
                need_k ? fmt(" NME k=0 %.4f", t.k0[seed]).c_str() : "",
                (need_k || need_loss) ? fmt(" k=4/full %.4f", t.k4_full[seed]).c_str() : "",
                need_loss ? fmt(" k=4/no_kl %.4f", t.k4_no_kl[seed]).c_str() : "");
    std::fflush(stdout);
  }
  return t;
}

double median_of(const std::map<std::uint64_t, double>& m) {
  std::vector<double> v;
  for (const auto& [s, x] : m) v.push_back(x);
  return median(v);
}

Outcome k_trend(const TrendRun& t) {
  const double a = median_of(t.k0), b = median_of(t.k4_full);
  const double minutes = (t.t_full + t.t_k0 + t.t_k4_full) / 60;
  return {b <= 0.9 * a && minutes < 30,
          fmt("median NME k=0 %.4f, k=4 %.4f (ratio %.3f, need <= 0.9); %.1f min", a, b, b / a, minutes)};
}

Outcome loss_trend(const TrendRun& t) {
  const double full = median_of(t.k4_full), no_kl = median_of(t.k4_no_kl);
  const double minutes = (t.t_full + t.t_no_kl + t.t_k4_full + t.t_k4_no_kl) / 60;
  return {full <= no_kl && minutes < 45,
          fmt("median NME full %.4f, no_kl %.4f; %.1f min", full, no_kl, minutes)};
}

Outcome probe(const TrendRun& t) {
  int ok = 0;
  std::string detail;
  for (const auto& [seed, p] : t.probe) {
    if (p.style_mean >= p.structure_mean + 0.2) ++ok;
    detail += fmt("seed %llu style %.3f struct %.3f; ", static_cast<unsigned long long>(seed), p.style_mean,
                  p.structure_mean);
  }
  return {ok == static_cast<int>(t.probe.size()) && !t.probe.empty(), detail + fmt("%d/%zu seeds with gap >= 0.2", ok, t.probe.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string group = "all", only;
  std::string config = std::string(STYLEALIGN_CONFIGS) + "/desk.json";
  app.add_option("--group", group, "fast, trends or all")->check(CLI::IsMember({"fast", "trends", "all"}));
  app.add_option("--criterion", only, "Run a single criterion by name");
  app.add_option("--config", config, "Run configuration for the trend criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path fixtures = STYLEALIGN_FIXTURES;
  using Check = std::function<Outcome()>;
  const std::vector<std::tuple<std::string, std::string, Check>> fast = {
      {"metric_oracles", "fast", metric_oracles},
      {"kl_monte_carlo", "fast", kl_monte_carlo},
      {"gradient_checks", "fast", gradient_checks},
      {"structure_preservation", "fast", structure_preservation},
      {"self_translation", "fast", self_translation},
      {"parser_fidelity", "fast", [&] { return parser_fidelity(fixtures); }},
      {"reproducibility", "fast", [&] { return reproducibility(fixtures); }},
  };
  const std::vector<std::string> trend_names = {"k_trend", "loss_trend", "disentanglement_probe"};

  auto wanted = [&](const std::string& name, const std::string& g) {
    if (!only.empty()) return only == name;
    return group == "all" || group == g;
  };

  int failures = 0, ran = 0;
  auto report = [&](const std::string& name, const Outcome& o, double secs) {
    ++ran;
    if (!o.pass) ++failures;
    std::printf("%s %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(name, o, seconds_since(t0));
  };

  for (const auto& [name, g, fn] : fast)
    if (wanted(name, g)) guarded(name, fn);

  const bool need_k = wanted("k_trend", "trends");
  const bool need_loss = wanted("loss_trend", "trends");
  const bool need_probe = wanted("disentanglement_probe", "trends");
  if (need_k || need_loss || need_probe) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto t = run_trends(config, need_k, need_loss, need_probe);
      if (need_k) report("k_trend", k_trend(t), seconds_since(t0));
      if (need_loss) report("loss_trend", loss_trend(t), seconds_since(t0));
      if (need_probe) report("disentanglement_probe", probe(t), seconds_since(t0));
    } catch (const std::exception& e) {
      for (const auto& n : trend_names)
        if (wanted(n, "trends")) report(n, {false, std::string("exception: ") + e.what()}, seconds_since(t0));
    }
  }
  if (ran == 0) {
    std::fprintf(stderr, "no criterion matched\n");
    return 2;
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
