#pragma once

// Conditional VAE that separates a face image into a style code z and
// landmark structure y.
//
//   style encoder     q(z | x, y): image + heatmaps -> (mu, logvar)
//   structure encoder            : heatmaps -> multi-scale feature maps
//   renderer          p(x | z, y): z + structure features -> image
//
// Structure features reach the renderer through skip connections at every
// scale where heatmaps exist; z enters at the bottleneck as a learned spatial
// map and modulates every decoder level per channel. Training minimises
// reconstruction + beta * KL(q || N(0, I)).

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylealign/checkpoint.hpp"
#include "stylealign/datasets.hpp"
#include "stylealign/geometry.hpp"
#include "stylealign/json_util.hpp"
#include "stylealign/nn.hpp"

namespace stylealign {

using nn::Var;

enum class ReconstructionKind { Perceptual, Pixel };
enum class PerceptualMode { FixedRandom, Pretrained };

NLOHMANN_JSON_SERIALIZE_ENUM(ReconstructionKind, {{ReconstructionKind::Perceptual, "perceptual"},
                                                  {ReconstructionKind::Pixel, "pixel"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PerceptualMode, {{PerceptualMode::FixedRandom, "fixed_random"},
                                              {PerceptualMode::Pretrained, "pretrained"}})

struct PerceptualConfig {
  PerceptualMode mode = PerceptualMode::FixedRandom;
  /// Output channels of each conv + pool stage; a tap follows every pool.
  std::vector<int> stage_channels = {16, 32, 64, 64};
  std::uint64_t seed = 20190101;
  /// Pretrained mode: container with conv<i>.weight / conv<i>.bias tensors.
  std::string weights_path;
};

struct DisentanglerConfig {
  int image_size = 256;
  int image_channels = 3;
  int heatmap_size = 64;
  double heatmap_sigma = 1.5;
  int landmarks = 68;
  int blocks = 6;  // stride-2 residual blocks per encoder
  int base_channels = 32;
  int max_channels = 256;
  int style_dim = 64;

  double beta = 1.0;
  ReconstructionKind reconstruction = ReconstructionKind::Perceptual;
  PerceptualConfig perceptual;

  int epochs = 30;
  int batch_size = 8;
  double lr_start = 0.01;
  double lr_end = 0.0001;
  nn::AdamSettings adam;

  int channels_at(int level) const { return std::min(base_channels << level, max_channels); }

  /// Encoder level (0 = image resolution) at which heatmaps live.
  int heatmap_level() const {
    int level = 0;
    while ((image_size >> level) > heatmap_size) ++level;
    return level;
  }

  void validate() const {
    if (image_size <= 0 || heatmap_size <= 0 || image_channels <= 0 || landmarks <= 0 || blocks <= 0 ||
        base_channels <= 0 || style_dim <= 0)
      throw ConfigError("disentangler sizes must be positive");
    if ((image_size >> heatmap_level()) != heatmap_size || (image_size % (1 << heatmap_level())) != 0)
      throw ConfigError("heatmap_size must be image_size divided by a power of two");
    if (heatmap_level() > blocks) throw ConfigError("heatmap resolution is below the encoder bottleneck");
    if ((image_size >> blocks) < 1 || image_size % (1 << blocks) != 0)
      throw ConfigError("image_size must be divisible by 2^blocks");
    if (!(heatmap_sigma > 0)) throw ConfigError("heatmap_sigma must be positive");
    if (beta < 0) throw ConfigError("beta must be non-negative");
    if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  }
};

inline nlohmann::json to_json(const DisentanglerConfig& c) {
  return {{"image_size", c.image_size},
          {"image_channels", c.image_channels},
          {"heatmap_size", c.heatmap_size},
          {"heatmap_sigma", c.heatmap_sigma},
          {"landmarks", c.landmarks},
          {"blocks", c.blocks},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"style_dim", c.style_dim},
          {"beta", c.beta},
          {"reconstruction", c.reconstruction},
          {"perceptual",
           {{"mode", c.perceptual.mode},
            {"stage_channels", c.perceptual.stage_channels},
            {"seed", c.perceptual.seed},
            {"weights_path", c.perceptual.weights_path}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

inline void read_config(StrictReader& r, DisentanglerConfig& c) {
  r.get("image_size", c.image_size);
  r.get("image_channels", c.image_channels);
  r.get("heatmap_size", c.heatmap_size);
  r.get("heatmap_sigma", c.heatmap_sigma);
  r.get("landmarks", c.landmarks);
  r.get("blocks", c.blocks);
  r.get("base_channels", c.base_channels);
  r.get("max_channels", c.max_channels);
  r.get("style_dim", c.style_dim);
  r.get("beta", c.beta);
  r.get("reconstruction", c.reconstruction);
  r.nested("perceptual", [&](StrictReader& p) {
    p.get("mode", c.perceptual.mode);
    p.get("stage_channels", c.perceptual.stage_channels);
    p.get("seed", c.perceptual.seed);
    p.get("weights_path", c.perceptual.weights_path);
  });
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr_start", c.lr_start);
  r.get("lr_end", c.lr_end);
  r.nested("adam", [&](StrictReader& a) {
    a.get("beta1", c.adam.beta1);
    a.get("beta2", c.adam.beta2);
    a.get("eps", c.adam.eps);
  });
}

inline DisentanglerConfig disentangler_config_from_json(const nlohmann::json& j) {
  DisentanglerConfig c;
  StrictReader r(j, "disentangler");
  read_config(r, c);
  r.finish();
  return c;
}

template <typename T>
struct StylePosterior {
  Tensor<T> mu, logvar;
};

template <typename T>
struct StyleCode {
  Tensor<T> z;
};

/// Structure-branch feature maps, shallow (highest resolution) first.
template <typename T>
struct StructureFeatures {
  std::vector<Tensor<T>> scales;
  bool operator==(const StructureFeatures&) const = default;
};

// ---------------------------------------------------------------------------
// Conversions between dataset images and network tensors.

/// [0, 1] image -> [-1, 1] network tensor.
template <typename T>
Tensor<T> to_network(const Image& im) {
  Tensor<T> t(im.shape());
  for (std::size_t i = 0; i < im.size(); ++i) t[i] = static_cast<T>(im[i]) * T(2) - T(1);
  return t;
}

/// [-1, 1] network tensor -> [0, 1] image.
template <typename T>
Image to_image(const Tensor<T>& t) {
  Image im(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) im[i] = static_cast<float>((t[i] + T(1)) * T(0.5));
  return im;
}

template <typename T>
Tensor<T> heatmap_tensor(const HeatmapStack& hm) {
  return hm.maps.template cast<T>();
}

// ---------------------------------------------------------------------------

/// Fixed feature extractor for the perceptual reconstruction loss. Weights
/// never receive gradients.
template <typename T>
class PerceptualNet {
 public:
  /// Identity extractor with a single tap: the loss reduces to pixel MSE.
  static PerceptualNet identity() {
    PerceptualNet p;
    p.identity_ = true;
    return p;
  }

  static PerceptualNet fixed_random(int in_channels, const std::vector<int>& stages, std::uint64_t seed) {
    PerceptualNet p;
    Rng rng = Rng::substream(seed, "perceptual.init");
    int cin = in_channels;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      p.convs_.push_back(nn::Conv2d<T>::make(p.params_, "conv" + std::to_string(i), cin, stages[i], 3, 1, rng));
      cin = stages[i];
    }
    p.freeze();
    return p;
  }

  static PerceptualNet from_container(const Container& c) {
    c.expect_format("perceptual-net", 1);
    PerceptualNet p;
    const int n = c.meta.at("stages").get<int>();
    for (int i = 0; i < n; ++i) {
      const std::string base = "conv" + std::to_string(i);
      nn::Conv2d<T> conv;
      conv.weight = p.params_.add(base + ".weight", c.get<double>(base + ".weight").template cast<T>());
      conv.bias = p.params_.add(base + ".bias", c.get<double>(base + ".bias").template cast<T>());
      conv.stride = 1;
      conv.pad = conv.weight->shape()[2] / 2;
      p.convs_.push_back(conv);
    }
    p.freeze();
    return p;
  }

  static PerceptualNet from_config(const DisentanglerConfig& cfg) {
    if (cfg.perceptual.mode == PerceptualMode::Pretrained) {
      if (cfg.perceptual.weights_path.empty()) throw ConfigError("pretrained perceptual net needs weights_path");
      return from_container(Container::load(cfg.perceptual.weights_path));
    }
    return fixed_random(cfg.image_channels, cfg.perceptual.stage_channels, cfg.perceptual.seed);
  }

  /// Stores weights in the container layout `from_container` reads.
  Container to_container() const {
    Container c;
    c.format = "perceptual-net";
    c.meta["stages"] = convs_.size();
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string base = "conv" + std::to_string(i);
      c.put(base + ".weight", convs_[i].weight->value.template cast<double>());
      c.put(base + ".bias", convs_[i].bias->value.template cast<double>());
    }
    return c;
  }

  /// Activations after each conv + pool stage, shallow to deep.
  std::vector<Var<T>> taps(const Var<T>& x) const {
    if (identity_) return {x};
    std::vector<Var<T>> out;
    Var<T> h = x;
    for (const auto& conv : convs_) {
      h = nn::avgpool2x(nn::leaky_relu(conv(h)));
      out.push_back(h);
    }
    return out;
  }

  /// sum over taps of mean squared feature difference.
  Var<T> loss(const Var<T>& target, const Var<T>& reconstruction) const {
    std::vector<Var<T>> ft;
    {
      nn::NoGradGuard guard;
      ft = taps(target);
    }
    const auto fr = taps(reconstruction);
    Var<T> total = nn::mse(fr[0], ft[0]);
    for (std::size_t l = 1; l < fr.size(); ++l) total = nn::add(total, nn::mse(fr[l], ft[l]));
    return total;
  }

  T loss_value(const Tensor<T>& a, const Tensor<T>& b) const {
    nn::NoGradGuard guard;
    return loss(nn::constant(a), nn::constant(b))->value[0];
  }

  std::size_t tap_count() const { return identity_ ? 1 : convs_.size(); }
  bool weights_frozen() const {
    for (const auto& [_, v] : params_)
      if (v->requires_grad) return false;
    return true;
  }

 private:
  void freeze() {
    for (const auto& [_, v] : params_) v->requires_grad = false;
  }

  nn::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
  bool identity_ = false;
};

// ---------------------------------------------------------------------------

template <typename T>
class Disentangler {
 public:
  Disentangler(const DisentanglerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::substream(seed, "init.disentangler");
    const int b = cfg_.blocks;
    const int hl = cfg_.heatmap_level();
    const int l = cfg_.landmarks;
    const int bottleneck = cfg_.image_size >> b;

    style_stem_ = nn::Conv2d<T>::make(params_, "style.stem", cfg_.image_channels + (hl == 0 ? l : 0),
                                      cfg_.channels_at(0), 3, 1, rng);
    for (int i = 1; i <= b; ++i) {
      const int cin = cfg_.channels_at(i - 1) + ((i - 1 == hl && hl > 0) ? l : 0);
      style_down_.push_back(
          nn::ResidualDown<T>::make(params_, "style.down" + std::to_string(i), cin, cfg_.channels_at(i), rng));
    }
    mu_head_ = nn::Linear<T>::make(params_, "style.mu", cfg_.channels_at(b), cfg_.style_dim, rng);
    logvar_head_ = nn::Linear<T>::make(params_, "style.logvar", cfg_.channels_at(b), cfg_.style_dim, rng, 0.1);

    struct_stem_ = nn::Conv2d<T>::make(params_, "struct.stem", l, cfg_.channels_at(hl), 3, 1, rng);
    for (int i = hl + 1; i <= b; ++i)
      struct_down_.push_back(nn::ResidualDown<T>::make(params_, "struct.down" + std::to_string(i),
                                                       cfg_.channels_at(i - 1), cfg_.channels_at(i), rng));

    const int cb = cfg_.channels_at(b);
    z_map_ = nn::Linear<T>::make(params_, "render.zmap", cfg_.style_dim, cb * bottleneck * bottleneck, rng);
    bottleneck_ = nn::ResidualBlock<T>::make(params_, "render.bottleneck", 2 * cb, cb, rng);
    film_.resize(b + 1);
    film_[b] = nn::Linear<T>::make(params_, "render.film" + std::to_string(b), cfg_.style_dim, 2 * cb, rng, 0.1);
    up_.resize(b);
    for (int i = b - 1; i >= 0; --i) {
      const int cin = cfg_.channels_at(i + 1) + (i >= hl ? cfg_.channels_at(i) : 0);
      up_[i] = nn::ResidualBlock<T>::make(params_, "render.up" + std::to_string(i), cin, cfg_.channels_at(i), rng);
      film_[i] = nn::Linear<T>::make(params_, "render.film" + std::to_string(i), cfg_.style_dim,
                                     2 * cfg_.channels_at(i), rng, 0.1);
    }
    out_conv_ = nn::Conv2d<T>::make(params_, "render.out", cfg_.channels_at(0), cfg_.image_channels, 3, 1, rng);
  }

  const DisentanglerConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// Number of structure scales handed to the renderer.
  int structure_scales() const { return cfg_.blocks - cfg_.heatmap_level() + 1; }

  /// Expected shape of each structure scale, shallow first.
  std::vector<Shape> structure_shapes() const {
    std::vector<Shape> out;
    for (int i = cfg_.heatmap_level(); i <= cfg_.blocks; ++i)
      out.push_back({cfg_.channels_at(i), cfg_.image_size >> i, cfg_.image_size >> i});
    return out;
  }

  // -- graph-level forward passes ------------------------------------------

  std::pair<Var<T>, Var<T>> style_graph(const Var<T>& image, const Var<T>& heatmaps) const {
    check_image(image->value);
    check_heatmaps(heatmaps->value);
    const int hl = cfg_.heatmap_level();
    Var<T> h = hl == 0 ? nn::concat<T>({image, heatmaps}) : image;
    h = nn::leaky_relu(style_stem_(h));
    for (int i = 1; i <= cfg_.blocks; ++i) {
      if (i - 1 == hl && hl > 0) h = nn::concat<T>({h, heatmaps});
      h = style_down_[i - 1](h);
    }
    Var<T> pooled = nn::global_avg_pool(h);
    return {mu_head_(pooled), logvar_head_(pooled)};
  }

  std::vector<Var<T>> structure_graph(const Var<T>& heatmaps) const {
    check_heatmaps(heatmaps->value);
    std::vector<Var<T>> feats;
    feats.push_back(nn::leaky_relu(struct_stem_(heatmaps)));
    for (const auto& block : struct_down_) feats.push_back(block(feats.back()));
    return feats;
  }

  Var<T> render_graph(const Var<T>& z, const std::vector<Var<T>>& structure) const {
    if (z->value.size() != static_cast<std::size_t>(cfg_.style_dim))
      throw InvalidInput("style code has dimension " + std::to_string(z->value.size()) + ", expected " +
                         std::to_string(cfg_.style_dim));
    const auto shapes = structure_shapes();
    if (structure.size() != shapes.size())
      throw InvalidInput("renderer expects " + std::to_string(shapes.size()) + " structure scales, got " +
                         std::to_string(structure.size()));
    for (std::size_t i = 0; i < shapes.size(); ++i)
      if (structure[i]->shape() != shapes[i])
        throw InvalidInput("structure scale " + std::to_string(i) + " has shape " +
                           shape_str(structure[i]->shape()) + ", expected " + shape_str(shapes[i]));

    const int b = cfg_.blocks, hl = cfg_.heatmap_level();
    const int r = cfg_.image_size >> b;
    Var<T> zmap = nn::reshape(z_map_(z), {cfg_.channels_at(b), r, r});
    Var<T> h = bottleneck_(nn::concat<T>({structure.back(), zmap}));
    h = modulate(h, z, b);
    for (int i = b - 1; i >= 0; --i) {
      h = nn::upsample2x(h);
      if (i >= hl) h = nn::concat<T>({h, structure[i - hl]});
      h = up_[i](h);
      h = modulate(h, z, i);
    }
    return nn::tanh(out_conv_(h));
  }

  // -- value-level API -----------------------------------------------------

  StylePosterior<T> encode_style(const Tensor<T>& image, const Tensor<T>& heatmaps) const {
    nn::NoGradGuard guard;
    auto [mu, lv] = style_graph(nn::constant(image), nn::constant(heatmaps));
    return {mu->value, lv->value};
  }

  StructureFeatures<T> encode_structure(const Tensor<T>& heatmaps) const {
    nn::NoGradGuard guard;
    StructureFeatures<T> f;
    for (const auto& v : structure_graph(nn::constant(heatmaps))) f.scales.push_back(v->value);
    return f;
  }

  Tensor<T> render(const StyleCode<T>& code, const StructureFeatures<T>& structure) const {
    nn::NoGradGuard guard;
    std::vector<Var<T>> s;
    for (const auto& t : structure.scales) s.push_back(nn::constant(t));
    return render_graph(nn::constant(code.z), s)->value;
  }

  /// Deterministic reconstruction through the posterior mean.
  Tensor<T> reconstruct(const Tensor<T>& image, const Tensor<T>& heatmaps) const {
    return render({encode_style(image, heatmaps).mu}, encode_structure(heatmaps));
  }

  void check_image(const Tensor<T>& image) const {
    require_shape(image, {cfg_.image_channels, cfg_.image_size, cfg_.image_size}, "style encoder image");
  }
  void check_heatmaps(const Tensor<T>& hm) const {
    require_shape(hm, {cfg_.landmarks, cfg_.heatmap_size, cfg_.heatmap_size}, "heatmap stack");
  }

 private:
  Var<T> modulate(const Var<T>& h, const Var<T>& z, int level) const {
    const int c = h->shape()[0];
    Var<T> gb = film_[level](z);
    return nn::film(h, nn::slice(gb, 0, c), nn::slice(gb, c, c));
  }

  DisentanglerConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Conv2d<T> style_stem_;
  std::vector<nn::ResidualDown<T>> style_down_;
  nn::Linear<T> mu_head_, logvar_head_;
  nn::Conv2d<T> struct_stem_;
  std::vector<nn::ResidualDown<T>> struct_down_;
  nn::Linear<T> z_map_;
  nn::ResidualBlock<T> bottleneck_;
  std::vector<nn::ResidualBlock<T>> up_;
  std::vector<nn::Linear<T>> film_;
  nn::Conv2d<T> out_conv_;
};

// ---------------------------------------------------------------------------
// Objective

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from `rng`.
template <typename T>
StyleCode<T> sample_posterior(const StylePosterior<T>& q, Rng& rng) {
  StyleCode<T> code{Tensor<T>(q.mu.shape())};
  for (std::size_t i = 0; i < q.mu.size(); ++i)
    code.z[i] = q.mu[i] + std::exp(T(0.5) * q.logvar[i]) * static_cast<T>(rng.normal());
  return code;
}

/// KL(q || N(0, I)) = 0.5 * sum(mu^2 + exp(logvar) - logvar - 1).
template <typename T>
double kl_divergence(const StylePosterior<T>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    const double m = q.mu[i], lv = q.logvar[i];
    s += m * m + std::exp(lv) - lv - 1.0;
  }
  return 0.5 * s;
}

template <typename T>
double perceptual_loss(const PerceptualNet<T>& pnet, const Tensor<T>& x, const Tensor<T>& x_hat) {
  if (x.shape() != x_hat.shape()) throw InvalidInput("perceptual_loss: images differ in shape");
  return static_cast<double>(pnet.loss_value(x, x_hat));
}

struct LossDiagnostics {
  double total = 0, reconstruction = 0, kl = 0;
};

/// Reconstruction + beta * KL for one sample, as a differentiable graph.
/// `pnet == nullptr` selects pixel MSE reconstruction.
template <typename T>
std::pair<Var<T>, LossDiagnostics> disentangle_loss(const Disentangler<T>& model, const PerceptualNet<T>* pnet,
                                                    const Tensor<T>& image, const Tensor<T>& heatmaps, Rng& rng,
                                                    double beta) {
  if (beta < 0) throw InvalidInput("beta must be non-negative");
  auto x = nn::constant(image);
  auto y = nn::constant(heatmaps);
  auto [mu, logvar] = model.style_graph(x, y);
  Tensor<T> eps(mu->shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = static_cast<T>(rng.normal());
  auto z = nn::reparameterize(mu, logvar, eps);
  auto x_hat = model.render_graph(z, model.structure_graph(y));
  auto rec = pnet ? pnet->loss(x, x_hat) : nn::mse(x_hat, x);
  auto kl = nn::kl_unit_gaussian(mu, logvar);
  auto total = beta > 0 ? nn::add(rec, nn::scale(kl, static_cast<T>(beta))) : rec;
  LossDiagnostics d{static_cast<double>(total->value[0]), static_cast<double>(rec->value[0]),
                    static_cast<double>(kl->value[0])};
  return {total, d};
}

// ---------------------------------------------------------------------------
// Training

/// One sample in network form: image in [-1, 1] and its heatmap stack.
template <typename T>
struct NetworkSample {
  Tensor<T> image;
  Tensor<T> heatmaps;
};

/// Brings a sample to the configured resolution (crop to its box) and renders
/// its heatmaps.
template <typename T>
NetworkSample<T> prepare_sample(const Sample& s, const DisentanglerConfig& cfg) {
  if (s.image.empty()) throw InvalidInput("sample '" + s.id + "' has no pixel data loaded");
  if (channels(s.image) != cfg.image_channels)
    throw InvalidInput("sample '" + s.id + "' has " + std::to_string(channels(s.image)) + " channels, expected " +
                       std::to_string(cfg.image_channels));
  if (static_cast<int>(s.landmarks.size()) != cfg.landmarks)
    throw InvalidInput("sample '" + s.id + "' has " + std::to_string(s.landmarks.size()) +
                       " landmarks, model expects " + std::to_string(cfg.landmarks));
  const auto crop = crop_and_resize(s.image, s.bbox, s.landmarks, cfg.image_size);
  return {to_network<T>(crop.image),
          heatmap_tensor<T>(heatmaps_for(crop.landmarks, cfg.image_size, cfg.heatmap_size, cfg.heatmap_sigma))};
}

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double loss = 0, reconstruction = 0, kl = 0;
};

template <typename T>
struct DisentanglerState {
  Disentangler<T> model;
  nn::Adam<T> optimizer;
  int epoch = 0;
  Rng rng;
  std::vector<EpochLog> log;
};

template <typename T>
double disentangler_lr(const DisentanglerConfig& cfg, long long step, long long total) {
  return nn::linear_lr(cfg.lr_start, cfg.lr_end, step, total);
}

template <typename T>
DisentanglerState<T> init_disentangler(const DisentanglerConfig& cfg, std::uint64_t seed) {
  DisentanglerState<T> st{Disentangler<T>(cfg, seed), {}, 0, Rng::substream(seed, "train.disentangler"), {}};
  st.optimizer = nn::Adam<T>(st.model.parameters(), cfg.adam);
  return st;
}

/// Runs epochs until `state.epoch` reaches `stop_epoch` (default: the
/// configured epoch count). Batches are visited in a seed-determined order;
/// the learning rate decays linearly per step over the full schedule.
template <typename T>
void continue_training(DisentanglerState<T>& state, const std::vector<NetworkSample<T>>& data,
                       const std::function<void(const EpochLog&)>& on_epoch = {}, int stop_epoch = -1) {
  const auto& cfg = state.model.config();
  if (data.empty()) throw InvalidInput("cannot train the disentangler on an empty dataset");
  const auto pnet = cfg.reconstruction == ReconstructionKind::Perceptual
                        ? std::optional<PerceptualNet<T>>(PerceptualNet<T>::from_config(cfg))
                        : std::nullopt;
  const long long per_epoch = (static_cast<long long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total = per_epoch * cfg.epochs;
  auto& params = state.model.parameters();

  std::vector<std::size_t> order(data.size());
  const int last = stop_epoch < 0 ? cfg.epochs : std::min(stop_epoch, cfg.epochs);
  while (state.epoch < last) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.below(i)]);

    EpochLog log{state.epoch + 1, 0, 0, 0, 0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const T inv = T(1) / static_cast<T>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data[order[k]];
        auto [loss, d] = disentangle_loss(state.model, pnet ? &*pnet : nullptr, s.image, s.heatmaps, state.rng,
                                          cfg.beta);
        if (!std::isfinite(d.total))
          throw NumericalError("non-finite disentangler loss at epoch " + std::to_string(state.epoch + 1) +
                               ", step " + std::to_string(state.optimizer.steps()) + ", sample " +
                               std::to_string(order[k]) + " (reconstruction " + std::to_string(d.reconstruction) +
                               ", kl " + std::to_string(d.kl) + ")");
        nn::backward(nn::scale(loss, inv));
        log.loss += d.total;
        log.reconstruction += d.reconstruction;
        log.kl += d.kl;
      }
      if (!params.grads_finite())
        throw NumericalError("non-finite disentangler gradient at step " + std::to_string(state.optimizer.steps()));
      const double lr = disentangler_lr<T>(cfg, state.optimizer.steps(), total);
      if (start == 0) log.lr = lr;
      state.optimizer.step(params, lr);
    }
    const double n = static_cast<double>(data.size());
    log.loss /= n;
    log.reconstruction /= n;
    log.kl /= n;
    ++state.epoch;
    state.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
}

template <typename T>
DisentanglerState<T> train_disentangler(const Dataset& dataset, const DisentanglerConfig& cfg, std::uint64_t seed,
                                        const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (dataset.empty()) throw InvalidInput("cannot train the disentangler on an empty dataset");
  std::vector<NetworkSample<T>> data;
  data.reserve(dataset.size());
  for (const auto& s : dataset) data.push_back(prepare_sample<T>(s, cfg));
  auto state = init_disentangler<T>(cfg, seed);
  continue_training(state, data, on_epoch);
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kDisentanglerFormat = "disentangler";
inline constexpr int kDisentanglerVersion = 1;

template <typename T>
void put_parameters(Container& c, const nn::ParameterSet<T>& params, const std::string& prefix = "param/") {
  for (const auto& [name, v] : params) c.put(prefix + name, v->value);
}

template <typename T>
void get_parameters(const Container& c, nn::ParameterSet<T>& params, const std::string& prefix = "param/") {
  for (const auto& [name, v] : params) {
    auto t = c.get<T>(prefix + name);
    if (t.shape() != v->value.shape())
      throw InvalidInput("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                         shape_str(v->value.shape()));
    v->value = std::move(t);
  }
}

template <typename T>
void put_optimizer(Container& c, const nn::Adam<T>& opt, const nn::ParameterSet<T>& params) {
  c.meta["optimizer_steps"] = opt.steps();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.put("adam.m/" + params.name(i), opt.first_moments()[i]);
    c.put("adam.v/" + params.name(i), opt.second_moments()[i]);
  }
}

template <typename T>
void get_optimizer(const Container& c, nn::Adam<T>& opt, const nn::ParameterSet<T>& params) {
  opt.set_steps(c.meta.at("optimizer_steps").get<long long>());
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.first_moments()[i] = c.get_vector<double>("adam.m/" + params.name(i));
    opt.second_moments()[i] = c.get_vector<double>("adam.v/" + params.name(i));
  }
}

template <typename T>
Container disentangler_checkpoint(const DisentanglerState<T>& st, std::uint64_t seed) {
  Container c;
  c.format = kDisentanglerFormat;
  c.version = kDisentanglerVersion;
  c.meta["config"] = to_json(st.model.config());
  c.meta["seed"] = seed;
  c.meta["epoch"] = st.epoch;
  c.meta["rng_state"] = st.rng.state();
  c.meta["dtype"] = dtype_tag<T>();
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : st.log)
    log.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"reconstruction", e.reconstruction},
                   {"kl", e.kl}});
  c.meta["log"] = log;
  put_parameters(c, st.model.parameters());
  put_optimizer(c, st.optimizer, st.model.parameters());
  return c;
}

template <typename T>
DisentanglerState<T> disentangler_from_checkpoint(const Container& c) {
  c.expect_format(kDisentanglerFormat, kDisentanglerVersion);
  const auto cfg = disentangler_config_from_json(c.meta.at("config"));
  const auto seed = c.meta.at("seed").get<std::uint64_t>();
  auto st = init_disentangler<T>(cfg, seed);
  get_parameters(c, st.model.parameters());
  get_optimizer(c, st.optimizer, st.model.parameters());
  st.epoch = c.meta.at("epoch").get<int>();
  st.rng.set_state(c.meta.at("rng_state").get<std::string>());
  for (const auto& e : c.meta.at("log"))
    st.log.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("loss").get<double>(),
                      e.at("reconstruction").get<double>(), e.at("kl").get<double>()});
  return st;
}

}  // namespace stylealign
