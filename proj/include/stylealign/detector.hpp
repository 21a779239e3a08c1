#pragma once

// Coordinate-regression landmark detector: a residual CNN with a fully
// connected head producing L x 2 coordinates normalized to the crop frame.

#include <cmath>
#include <functional>
#include <numbers>
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

struct AffineAugment {
  bool enabled = true;
  double max_rotation_deg = 30.0;
  double min_scale = 0.75;
  double max_scale = 1.25;
  double flip_probability = 0.5;
};

struct DetectorConfig {
  int input_size = 256;
  int image_channels = 3;
  int landmarks = 68;
  int blocks = 4;
  int base_channels = 16;
  int max_channels = 128;

  int epochs = 30;
  int batch_size = 16;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  nn::AdamSettings adam;
  AffineAugment augment;

  int channels_at(int level) const { return std::min(base_channels << level, max_channels); }

  void validate() const {
    if (input_size <= 0 || image_channels <= 0 || landmarks <= 0 || blocks <= 0 || base_channels <= 0)
      throw ConfigError("detector sizes must be positive");
    if (input_size % (1 << blocks) != 0) throw ConfigError("detector input_size must be divisible by 2^blocks");
    if (epochs <= 0 || batch_size <= 0) throw ConfigError("detector epochs and batch_size must be positive");
    if (augment.min_scale <= 0 || augment.max_scale < augment.min_scale)
      throw ConfigError("detector augment scale range is invalid");
  }
};

inline nlohmann::json to_json(const DetectorConfig& c) {
  return {{"input_size", c.input_size},
          {"image_channels", c.image_channels},
          {"landmarks", c.landmarks},
          {"blocks", c.blocks},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"augment",
           {{"enabled", c.augment.enabled},
            {"max_rotation_deg", c.augment.max_rotation_deg},
            {"min_scale", c.augment.min_scale},
            {"max_scale", c.augment.max_scale},
            {"flip_probability", c.augment.flip_probability}}}};
}

inline void read_config(StrictReader& r, DetectorConfig& c) {
  r.get("input_size", c.input_size);
  r.get("image_channels", c.image_channels);
  r.get("landmarks", c.landmarks);
  r.get("blocks", c.blocks);
  r.get("base_channels", c.base_channels);
  r.get("max_channels", c.max_channels);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr_start", c.lr_start);
  r.get("lr_end", c.lr_end);
  r.nested("adam", [&](StrictReader& a) {
    a.get("beta1", c.adam.beta1);
    a.get("beta2", c.adam.beta2);
    a.get("eps", c.adam.eps);
  });
  r.nested("augment", [&](StrictReader& a) {
    a.get("enabled", c.augment.enabled);
    a.get("max_rotation_deg", c.augment.max_rotation_deg);
    a.get("min_scale", c.augment.min_scale);
    a.get("max_scale", c.augment.max_scale);
    a.get("flip_probability", c.augment.flip_probability);
  });
}

inline DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  StrictReader r(j, "detector");
  read_config(r, c);
  r.finish();
  return c;
}

template <typename T>
class DetectorModel {
 public:
  DetectorModel(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::substream(seed, "init.detector");
    stem_ = nn::Conv2d<T>::make(params_, "stem", cfg_.image_channels, cfg_.channels_at(0), 3, 1, rng);
    for (int i = 1; i <= cfg_.blocks; ++i)
      blocks_.push_back(nn::ResidualDown<T>::make(params_, "block" + std::to_string(i), cfg_.channels_at(i - 1),
                                                  cfg_.channels_at(i), rng));
    const int r = cfg_.input_size >> cfg_.blocks;
    head_ = nn::Linear<T>::make(params_, "head", cfg_.channels_at(cfg_.blocks) * r * r, 2 * cfg_.landmarks, rng, 0.1);
  }

  const DetectorConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// Normalized coordinates (x0, y0, x1, y1, ...) for an image in [-1, 1].
  Var<T> forward(const Var<T>& image) const {
    require_shape(image->value, {cfg_.image_channels, cfg_.input_size, cfg_.input_size}, "detector input");
    Var<T> h = nn::leaky_relu(stem_(image));
    for (const auto& b : blocks_) h = b(h);
    h = nn::reshape(h, {static_cast<int>(h->value.size())});
    Tensor<T> centre({2 * cfg_.landmarks}, T(0.5));
    return nn::add(head_(h), nn::constant(std::move(centre)));
  }

  /// Landmarks in crop-frame pixels for an input-size image in [0, 1].
  LandmarkSet predict_crop(const Image& crop, const Scheme& scheme) const {
    nn::NoGradGuard guard;
    Tensor<T> x(crop.shape());
    for (std::size_t i = 0; i < crop.size(); ++i) x[i] = static_cast<T>(crop[i]) * T(2) - T(1);
    const auto out = forward(nn::constant(std::move(x)));
    std::vector<Point> pts(cfg_.landmarks);
    for (int l = 0; l < cfg_.landmarks; ++l)
      pts[l] = {static_cast<double>(out->value[2 * l]) * cfg_.input_size,
                static_cast<double>(out->value[2 * l + 1]) * cfg_.input_size};
    return LandmarkSet(scheme, std::move(pts));
  }

 private:
  DetectorConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Conv2d<T> stem_;
  std::vector<nn::ResidualDown<T>> blocks_;
  nn::Linear<T> head_;
};

/// Predicts landmarks for a sample in its own pixel frame: crop to the box,
/// run the network, map back through the inverse crop.
template <typename T>
LandmarkSet predict(const DetectorModel<T>& model, const Sample& s) {
  const auto& cfg = model.config();
  if (s.image.empty()) throw InvalidInput("sample '" + s.id + "' has no pixel data loaded");
  if (channels(s.image) != cfg.image_channels)
    throw InvalidInput("sample '" + s.id + "' has " + std::to_string(channels(s.image)) +
                       " channels, detector expects " + std::to_string(cfg.image_channels));
  if (static_cast<int>(s.landmarks.size()) != cfg.landmarks)
    throw InvalidInput("detector predicts " + std::to_string(cfg.landmarks) + " landmarks, sample '" + s.id +
                       "' has " + std::to_string(s.landmarks.size()));
  const auto crop = crop_and_resize(s.image, s.bbox, s.landmarks, cfg.input_size);
  return apply_transform(model.predict_crop(crop.image, s.landmarks.scheme()), crop.transform.inverse());
}

/// Mean squared error between predicted and target normalized coordinates.
template <typename T>
Var<T> detector_loss(const DetectorModel<T>& model, const Tensor<T>& image, const Tensor<T>& target) {
  return nn::mse(model.forward(nn::constant(image)), nn::constant(target));
}

// ---------------------------------------------------------------------------
// Training

template <typename T>
struct DetectorSample {
  Image crop;             // input_size frame, [0, 1]
  LandmarkSet landmarks;  // crop-frame pixels
};

/// Random rotation / scale about the crop centre, optionally mirrored.
struct AugmentDraw {
  AffineTransform transform;
  bool flip = false;
};

inline AugmentDraw draw_augment(const AffineAugment& a, int size, Rng& rng) {
  const double angle = rng.uniform(-a.max_rotation_deg, a.max_rotation_deg) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(a.min_scale, a.max_scale);
  const bool flip = rng.bernoulli(a.flip_probability);
  const double c = size / 2.0;
  AffineTransform t = AffineTransform::rotation_about({c, c}, angle, scale);
  // Mirror about the vertical centre line of pixel centres.
  if (flip) t = AffineTransform({-1, 0, size - 1.0, 0, 1, 0}).after(t);
  return {t, flip};
}

/// Applies an augmentation draw; flipped landmarks are re-indexed so left
/// and right keep their meaning.
inline DetectorSample<float> apply_augment(const DetectorSample<float>& s, const AugmentDraw& d) {
  const int size = height(s.crop);
  auto lm = apply_transform(s.landmarks, d.transform);
  if (d.flip) {
    const auto perm = flip_permutation(lm.scheme());
    if (!perm) throw InvalidInput("no flip permutation for scheme " + lm.scheme().name());
    std::vector<Point> pts(lm.size());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = lm[(*perm)[i]];
    lm = LandmarkSet(lm.scheme(), std::move(pts));
  }
  return {warp_image(s.crop, d.transform, size), std::move(lm)};
}

template <typename T>
Tensor<T> normalized_target(const LandmarkSet& lm, int size) {
  Tensor<T> t({static_cast<int>(2 * lm.size())});
  for (std::size_t i = 0; i < lm.size(); ++i) {
    t[2 * i] = static_cast<T>(lm[i].x / size);
    t[2 * i + 1] = static_cast<T>(lm[i].y / size);
  }
  return t;
}

struct DetectorEpochLog {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
};

template <typename T>
struct DetectorState {
  DetectorModel<T> model;
  nn::Adam<T> optimizer;
  int epoch = 0;
  Rng rng;
  std::vector<DetectorEpochLog> log;
};

template <typename T>
DetectorState<T> init_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  DetectorState<T> st{DetectorModel<T>(cfg, seed), {}, 0, Rng::substream(seed, "train.detector"), {}};
  st.optimizer = nn::Adam<T>(st.model.parameters(), cfg.adam);
  return st;
}

inline DetectorSample<float> prepare_detector_sample(const Sample& s, const DetectorConfig& cfg) {
  if (s.image.empty()) throw InvalidInput("sample '" + s.id + "' has no pixel data loaded");
  if (channels(s.image) != cfg.image_channels)
    throw InvalidInput("sample '" + s.id + "' has " + std::to_string(channels(s.image)) +
                       " channels, detector expects " + std::to_string(cfg.image_channels));
  auto crop = crop_and_resize(s.image, s.bbox, s.landmarks, cfg.input_size);
  return {std::move(crop.image), std::move(crop.landmarks)};
}

/// Trains on real ∪ synthetic with a fresh uniform shuffle every epoch.
template <typename T>
DetectorState<T> train_detector(const Dataset& real, const Dataset& synthetic, const DetectorConfig& cfg,
                                std::uint64_t seed,
                                const std::function<void(const DetectorEpochLog&)>& on_epoch = {}) {
  if (real.empty()) throw InvalidInput("detector training needs at least one real sample");
  if (!(real.scheme() == synthetic.scheme()))
    throw InvalidInput("real scheme " + real.scheme().name() + " does not match synthetic scheme " +
                       synthetic.scheme().name());
  if (static_cast<int>(real.scheme().count) != cfg.landmarks)
    throw ConfigError("detector.landmarks = " + std::to_string(cfg.landmarks) + " but the data has " +
                      std::to_string(real.scheme().count) + " landmarks");
  if (cfg.augment.enabled && cfg.augment.flip_probability > 0 && !flip_permutation(real.scheme()))
    throw ConfigError("flip augmentation has no permutation table for scheme " + real.scheme().name());

  std::vector<DetectorSample<float>> data;
  data.reserve(real.size() + synthetic.size());
  for (const auto& s : real) data.push_back(prepare_detector_sample(s, cfg));
  for (const auto& s : synthetic) data.push_back(prepare_detector_sample(s, cfg));

  auto state = init_detector<T>(cfg, seed);
  const long long per_epoch = (static_cast<long long>(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long long total = per_epoch * cfg.epochs;
  auto& params = state.model.parameters();
  std::vector<std::size_t> order(data.size());
  while (state.epoch < cfg.epochs) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.below(i)]);
    DetectorEpochLog log{state.epoch + 1, 0, 0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const T inv = T(1) / static_cast<T>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& base = data[order[k]];
        const auto s = cfg.augment.enabled ? apply_augment(base, draw_augment(cfg.augment, cfg.input_size, state.rng))
                                           : base;
        Tensor<T> x(s.crop.shape());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(s.crop[i]) * T(2) - T(1);
        auto loss = detector_loss(state.model, x, normalized_target<T>(s.landmarks, cfg.input_size));
        const double v = static_cast<double>(loss->value[0]);
        if (!std::isfinite(v))
          throw NumericalError("non-finite detector loss at epoch " + std::to_string(state.epoch + 1) + ", step " +
                               std::to_string(state.optimizer.steps()) + ", sample " + std::to_string(order[k]));
        nn::backward(nn::scale(loss, inv));
        log.loss += v;
      }
      if (!params.grads_finite())
        throw NumericalError("non-finite detector gradient at step " + std::to_string(state.optimizer.steps()));
      log.lr = nn::linear_lr(cfg.lr_start, cfg.lr_end, state.optimizer.steps(), total);
      state.optimizer.step(params, log.lr);
    }
    log.loss /= static_cast<double>(data.size());
    ++state.epoch;
    state.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kDetectorFormat = "detector";
inline constexpr int kDetectorVersion = 1;

template <typename T>
Container detector_checkpoint(const DetectorState<T>& st, std::uint64_t seed) {
  Container c;
  c.format = kDetectorFormat;
  c.version = kDetectorVersion;
  c.meta["config"] = to_json(st.model.config());
  c.meta["seed"] = seed;
  c.meta["epoch"] = st.epoch;
  c.meta["rng_state"] = st.rng.state();
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : st.log) log.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}});
  c.meta["log"] = log;
  for (const auto& [name, v] : st.model.parameters()) c.put("param/" + name, v->value);
  const auto& params = st.model.parameters();
  c.meta["optimizer_steps"] = st.optimizer.steps();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.put("adam.m/" + params.name(i), st.optimizer.first_moments()[i]);
    c.put("adam.v/" + params.name(i), st.optimizer.second_moments()[i]);
  }
  return c;
}

template <typename T>
DetectorState<T> detector_from_checkpoint(const Container& c) {
  c.expect_format(kDetectorFormat, kDetectorVersion);
  const auto cfg = detector_config_from_json(c.meta.at("config"));
  auto st = init_detector<T>(cfg, c.meta.at("seed").get<std::uint64_t>());
  auto& params = st.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = c.get<T>("param/" + params.name(i));
    if (t.shape() != params[i]->value.shape())
      throw InvalidInput("checkpoint tensor '" + params.name(i) + "' has shape " + shape_str(t.shape()) +
                         ", model expects " + shape_str(params[i]->value.shape()));
    params[i]->value = std::move(t);
    st.optimizer.first_moments()[i] = c.get_vector<double>("adam.m/" + params.name(i));
    st.optimizer.second_moments()[i] = c.get_vector<double>("adam.v/" + params.name(i));
  }
  st.optimizer.set_steps(c.meta.at("optimizer_steps").get<long long>());
  st.epoch = c.meta.at("epoch").get<int>();
  st.rng.set_state(c.meta.at("rng_state").get<std::string>());
  for (const auto& e : c.meta.at("log"))
    st.log.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("loss").get<double>()});
  return st;
}

}  // namespace stylealign
