#pragma once

// Style translation: render one face's structure with another face's style
// code, and the augmentation builder that does this k times per sample.

#include <cstdio>
#include <string>
#include <vector>

#include "stylealign/disentangler.hpp"

namespace stylealign {

struct AugmentConfig {
  int k = 8;
  /// Only donor policy: uniform over the other n - 1 samples, no repeats per recipient.
  std::string donor_sampling = "uniform_without_replacement_excluding_self";
  bool use_posterior_mean = true;
  /// Encode the donor image against the recipient's heatmaps instead of its own.
  bool eq4_literal = false;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const AugmentConfig& c) {
  return {{"k", c.k},
          {"donor_sampling", c.donor_sampling},
          {"use_posterior_mean", c.use_posterior_mean},
          {"eq4_literal", c.eq4_literal}};
}

inline void read_config(StrictReader& r, AugmentConfig& c) {
  r.get("k", c.k);
  r.get("donor_sampling", c.donor_sampling);
  r.get("use_posterior_mean", c.use_posterior_mean);
  r.get("eq4_literal", c.eq4_literal);
  if (c.donor_sampling != "uniform_without_replacement_excluding_self")
    throw ConfigError("unsupported donor_sampling '" + c.donor_sampling + "'");
  if (c.k < 0) throw ConfigError("augment.k must be non-negative");
}

template <typename T>
struct Translation {
  Image image;                      // model frame, [0, 1]
  StyleCode<T> style;               // donor code that was rendered
  StructureFeatures<T> structure;   // recipient features the renderer consumed
};

/// x_ij = render(style(x_j), structure(y_i)) in the model's crop frame.
template <typename T>
Translation<T> translate_style(const Disentangler<T>& model, const Sample& donor, const Sample& recipient,
                               bool use_posterior_mean, Rng& rng, bool eq4_literal = false) {
  if (!(donor.landmarks.scheme() == recipient.landmarks.scheme()))
    throw InvalidInput("donor scheme " + donor.landmarks.scheme().name() + " does not match recipient scheme " +
                       recipient.landmarks.scheme().name());
  const auto& cfg = model.config();
  const auto d = prepare_sample<T>(donor, cfg);
  // The recipient contributes landmarks only; its pixels are never read.
  const auto r_crop = apply_transform(
      recipient.landmarks, crop_transform(recipient.bbox, cfg.image_size));
  const auto r_heat = heatmap_tensor<T>(heatmaps_for(r_crop, cfg.image_size, cfg.heatmap_size, cfg.heatmap_sigma));

  const auto posterior = model.encode_style(d.image, eq4_literal ? r_heat : d.heatmaps);
  Translation<T> out;
  out.style = use_posterior_mean ? StyleCode<T>{posterior.mu} : sample_posterior(posterior, rng);
  out.structure = model.encode_structure(r_heat);
  out.image = to_image(model.render(out.style, out.structure));
  return out;
}

/// Deterministic reconstruction of one sample through the posterior mean, in
/// the model's crop frame.
template <typename T>
Image reconstruct_sample(const Disentangler<T>& model, const Sample& s) {
  const auto p = prepare_sample<T>(s, model.config());
  return to_image(model.reconstruct(p.image, p.heatmaps));
}

/// Places a crop-frame rendering back into a frame shaped like `like`, so the
/// recipient's landmarks and box apply to it unchanged. Pixels outside the box
/// are zero.
inline Image paste_into_frame(const Image& crop, const BoundingBox& bbox, const Image& like) {
  const int size = height(crop);
  const int w = like.empty() ? size : width(like), h = like.empty() ? size : height(like);
  const AffineTransform t = crop_transform(bbox, size);
  if (t == AffineTransform::identity() && w == size && h == size) return crop;
  Image out({channels(crop), h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x < bbox.x_min() || x > bbox.x_max() || y < bbox.y_min() || y > bbox.y_max()) continue;
      const Point p = t.apply({static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < channels(crop); ++c) out.at(c, y, x) = sample_bilinear(crop, c, p.x, p.y);
    }
  return out;
}

/// For each recipient, k distinct donor indices drawn uniformly from the other
/// n - 1 samples.
inline std::vector<std::vector<std::size_t>> assign_donors(std::size_t n, int k, Rng& rng) {
  if (k < 0) throw ConfigError("k must be non-negative");
  if (k > 0 && (n < 2 || static_cast<std::size_t>(k) > n - 1))
    throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(n == 0 ? 0 : n - 1) +
                      " available donors per sample");
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n && k > 0; ++i) {
    pool.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) pool.push_back(j);
    for (int m = 0; m < k; ++m) {
      const std::size_t pick = m + rng.below(pool.size() - m);
      std::swap(pool[m], pool[pick]);
      out[i].push_back(pool[m]);
    }
  }
  return out;
}

inline std::string synthetic_id(const std::string& recipient, const std::string& donor) {
  return recipient + "__style_" + donor;
}

/// k * n synthetic samples. Images are quantized to 8 bits so the in-memory
/// copy matches what is written to disk.
template <typename T>
Dataset augment_dataset(const Disentangler<T>& model, const Dataset& dataset, const AugmentConfig& cfg,
                        const std::string& checkpoint_hash = {}) {
  Rng donor_rng = Rng::substream(cfg.seed, "augment.donors");
  const auto donors = assign_donors(dataset.size(), cfg.k, donor_rng);
  Rng sample_rng = Rng::substream(cfg.seed, "augment.sampling");
  Dataset out(dataset.scheme());
  const std::string ext = model.config().image_channels == 1 ? ".pgm" : ".ppm";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& r = dataset[i];
    for (std::size_t j : donors[i]) {
      const Sample& d = dataset[j];
      auto tr = translate_style(model, d, r, cfg.use_posterior_mean, sample_rng, cfg.eq4_literal);
      Sample s;
      s.id = synthetic_id(r.id, d.id);
      s.image_path = "images/" + s.id + ext;
      s.landmarks = r.landmarks;
      s.bbox = r.bbox;
      s.attributes = r.attributes;
      s.synthetic = true;
      s.style_donor = d.id;
      s.recipient = r.id;
      if (!checkpoint_hash.empty()) s.checkpoint_hash = checkpoint_hash;
      s.image = quantize8(paste_into_frame(tr.image, r.bbox, r.image));
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace stylealign
