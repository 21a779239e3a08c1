#pragma once

// Procedural "faces" with independently sampled structure and style factors.
// Landmarks are an exact function of the structure factors; the style factors
// only change appearance. This gives a small benchmark where disentanglement
// and annotation preservation can be checked against ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "stylealign/datasets.hpp"
#include "stylealign/rng.hpp"

namespace stylealign {

inline constexpr int kSynthLandmarks = 10;

/// Geometry of one face, in pixels (centre, radii) or relative units.
struct StructureFactors {
  double center_x = 0, center_y = 0;  // pixels
  double radius_x = 0, radius_y = 0;  // pixels
  double eye_spacing = 0;             // eye centre offset from the midline, in units of radius_x
  double eye_height = 0;              // eye line above the centre, in units of radius_y
  double mouth_width = 0;             // full mouth width, in units of radius_x
  double mouth_curvature = 0;         // -1 (frown) .. 1 (smile)

  static constexpr std::array<const char*, 8> names = {"center_x",    "center_y",   "radius_x",    "radius_y",
                                                       "eye_spacing", "eye_height", "mouth_width", "mouth_curvature"};
  std::array<double, 8> values() const {
    return {center_x, center_y, radius_x, radius_y, eye_spacing, eye_height, mouth_width, mouth_curvature};
  }
};

struct StyleFactors {
  double background_r = 0, background_g = 0, background_b = 0;  // [0.05, 0.95]
  double light_angle = 0;                                        // radians, [0, 2 pi)
  double light_strength = 0;                                     // [0, 0.6]
  double noise_std = 0;                                          // [0, 0.08]
  double blur_sigma = 0;                                         // pixels, [0, 1.2]
  double occluder_x = 0;                                         // [0, 1], left to right across the face
  double occluder_gray = 0;                                      // [0.2, 0.8]
  bool occluder = false;

  static constexpr std::array<const char*, 10> names = {
      "background_r", "background_g", "background_b", "light_angle",   "light_strength",
      "noise_std",    "blur_sigma",   "occluder_x",   "occluder_gray", "occluder"};
  std::array<double, 10> values() const {
    return {background_r, background_g, background_b, light_angle,   light_strength,
            noise_std,    blur_sigma,   occluder_x,   occluder_gray, occluder ? 1.0 : 0.0};
  }
};

struct SynthFactors {
  StructureFactors structure;
  StyleFactors style;
};

inline StructureFactors sample_structure(Rng& rng, int size) {
  const double s = size;
  StructureFactors f;
  f.center_x = s / 2 + rng.uniform(-0.08, 0.08) * s;
  f.center_y = s / 2 + rng.uniform(-0.06, 0.06) * s;
  f.radius_x = rng.uniform(0.24, 0.32) * s;
  f.radius_y = rng.uniform(0.32, 0.40) * s;
  f.eye_spacing = rng.uniform(0.35, 0.55);
  f.eye_height = rng.uniform(0.15, 0.40);
  f.mouth_width = rng.uniform(0.5, 0.9);
  f.mouth_curvature = rng.uniform(-1.0, 1.0);
  return f;
}

inline StyleFactors sample_style(Rng& rng) {
  StyleFactors f;
  f.background_r = rng.uniform(0.05, 0.95);
  f.background_g = rng.uniform(0.05, 0.95);
  f.background_b = rng.uniform(0.05, 0.95);
  f.light_angle = rng.uniform(0.0, 2.0 * M_PI);
  f.light_strength = rng.uniform(0.0, 0.6);
  f.noise_std = rng.uniform(0.0, 0.08);
  f.blur_sigma = rng.uniform(0.0, 1.2);
  f.occluder_x = rng.uniform(0.0, 1.0);
  f.occluder_gray = rng.uniform(0.2, 0.8);
  f.occluder = rng.bernoulli(0.3);
  return f;
}

namespace detail {
inline double synth_eye_radius(const StructureFactors& f) { return 0.12 * f.radius_x; }
inline double synth_mouth_y(const StructureFactors& f) { return f.center_y + 0.5 * f.radius_y; }
inline double synth_mouth_bend(const StructureFactors& f) { return f.mouth_curvature * 0.12 * f.radius_y; }
}  // namespace detail

/// Landmark order: eye centres (left, right), left eye outer/inner corner,
/// right eye inner/outer corner, mouth corners (left, right), mouth centre, chin.
inline LandmarkSet synth_landmarks(const StructureFactors& f) {
  const double r = detail::synth_eye_radius(f);
  const double ey = f.center_y - f.eye_height * f.radius_y;
  const double lx = f.center_x - f.eye_spacing * f.radius_x;
  const double rx = f.center_x + f.eye_spacing * f.radius_x;
  const double my = detail::synth_mouth_y(f);
  const double hw = 0.5 * f.mouth_width * f.radius_x;
  std::vector<Point> p = {
      {lx, ey},     {rx, ey},     {lx - r, ey},
      {lx + r, ey}, {rx - r, ey}, {rx + r, ey},
      {f.center_x - hw, my},      {f.center_x + hw, my},
      {f.center_x, my + detail::synth_mouth_bend(f)},
      {f.center_x, f.center_y + f.radius_y},
  };
  return LandmarkSet(Scheme::synth(kSynthLandmarks), std::move(p));
}

/// Renders a face. `noise_rng` only feeds the pixel noise.
inline Image render_synth_face(const StructureFactors& sf, const StyleFactors& st, int size, int channels,
                               Rng& noise_rng) {
  const std::array<double, 3> bg = {st.background_r, st.background_g, st.background_b};
  const std::array<double, 3> skin = {0.90, 0.72, 0.58};
  const std::array<double, 3> eye = {0.08, 0.08, 0.12};
  const std::array<double, 3> lips = {0.60, 0.12, 0.16};
  const double er = detail::synth_eye_radius(sf);
  const double ey = sf.center_y - sf.eye_height * sf.radius_y;
  const double lex = sf.center_x - sf.eye_spacing * sf.radius_x;
  const double rex = sf.center_x + sf.eye_spacing * sf.radius_x;
  const double my = detail::synth_mouth_y(sf);
  const double hw = 0.5 * sf.mouth_width * sf.radius_x;
  const double bend = detail::synth_mouth_bend(sf);
  const double occ_w = 0.8 * sf.radius_x, occ_h = 0.75 * sf.radius_y;
  const double occ_cx = sf.center_x + (2.0 * st.occluder_x - 1.0) * 0.6 * sf.radius_x;
  const double occ_cy = sf.center_y + 0.05 * sf.radius_y;
  const double half = size / 2.0;

  auto coverage = [](double signed_dist) { return std::clamp(0.5 - signed_dist, 0.0, 1.0); };

  Image rgb({3, size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> c = bg;
      auto blend = [&](const std::array<double, 3>& col, double a) {
        for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - a) + col[k] * a;
      };
      const double dx = (x - sf.center_x) / sf.radius_x, dy = (y - sf.center_y) / sf.radius_y;
      blend(skin, coverage((std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(sf.radius_x, sf.radius_y)));
      for (double ex : {lex, rex}) blend(eye, coverage(std::hypot(x - ex, y - ey) - er));
      if (std::abs(x - sf.center_x) <= hw + 1.0) {
        const double t = std::clamp((x - sf.center_x) / hw, -1.0, 1.0);
        const double curve_y = my + bend * (1.0 - t * t);
        const double along = std::max(0.0, std::abs(x - sf.center_x) - hw);
        blend(lips, coverage(std::hypot(along, y - curve_y) - 1.1));
      }
      if (st.occluder) {
        const double ox = std::abs(x - occ_cx) - occ_w / 2, oy = std::abs(y - occ_cy) - occ_h / 2;
        blend({st.occluder_gray, st.occluder_gray, st.occluder_gray}, coverage(std::max(ox, oy)));
      }
      const double light =
          1.0 + st.light_strength * ((x - half) * std::cos(st.light_angle) + (y - half) * std::sin(st.light_angle)) / half;
      for (int k = 0; k < 3; ++k) rgb.at(k, y, x) = static_cast<float>(c[k] * light);
    }
  }
  rgb = gaussian_blur(rgb, st.blur_sigma);

  Image out({channels, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (channels == 1) {
        const double lum = 0.299 * rgb.at(0, y, x) + 0.587 * rgb.at(1, y, x) + 0.114 * rgb.at(2, y, x);
        out.at(0, y, x) = static_cast<float>(lum + st.noise_std * noise_rng.normal());
      } else {
        for (int k = 0; k < 3; ++k)
          out.at(k, y, x) = static_cast<float>(rgb.at(k, y, x) + st.noise_std * noise_rng.normal());
      }
    }
  return quantize8(out);
}

/// Attribute flags derived from the style factors, so per-subset reports have
/// something to split on.
inline AttributeSet synth_attributes(const StyleFactors& st) {
  AttributeSet a;
  if (st.occluder) a.set(static_cast<int>(Attribute::Occlusion));
  if (st.blur_sigma > 0.8) a.set(static_cast<int>(Attribute::Blur));
  if (st.light_strength > 0.45) a.set(static_cast<int>(Attribute::Illumination));
  return a;
}

struct SynthDataset {
  Dataset dataset;
  std::vector<SynthFactors> factors;
};

inline std::string synth_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth_%05zu", i);
  return buf;
}

/// n faces with images held in memory; image paths point at images/<id>.ppm.
inline SynthDataset generate_synth_dataset(int n, int image_size, std::uint64_t seed, int channels = 3) {
  if (n <= 0) throw InvalidInput("synthetic dataset size must be positive");
  if (image_size < 16) throw InvalidInput("synthetic image size must be at least 16");
  if (channels != 1 && channels != 3) throw InvalidInput("synthetic images have 1 or 3 channels");
  Rng structure_rng = Rng::substream(seed, "synth.structure");
  Rng style_rng = Rng::substream(seed, "synth.style");
  SynthDataset out{Dataset(Scheme::synth(kSynthLandmarks)), {}};
  for (int i = 0; i < n; ++i) {
    SynthFactors f{sample_structure(structure_rng, image_size), sample_style(style_rng)};
    Rng noise = Rng::substream(seed + static_cast<std::uint64_t>(i), "synth.noise");
    Sample s;
    s.id = synth_id(static_cast<std::size_t>(i));
    s.image_path = (channels == 1 ? "images/" + s.id + ".pgm" : "images/" + s.id + ".ppm");
    s.landmarks = synth_landmarks(f.structure);
    s.bbox = BoundingBox(0, 0, image_size, image_size);
    s.attributes = synth_attributes(f.style);
    s.image = render_synth_face(f.structure, f.style, image_size, channels, noise);
    out.dataset.push_back(std::move(s));
    out.factors.push_back(f);
  }
  return out;
}

/// CSV sidecar with one column per factor.
inline std::string factors_csv(const Dataset& ds, const std::vector<SynthFactors>& factors) {
  std::string out = "id";
  for (const char* n : StructureFactors::names) out += std::string(",") + n;
  for (const char* n : StyleFactors::names) out += std::string(",") + n;
  out += "\n";
  for (std::size_t i = 0; i < factors.size(); ++i) {
    out += ds[i].id;
    for (double v : factors[i].structure.values()) out += "," + format_number(v, 0);
    for (double v : factors[i].style.values()) out += "," + format_number(v, 0);
    out += "\n";
  }
  return out;
}

}  // namespace stylealign
