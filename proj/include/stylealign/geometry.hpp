#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stylealign/errors.hpp"
#include "stylealign/image.hpp"

namespace stylealign {

enum class SchemeKind { P68, P98, P29, P19, Synth };

/// Landmark index convention. Coordinates are (x right, y down) with the
/// origin at the centre of the top-left pixel.
struct Scheme {
  SchemeKind kind = SchemeKind::P68;
  int count = 68;

  static Scheme p68() { return {SchemeKind::P68, 68}; }
  static Scheme p98() { return {SchemeKind::P98, 98}; }
  static Scheme p29() { return {SchemeKind::P29, 29}; }
  static Scheme p19() { return {SchemeKind::P19, 19}; }
  static Scheme synth(int n) { return {SchemeKind::Synth, n}; }

  /// Picks the named scheme for a landmark count; anything else is SYNTH(n).
  static Scheme for_count(int n) {
    switch (n) {
      case 68: return p68();
      case 98: return p98();
      case 29: return p29();
      case 19: return p19();
      default: return synth(n);
    }
  }

  std::string name() const {
    switch (kind) {
      case SchemeKind::P68: return "P68";
      case SchemeKind::P98: return "P98";
      case SchemeKind::P29: return "P29";
      case SchemeKind::P19: return "P19";
      case SchemeKind::Synth: return "SYNTH(" + std::to_string(count) + ")";
    }
    return "?";
  }

  static Scheme parse(const std::string& s) {
    if (s == "P68") return p68();
    if (s == "P98") return p98();
    if (s == "P29") return p29();
    if (s == "P19") return p19();
    if (s.rfind("SYNTH(", 0) == 0 && s.size() > 7 && s.back() == ')') {
      try {
        const int n = std::stoi(s.substr(6, s.size() - 7));
        if (n > 0) return synth(n);
      } catch (const std::exception&) {
      }
    }
    throw InvalidInput("unknown landmark scheme '" + s + "'");
  }

  bool operator==(const Scheme&) const = default;
};

struct Point {
  double x = 0.0, y = 0.0;
  bool operator==(const Point&) const = default;
};

class LandmarkSet {
 public:
  LandmarkSet() = default;
  LandmarkSet(Scheme scheme, std::vector<Point> points) : scheme_(scheme), points_(std::move(points)) {
    if (static_cast<int>(points_.size()) != scheme_.count)
      throw InvalidInput("scheme " + scheme_.name() + " expects " + std::to_string(scheme_.count) +
                         " landmarks, got " + std::to_string(points_.size()));
    for (const auto& p : points_)
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InvalidInput("landmark coordinate is not finite");
  }

  const Scheme& scheme() const { return scheme_; }
  const std::vector<Point>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }

  bool operator==(const LandmarkSet&) const = default;

 private:
  Scheme scheme_{Scheme::synth(0)};
  std::vector<Point> points_;
};

class BoundingBox {
 public:
  BoundingBox() = default;
  BoundingBox(double x_min, double y_min, double x_max, double y_max)
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
    if (!(x_min < x_max) || !(y_min < y_max))
      throw InvalidInput("degenerate bounding box (" + std::to_string(x_min) + ", " + std::to_string(y_min) +
                         ", " + std::to_string(x_max) + ", " + std::to_string(y_max) + ")");
  }
  double x_min() const { return x_min_; }
  double y_min() const { return y_min_; }
  double x_max() const { return x_max_; }
  double y_max() const { return y_max_; }
  double width() const { return x_max_ - x_min_; }
  double height() const { return y_max_ - y_min_; }

  bool operator==(const BoundingBox&) const = default;

 private:
  double x_min_ = 0.0, y_min_ = 0.0, x_max_ = 1.0, y_max_ = 1.0;
};

/// Row-major 2x3 affine map: [x'; y'] = A [x; y] + t.
class AffineTransform {
 public:
  AffineTransform() = default;
  explicit AffineTransform(std::array<double, 6> m) : m_(m) {
    if (std::abs(determinant()) < 1e-300 || !std::isfinite(determinant()))
      throw InvalidInput("affine transform is not invertible");
  }

  static AffineTransform identity() { return AffineTransform(); }
  static AffineTransform translation(double dx, double dy) { return AffineTransform({1, 0, dx, 0, 1, dy}); }
  static AffineTransform scaling(double sx, double sy) { return AffineTransform({sx, 0, 0, 0, sy, 0}); }
  /// Rotation by `radians` and uniform `scale` about `center`.
  static AffineTransform rotation_about(Point center, double radians, double scale) {
    const double c = std::cos(radians) * scale, s = std::sin(radians) * scale;
    return AffineTransform({c, -s, center.x - c * center.x + s * center.y,  //
                            s, c, center.y - s * center.x - c * center.y});
  }

  double determinant() const { return m_[0] * m_[4] - m_[1] * m_[3]; }
  const std::array<double, 6>& matrix() const { return m_; }
  bool operator==(const AffineTransform&) const = default;

  Point apply(Point p) const {
    return {m_[0] * p.x + m_[1] * p.y + m_[2], m_[3] * p.x + m_[4] * p.y + m_[5]};
  }

  AffineTransform inverse() const {
    const double d = determinant();
    const double a = m_[4] / d, b = -m_[1] / d, c = -m_[3] / d, e = m_[0] / d;
    return AffineTransform({a, b, -(a * m_[2] + b * m_[5]), c, e, -(c * m_[2] + e * m_[5])});
  }

  /// (this ∘ other): apply `other` first.
  AffineTransform after(const AffineTransform& o) const {
    const auto& a = m_;
    const auto& b = o.m_;
    return AffineTransform({a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
                            a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4],
                            a[3] * b[2] + a[4] * b[5] + a[5]});
  }

 private:
  std::array<double, 6> m_{1, 0, 0, 0, 1, 0};
};

inline LandmarkSet apply_transform(const LandmarkSet& landmarks, const AffineTransform& t) {
  std::vector<Point> pts;
  pts.reserve(landmarks.size());
  for (const auto& p : landmarks.points()) pts.push_back(t.apply(p));
  return LandmarkSet(landmarks.scheme(), std::move(pts));
}

/// Resamples `image` into a size x size frame via the inverse of `t` (bilinear, zero outside).
inline Image warp_image(const Image& image, const AffineTransform& t, int size) {
  const AffineTransform inv = t.inverse();
  const int c = channels(image);
  Image out({c, size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Point src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (int ci = 0; ci < c; ++ci) out.at(ci, y, x) = sample_bilinear(image, ci, src.x, src.y);
    }
  return out;
}

/// Maps box coordinates onto a size x size frame: x' = (x - x_min) * size / width.
inline AffineTransform crop_transform(const BoundingBox& bbox, int size) {
  const double sx = size / bbox.width(), sy = size / bbox.height();
  return AffineTransform({sx, 0.0, -bbox.x_min() * sx, 0.0, sy, -bbox.y_min() * sy});
}

struct CropResult {
  Image image;
  LandmarkSet landmarks;
  AffineTransform transform;
};

/// Crops `bbox` out of `image` and scales it to size x size. The returned
/// transform maps source coordinates to crop coordinates.
inline CropResult crop_and_resize(const Image& image, const BoundingBox& bbox, const LandmarkSet& landmarks,
                                  int size = 256) {
  if (size <= 0) throw InvalidInput("crop size must be positive");
  if (bbox.width() <= 0.0 || bbox.height() <= 0.0) throw InvalidInput("degenerate bounding box");
  if (bbox.x_max() <= 0.0 || bbox.y_max() <= 0.0 || bbox.x_min() >= width(image) ||
      bbox.y_min() >= height(image))
    throw InvalidInput("bounding box does not intersect the image");
  const AffineTransform t = crop_transform(bbox, size);
  const bool identity = t == AffineTransform::identity() && width(image) == size && height(image) == size;
  return {identity ? image : warp_image(image, t, size), apply_transform(landmarks, t), t};
}

/// One Gaussian response map per landmark, shape (L, H, W).
struct HeatmapStack {
  Tensor<float> maps;
  double sigma = 1.5;

  int channels() const { return maps.dim(0); }
  int height() const { return maps.dim(1); }
  int width() const { return maps.dim(2); }
};

/// Channel i holds exp(-d^2 / (2 sigma^2)) at each pixel centre, with the
/// nearest pixel to the landmark pinned to exactly 1. Landmarks whose nearest
/// pixel falls outside the map give an all-zero channel.
inline HeatmapStack render_heatmaps(const LandmarkSet& landmarks, int height, int width, double sigma = 1.5) {
  if (!(sigma > 0.0)) throw InvalidInput("heatmap sigma must be positive");
  if (height <= 0 || width <= 0) throw InvalidInput("heatmap size must be positive");
  const int l = static_cast<int>(landmarks.size());
  HeatmapStack hm{Tensor<float>({l, height, width}), sigma};
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < l; ++i) {
    const Point p = landmarks[i];
    const long px = std::lround(p.x), py = std::lround(p.y);
    if (px < 0 || py < 0 || px >= width || py >= height) continue;
    for (int y = 0; y < height; ++y) {
      const double dy = y - p.y;
      for (int x = 0; x < width; ++x) {
        const double dx = x - p.x;
        hm.maps.at(i, y, x) = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2));
      }
    }
    hm.maps.at(i, static_cast<int>(py), static_cast<int>(px)) = 1.0f;
  }
  return hm;
}

/// Heatmaps for landmarks given in image_size pixel coordinates, rendered at a
/// (possibly lower) heatmap resolution.
inline HeatmapStack heatmaps_for(const LandmarkSet& landmarks, int image_size, int heatmap_size, double sigma) {
  if (image_size == heatmap_size) return render_heatmaps(landmarks, heatmap_size, heatmap_size, sigma);
  const double s = static_cast<double>(heatmap_size) / image_size;
  return render_heatmaps(apply_transform(landmarks, AffineTransform::scaling(s, s)), heatmap_size, heatmap_size,
                         sigma);
}

/// Left/right mirror permutation for horizontal flips, or nullopt when the
/// scheme has no table.
inline std::optional<std::vector<int>> flip_permutation(const Scheme& scheme) {
  std::vector<int> perm(scheme.count);
  for (int i = 0; i < scheme.count; ++i) perm[i] = i;
  auto pair = [&](int a, int b) {
    perm[a] = b;
    perm[b] = a;
  };
  switch (scheme.kind) {
    case SchemeKind::P68:
      for (int i = 0; i < 8; ++i) pair(i, 16 - i);            // jaw
      for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);       // brows
      pair(31, 35), pair(32, 34);                             // nostrils
      pair(36, 45), pair(37, 44), pair(38, 43), pair(39, 42), pair(40, 47), pair(41, 46);
      pair(48, 54), pair(49, 53), pair(50, 52), pair(55, 59), pair(56, 58);
      pair(60, 64), pair(61, 63), pair(65, 67);
      return perm;
    case SchemeKind::P98:
      for (int i = 0; i < 16; ++i) pair(i, 32 - i);
      pair(33, 46), pair(34, 45), pair(35, 44), pair(36, 43), pair(37, 42);
      pair(38, 50), pair(39, 49), pair(40, 48), pair(41, 47);
      pair(55, 59), pair(56, 58);
      pair(60, 72), pair(61, 71), pair(62, 70), pair(63, 69), pair(64, 68), pair(65, 75), pair(66, 74),
          pair(67, 73);
      pair(76, 82), pair(77, 81), pair(78, 80), pair(83, 87), pair(84, 86);
      pair(88, 92), pair(89, 91), pair(93, 95);
      pair(96, 97);
      return perm;
    case SchemeKind::Synth:
      if (scheme.count != 10) return std::nullopt;
      // eye centres, outer corners, inner corners, mouth corners; mouth centre and chin stay.
      pair(0, 1), pair(2, 5), pair(3, 4), pair(6, 7);
      return perm;
    default:
      return std::nullopt;
  }
}

}  // namespace stylealign
