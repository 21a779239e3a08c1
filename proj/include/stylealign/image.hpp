#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "stylealign/errors.hpp"
#include "stylealign/tensor.hpp"

namespace stylealign {

/// Channel-major image with intensities in [0, 1]: shape (C, H, W), C in {1, 3}.
using Image = Tensor<float>;

inline int channels(const Image& im) { return im.dim(0); }
inline int height(const Image& im) { return im.dim(1); }
inline int width(const Image& im) { return im.dim(2); }

/// Bilinear sample at continuous pixel coordinates (pixel centres at integers).
/// Samples outside the image read as zero.
inline float sample_bilinear(const Image& im, int c, double x, double y) {
  const int w = width(im), h = height(im);
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int xx, int yy) -> double {
    if (xx < 0 || yy < 0 || xx >= w || yy >= h) return 0.0;
    return im.at(c, yy, xx);
  };
  const double top = px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax;
  const double bot = px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax;
  return static_cast<float>(top * (1 - ay) + bot * ay);
}

/// Separable Gaussian blur with edge clamping. sigma <= 0 returns the input.
inline Image gaussian_blur(const Image& im, double sigma) {
  if (sigma <= 0.0) return im;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= norm;
  const int c = channels(im), h = height(im), w = width(im);
  Image tmp(im.shape()), out(im.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * im.at(ci, y, std::clamp(x + i, 0, w - 1));
        tmp.at(ci, y, x) = static_cast<float>(acc);
      }
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(ci, std::clamp(y + i, 0, h - 1), x);
        out.at(ci, y, x) = static_cast<float>(acc);
      }
  return out;
}

/// Rounds every intensity to the nearest of 256 levels, so the image survives
/// an 8-bit file round trip unchanged.
inline Image quantize8(const Image& im) {
  Image out(im.shape());
  for (std::size_t i = 0; i < im.size(); ++i)
    out[i] = static_cast<float>(std::lround(std::clamp(im[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

/// Writes binary PGM (1 channel) or PPM (3 channels).
inline void write_pnm(const std::string& path, const Image& im) {
  const int c = channels(im), h = height(im), w = width(im);
  if (c != 1 && c != 3) throw InvalidInput("write_pnm: unsupported channel count " + std::to_string(c));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < c; ++ci)
        buf[(static_cast<std::size_t>(y) * w + x) * c + ci] =
            static_cast<unsigned char>(std::lround(std::clamp(im.at(ci, y, x), 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path);
}

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || w <= 0 || h <= 0 || maxval != 255)
    throw IoError(path + ": not an 8-bit binary PGM/PPM file");
  in.get();
  const int c = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * c);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError(path + ": truncated pixel data");
  Image im({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < c; ++ci)
        im.at(ci, y, x) = static_cast<float>(buf[(static_cast<std::size_t>(y) * w + x) * c + ci]) / 255.0f;
  return im;
}

}  // namespace stylealign
