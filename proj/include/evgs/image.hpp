#pragma once

#include <cstddef>
#include <vector>

namespace evgs {

/// Dense row-major image with interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& operator()(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double operator()(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels;
  }
  std::size_t size() const { return data.size(); }
};

/// Rec. 709 luminance of a 3-channel image; single-channel input is copied.
Image luminance(const Image& rgb);

/// Per-element power-law decode (sRGB-like gamma) and its inverse.
Image gamma_decode(const Image& img, double gamma = 2.2);
Image gamma_encode(const Image& img, double gamma = 2.2);

}  // namespace evgs
