#include "evgs/image.hpp"

#include <algorithm>
#include <cmath>

#include "evgs/errors.hpp"

namespace evgs {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BehindCamera: return "behind_camera";
    case ErrorKind::InvalidDepth: return "invalid_depth";
    case ErrorKind::InvalidInterval: return "invalid_interval";
    case ErrorKind::InsufficientInput: return "insufficient_input";
    case ErrorKind::Ordering: return "ordering";
    case ErrorKind::InvalidBins: return "invalid_bins";
    case ErrorKind::Size: return "size";
    case ErrorKind::Config: return "config";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::State: return "state";
    case ErrorKind::Extrapolation: return "extrapolation";
    case ErrorKind::TrainingFailure: return "training_failure";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
  }
  return "unknown";
}

Image luminance(const Image& rgb) {
  if (rgb.channels == 1) return rgb;
  if (rgb.channels != 3) throw Error(ErrorKind::Shape, "luminance expects 1 or 3 channels");
  Image out(rgb.width, rgb.height, 1);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      out(x, y) = 0.2126 * rgb(x, y, 0) + 0.7152 * rgb(x, y, 1) + 0.0722 * rgb(x, y, 2);
    }
  }
  return out;
}

Image gamma_decode(const Image& img, double gamma) {
  Image out = img;
  for (double& v : out.data) v = std::pow(std::clamp(v, 0.0, 1.0), gamma);
  return out;
}

Image gamma_encode(const Image& img, double gamma) {
  Image out = img;
  for (double& v : out.data) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / gamma);
  return out;
}

}  // namespace evgs
