#pragma once

#include "evgs/image.hpp"

namespace evgs {

inline constexpr double kMaxPsnr = 100.0;

/// 10 log10(1 / MSE) over all channels, for images in [0, 1]; capped for near-identical inputs.
double psnr(const Image& a, const Image& b);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) and the usual K1 = 0.01, K2 = 0.03 for a
/// unit dynamic range, averaged over channels. Window taps outside the image are dropped.
double ssim(const Image& a, const Image& b);

}  // namespace evgs
