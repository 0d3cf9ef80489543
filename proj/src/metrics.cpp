#include "evgs/metrics.hpp"

#include <array>
#include <cmath>

#include "evgs/errors.hpp"

namespace evgs {

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Shape, "PSNR needs equally shaped images");
  if (a.size() == 0) throw Error(ErrorKind::Shape, "PSNR of empty images");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse < 1e-10) return kMaxPsnr;
  return std::min(kMaxPsnr, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Shape, "SSIM needs equally shaped images");
  if (a.size() == 0) throw Error(ErrorKind::Shape, "SSIM of empty images");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::array<double, 2 * kRadius + 1> kernel{};
  for (int i = -kRadius; i <= kRadius; ++i) kernel[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));

  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < a.width; ++x) {
        double w_sum = 0.0, ma = 0.0, mb = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
        for (int dy = -kRadius; dy <= kRadius; ++dy) {
          for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const int xx = x + dx, yy = y + dy;
            if (!a.contains(xx, yy)) continue;
            const double w = kernel[dx + kRadius] * kernel[dy + kRadius];
            const double va = a(xx, yy, c), vb = b(xx, yy, c);
            w_sum += w;
            ma += w * va;
            mb += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        }
        ma /= w_sum;
        mb /= w_sum;
        const double va = aa / w_sum - ma * ma, vb = bb / w_sum - mb * mb, cov = ab / w_sum - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
  }
  return total / static_cast<double>(a.size());
}

}  // namespace evgs
