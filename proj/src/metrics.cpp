#include "nvsd/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace nvsd {

float psnr(const Image& a, const Image& b) {
  if (a.res != b.res || a.chw.size() != b.chw.size())
    throw std::invalid_argument("psnr: image shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.chw.size(); ++i) {
    double d = double(a.chw[i]) - b.chw[i];
    acc += d * d;
  }
  double mse = acc / a.chw.size();
  if (mse <= 0.0) return 99.0f;
  float db = static_cast<float>(10.0 * std::log10(1.0 / mse));
  return db > 99.0f ? 99.0f : db;
}

namespace {
std::vector<double> luminance(const Image& im) {
  const int n = im.res * im.res;
  std::vector<double> l(n);
  for (int i = 0; i < n; ++i)
    l[i] = (double(im.chw[i]) + im.chw[n + i] + im.chw[2 * n + i]) / 3.0;
  return l;
}
}  // namespace

float ssim(const Image& a, const Image& b) {
  if (a.res != b.res || a.chw.size() != b.chw.size())
    throw std::invalid_argument("ssim: image shapes differ");
  constexpr int W = 7;
  if (a.res < W) throw std::invalid_argument("ssim: image smaller than window");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int res = a.res;
  std::vector<double> la = luminance(a), lb = luminance(b);
  double total = 0.0;
  int windows = 0;
  for (int y = 0; y + W <= res; ++y)
    for (int x = 0; x + W <= res; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < W; ++dy)
        for (int dx = 0; dx < W; ++dx) {
          double va = la[(y + dy) * res + x + dx];
          double vb = lb[(y + dy) * res + x + dx];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double n = W * W;
      double mu_a = sa / n, mu_b = sb / n;
      double var_a = saa / n - mu_a * mu_a;
      double var_b = sbb / n - mu_b * mu_b;
      double cov = sab / n - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
               ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
      ++windows;
    }
  return static_cast<float>(total / windows);
}

}  // namespace nvsd
