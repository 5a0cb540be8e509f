#include "semlink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace semlink {

namespace {

void check_shapes(const ImageTensor& a, const ImageTensor& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument("metrics: image shape mismatch");
}

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

std::vector<double> gaussian_window() {
  std::vector<double> w(kWin * kWin);
  double sum = 0.0;
  int r = kWin / 2;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      double v = std::exp(-(y * y + x * x) / (2.0 * kWinSigma * kWinSigma));
      w[(y + r) * kWin + (x + r)] = v;
      sum += v;
    }
  for (double& v : w) v /= sum;
  return w;
}

double ssim_formula(double mu_x, double mu_y, double var_x, double var_y, double cov) {
  return ((2.0 * mu_x * mu_y + kC1) * (2.0 * cov + kC2)) /
         ((mu_x * mu_x + mu_y * mu_y + kC1) * (var_x + var_y + kC2));
}

// SSIM over the rectangle [y0,y1)x[x0,x1) of one channel.
double ssim_region(const ImageTensor& a, const ImageTensor& b, int c, int y0, int x0, int y1,
                   int x1) {
  static const std::vector<double> win = gaussian_window();
  int h = y1 - y0, w = x1 - x0;
  if (h < kWin || w < kWin) {
    // Region smaller than the window: single global-statistics window.
    double mx = 0, my = 0;
    int n = h * w;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        mx += a.at(y, x, c);
        my += b.at(y, x, c);
      }
    mx /= n;
    my /= n;
    double vx = 0, vy = 0, cov = 0;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        double dx = a.at(y, x, c) - mx, dy = b.at(y, x, c) - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
      }
    vx /= n;
    vy /= n;
    cov /= n;
    return ssim_formula(mx, my, vx, vy, cov);
  }

  double total = 0.0;
  long count = 0;
  for (int y = y0; y + kWin <= y1; ++y) {
    for (int x = x0; x + kWin <= x1; ++x) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int wy = 0; wy < kWin; ++wy)
        for (int wx = 0; wx < kWin; ++wx) {
          double g = win[wy * kWin + wx];
          double va = a.at(y + wy, x + wx, c);
          double vb = b.at(y + wy, x + wx, c);
          mx += g * va;
          my += g * vb;
          sxx += g * va * va;
          syy += g * vb * vb;
          sxy += g * va * vb;
        }
      double var_x = sxx - mx * mx;
      double var_y = syy - my * my;
      double cov = sxy - mx * my;
      total += ssim_formula(mx, my, var_x, var_y, cov);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b) {
  check_shapes(a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  double mse = se / static_cast<double>(a.pixels.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
  check_shapes(a, b);
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c)
    total += ssim_region(a, b, c, 0, 0, a.height, a.width);
  return total / a.channels;
}

double cs_proxy(const ImageTensor& a, const ImageTensor& b, const RegionAnnotation& regions) {
  check_shapes(a, b);
  if (regions.boxes.empty()) return ssim(a, b);
  double total = 0.0;
  for (const Box& box : regions.boxes) {
    int y0 = std::max(0, box.y);
    int x0 = std::max(0, box.x);
    int y1 = std::min(a.height, box.y + box.h);
    int x1 = std::min(a.width, box.x + box.w);
    if (y1 <= y0 || x1 <= x0) continue;
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) s += ssim_region(a, b, c, y0, x0, y1, x1);
    total += s / a.channels;
  }
  return total / static_cast<double>(regions.boxes.size());
}

void combine(double psnr_db, double ssim_val, double cs, double* psnr_cs, double* ssim_cs) {
  double p = std::clamp(psnr_db, 0.0, kPsnrCapDb) / kPsnrCapDb;
  double s = std::clamp(ssim_val, 0.0, 1.0);
  double c = std::clamp(cs, 0.0, 1.0);
  *psnr_cs = 0.5 * p + 0.5 * c;
  *ssim_cs = 0.5 * s + 0.5 * c;
}

MetricsReport evaluate_metrics(const ImageTensor& reference, const ImageTensor& reconstructed,
                               const RegionAnnotation& regions) {
  MetricsReport r;
  r.psnr_db = psnr(reference, reconstructed);
  r.ssim = ssim(reference, reconstructed);
  r.cs_proxy = cs_proxy(reference, reconstructed, regions);
  combine(r.psnr_db, r.ssim, r.cs_proxy, &r.psnr_cs, &r.ssim_cs);
  return r;
}

}  // namespace semlink
