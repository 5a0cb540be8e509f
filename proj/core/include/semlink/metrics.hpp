#pragma once

#include "semlink/image.hpp"

namespace semlink {

// PSNR cap; also the normalization constant for the combined metrics.
constexpr double kPsnrCapDb = 50.0;

struct MetricsReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double cs_proxy = 0.0;
  double psnr_cs = 0.0;
  double ssim_cs = 0.0;
};

// 10*log10(255^2 / MSE), capped at kPsnrCapDb (identical images hit the cap).
double psnr(const ImageTensor& a, const ImageTensor& b);

// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), c1=(0.01*255)^2,
// c2=(0.03*255)^2, computed per channel on fully-interior windows and
// averaged. Falls back to global statistics if the image is smaller than
// the window.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Object-region quality proxy: SSIM restricted to each annotation box,
// averaged over boxes. Empty annotations reduce to whole-image SSIM.
double cs_proxy(const ImageTensor& a, const ImageTensor& b, const RegionAnnotation& regions);

// PSNR+CS and SSIM+CS with equal weights; PSNR normalized by kPsnrCapDb and
// SSIM clamped to [0,1] before combining.
void combine(double psnr_db, double ssim_val, double cs, double* psnr_cs, double* ssim_cs);

MetricsReport evaluate_metrics(const ImageTensor& reference, const ImageTensor& reconstructed,
                               const RegionAnnotation& regions);

}  // namespace semlink
