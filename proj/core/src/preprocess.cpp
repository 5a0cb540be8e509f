#include "semlink/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace semlink {

PatchGrid partition_patches(const ImageTensor& img, int patch_size) {
  if (patch_size <= 0) throw std::invalid_argument("patch_size must be positive");
  if (img.height % patch_size != 0 || img.width % patch_size != 0)
    throw std::invalid_argument("image dimensions not divisible by patch size");
  PatchGrid g;
  g.patch_size = patch_size;
  g.rows = img.height / patch_size;
  g.cols = img.width / patch_size;
  return g;
}

namespace {

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
};

Plane to_gray(const ImageTensor& img) {
  Plane p;
  p.w = img.width;
  p.h = img.height;
  p.v.resize(static_cast<std::size_t>(p.w) * p.h);
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      double g;
      if (img.channels == 3)
        g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      else
        g = img.at(y, x, 0);
      p.at(y, x) = g / 255.0;
    }
  return p;
}

// Symmetric (reflecting) border index, e.g. -1 -> 0, n -> n-1. Symmetric
// padding commutes with a 180-degree flip, which keeps DoG extrema
// rotation-covariant on axis-aligned flips.
inline int reflect(int i, int n) {
  if (i < 0) return -i - 1;
  if (i >= n) return 2 * n - 1 - i;
  return i;
}

Plane gaussian_blur(const Plane& in, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(radius) + 1);
  double sum = 0.0;
  for (int i = 0; i <= radius; ++i) {
    k[i] = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
    sum += (i == 0) ? k[i] : 2.0 * k[i];
  }
  for (double& x : k) x /= sum;

  Plane tmp = in, out = in;
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double acc = k[0] * in.at(y, x);
      for (int i = 1; i <= radius; ++i)
        acc += k[i] * (in.at(y, reflect(x - i, in.w)) + in.at(y, reflect(x + i, in.w)));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double acc = k[0] * tmp.at(y, x);
      for (int i = 1; i <= radius; ++i)
        acc += k[i] * (tmp.at(reflect(y - i, in.h), x) + tmp.at(reflect(y + i, in.h), x));
      out.at(y, x) = acc;
    }
  return out;
}

// 2x2 average pooling. Unlike stride-2 decimation this is exactly covariant
// with 180-degree rotation on even-sized planes.
Plane downsample2(const Plane& in) {
  Plane out;
  out.w = in.w / 2;
  out.h = in.h / 2;
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      // Diagonal pairs first: the sum is then bit-identical under a
      // 180-degree flip of the block (IEEE addition commutes but does not
      // associate).
      out.at(y, x) = 0.25 * ((in.at(2 * y, 2 * x) + in.at(2 * y + 1, 2 * x + 1)) +
                             (in.at(2 * y, 2 * x + 1) + in.at(2 * y + 1, 2 * x)));
  return out;
}

// Pixel-replication upsampling for the first octave; keeps fine-scale blobs
// (below the base sigma) detectable, and commutes with 180-degree rotation.
Plane upsample2(const Plane& in) {
  Plane out;
  out.w = in.w * 2;
  out.h = in.h * 2;
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = in.at(y / 2, x / 2);
  return out;
}

constexpr int kOctaves = 3;
constexpr int kScalesPerOctave = 3;
constexpr double kSigmaBase = 1.6;
constexpr double kSigmaInput = 1.0;  // after 2x upsampling of a 0.5-blurred input
constexpr double kContrastThreshold = 0.03;
constexpr double kEdgeRatio = 10.0;

}  // namespace

std::vector<int> detect_keypoints(const ImageTensor& img, int patch_size) {
  PatchGrid grid = partition_patches(img, patch_size);
  std::vector<int> counts(grid.count(), 0);

  const double k = std::pow(2.0, 1.0 / kScalesPerOctave);
  const int levels = kScalesPerOctave + 3;

  // Octave 0 runs on the 2x upsampled image so blobs near one pixel across
  // still produce a scale-space extremum.
  Plane base = upsample2(to_gray(img));
  for (int octave = 0; octave < kOctaves; ++octave) {
    if (base.w < 8 || base.h < 8) break;

    std::vector<Plane> gauss(levels);
    gauss[0] = (octave == 0)
                   ? gaussian_blur(base, std::sqrt(kSigmaBase * kSigmaBase -
                                                   kSigmaInput * kSigmaInput))
                   : base;
    double sigma_prev = kSigmaBase;
    for (int i = 1; i < levels; ++i) {
      double sigma_total = kSigmaBase * std::pow(k, i);
      double delta = std::sqrt(sigma_total * sigma_total - sigma_prev * sigma_prev);
      gauss[i] = gaussian_blur(gauss[i - 1], delta);
      sigma_prev = sigma_total;
    }

    std::vector<Plane> dog(levels - 1);
    for (int i = 0; i < levels - 1; ++i) {
      dog[i] = gauss[i];
      for (std::size_t j = 0; j < dog[i].v.size(); ++j)
        dog[i].v[j] = gauss[i + 1].v[j] - gauss[i].v[j];
    }

    // Patch lookup happens in the octave's own grid: the patch spans
    // ps*2^(1-o) octave pixels, and integer division there commutes with a
    // 180-degree flip exactly (fractional original-image coordinates do
    // not). Requires an even patch size, which partitioning guarantees for
    // every supported configuration.
    const int octave_patch = (octave == 0) ? patch_size * 2 : patch_size >> (octave - 1);
    if (octave_patch == 0) break;
    for (int l = 1; l <= kScalesPerOctave; ++l) {
      const Plane& d = dog[l];
      for (int y = 1; y < d.h - 1; ++y) {
        for (int x = 1; x < d.w - 1; ++x) {
          double v = d.at(y, x);
          if (std::abs(v) < kContrastThreshold) continue;

          // Extremum if no neighbor beats v and at least one is strictly
          // inside; plain strict comparison would drop symmetric blobs whose
          // center ties across the upsampled grid.
          bool max_ok = true, min_ok = true, any_below = false, any_above = false;
          for (int dl = -1; dl <= 1 && (max_ok || min_ok); ++dl) {
            const Plane& n = dog[l + dl];
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                if (dl == 0 && dy == 0 && dx == 0) continue;
                double w = n.at(y + dy, x + dx);
                if (w > v) max_ok = false;
                if (w < v) min_ok = false;
                any_below |= (w < v);
                any_above |= (w > v);
              }
          }
          bool is_max = max_ok && any_below;
          bool is_min = min_ok && any_above;
          if (!is_max && !is_min) continue;

          // Reject ridge responses via the 2x2 spatial Hessian.
          double dxx = d.at(y, x + 1) - 2.0 * v + d.at(y, x - 1);
          double dyy = d.at(y + 1, x) - 2.0 * v + d.at(y - 1, x);
          double dxy = 0.25 * (d.at(y + 1, x + 1) - d.at(y + 1, x - 1) -
                               d.at(y - 1, x + 1) + d.at(y - 1, x - 1));
          double tr = dxx + dyy;
          double det = dxx * dyy - dxy * dxy;
          double limit = (kEdgeRatio + 1.0) * (kEdgeRatio + 1.0) / kEdgeRatio;
          if (det <= 0.0 || tr * tr / det >= limit) continue;

          int pc = std::min(x / octave_patch, grid.cols - 1);
          int pr = std::min(y / octave_patch, grid.rows - 1);
          counts[pr * grid.cols + pc]++;
        }
      }
    }
    base = downsample2(gauss[kScalesPerOctave]);
  }
  return counts;
}

ImportanceOrder build_importance_order(const std::vector<int>& counts,
                                       const RegionAnnotation& regions,
                                       const PatchGrid& grid) {
  if (static_cast<int>(counts.size()) != grid.count())
    throw std::invalid_argument("counts length must equal patch count");

  ImportanceOrder order;
  order.keypoint_counts = counts;
  order.object_flags.assign(counts.size(), false);

  const int ps = grid.patch_size;
  for (const Box& b : regions.boxes) {
    // Patch range overlapped by the box (>=1 shared pixel).
    int pc0 = std::max(0, b.x / ps);
    int pr0 = std::max(0, b.y / ps);
    int pc1 = std::min(grid.cols - 1, (b.x + b.w - 1) / ps);
    int pr1 = std::min(grid.rows - 1, (b.y + b.h - 1) / ps);
    for (int pr = pr0; pr <= pr1; ++pr)
      for (int pc = pc0; pc <= pc1; ++pc) order.object_flags[pr * grid.cols + pc] = true;
  }

  order.patch_indices.resize(counts.size());
  std::iota(order.patch_indices.begin(), order.patch_indices.end(), 0);
  std::sort(order.patch_indices.begin(), order.patch_indices.end(), [&](int a, int b) {
    bool fa = order.object_flags[a], fb = order.object_flags[b];
    if (fa != fb) return fa;
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;
  });
  return order;
}

namespace {

// MR policy grid anchored to: 0.7 at 0 dB / small area, the 0.7 cap at -5 dB,
// and 0 at >= 10 dB. Rows are SNR, columns are object-area fraction; entries
// are non-increasing along both axes so bilinear interpolation inherits the
// monotonicity.
constexpr double kSnrGrid[5] = {-5.0, 0.0, 5.0, 10.0, 15.0};
constexpr double kAreaGrid[4] = {0.0, 0.1, 0.3, 0.5};
constexpr double kMrTable[5][4] = {
    {0.70, 0.70, 0.60, 0.50},
    {0.70, 0.65, 0.55, 0.45},
    {0.35, 0.30, 0.25, 0.20},
    {0.00, 0.00, 0.00, 0.00},
    {0.00, 0.00, 0.00, 0.00},
};

}  // namespace

double decide_mask_ratio(double snr_db, double object_area_fraction) {
  double s = std::clamp(snr_db, kSnrGrid[0], kSnrGrid[4]);
  double a = std::clamp(object_area_fraction, kAreaGrid[0], kAreaGrid[3]);

  int si = 0;
  while (si < 3 && s > kSnrGrid[si + 1]) ++si;
  int ai = 0;
  while (ai < 2 && a > kAreaGrid[ai + 1]) ++ai;

  double ts = (s - kSnrGrid[si]) / (kSnrGrid[si + 1] - kSnrGrid[si]);
  double ta = (a - kAreaGrid[ai]) / (kAreaGrid[ai + 1] - kAreaGrid[ai]);
  double m0 = kMrTable[si][ai] * (1.0 - ta) + kMrTable[si][ai + 1] * ta;
  double m1 = kMrTable[si + 1][ai] * (1.0 - ta) + kMrTable[si + 1][ai + 1] * ta;
  return std::clamp(m0 * (1.0 - ts) + m1 * ts, 0.0, 0.7);
}

MaskMatrix generate_mask_unchecked(const ImportanceOrder& order, double mask_ratio) {
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw std::invalid_argument("mask_ratio outside [0, 1)");
  const int n = static_cast<int>(order.patch_indices.size());
  MaskMatrix m;
  m.mask_ratio = mask_ratio;
  m.patch_mask.assign(n, 1);
  int zeros = static_cast<int>(std::floor(mask_ratio * n));
  for (int i = n - zeros; i < n; ++i) m.patch_mask[order.patch_indices[i]] = 0;
  return m;
}

MaskMatrix generate_mask(const ImportanceOrder& order, double mask_ratio) {
  if (mask_ratio < 0.0 || mask_ratio > 0.7)
    throw std::invalid_argument("mask_ratio outside [0, 0.7]");
  return generate_mask_unchecked(order, mask_ratio);
}

ImageTensor apply_mask(const ImageTensor& img, const MaskMatrix& m, const PatchGrid& grid) {
  if (static_cast<int>(m.patch_mask.size()) != grid.count() ||
      grid.rows * grid.patch_size != img.height || grid.cols * grid.patch_size != img.width)
    throw std::invalid_argument("mask/image shape mismatch");
  ImageTensor out = img;
  const int ps = grid.patch_size;
  for (int pr = 0; pr < grid.rows; ++pr)
    for (int pc = 0; pc < grid.cols; ++pc) {
      if (m.patch_mask[pr * grid.cols + pc]) continue;
      for (int y = pr * ps; y < (pr + 1) * ps; ++y)
        for (int x = pc * ps; x < (pc + 1) * ps; ++x)
          for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = 0;
    }
  return out;
}

ImageTensor infill_masked(const ImageTensor& img, const MaskMatrix& m, const PatchGrid& grid) {
  const int ps = grid.patch_size;
  const int n = grid.count();
  if (static_cast<int>(m.patch_mask.size()) != n)
    throw std::invalid_argument("mask/grid mismatch");

  std::vector<std::uint8_t> filled(m.patch_mask.begin(), m.patch_mask.end());
  std::vector<double> work(img.pixels.begin(), img.pixels.end());

  auto patch_of = [&](int pr, int pc) { return pr * grid.cols + pc; };

  // Each sweep fills every unfilled patch adjacent to the filled set with the
  // per-pixel mean of its already-filled 4-neighbors; all reads within a
  // sweep see the pre-sweep state.
  bool remaining = std::find(filled.begin(), filled.end(), 0) != filled.end();
  while (remaining) {
    std::vector<double> snapshot = work;
    std::vector<std::uint8_t> filled_snapshot = filled;
    bool progress = false;
    for (int pr = 0; pr < grid.rows; ++pr)
      for (int pc = 0; pc < grid.cols; ++pc) {
        if (filled_snapshot[patch_of(pr, pc)]) continue;
        const int dr[4] = {-1, 1, 0, 0};
        const int dc[4] = {0, 0, -1, 1};
        std::vector<std::pair<int, int>> nbrs;
        for (int i = 0; i < 4; ++i) {
          int r2 = pr + dr[i], c2 = pc + dc[i];
          if (r2 < 0 || r2 >= grid.rows || c2 < 0 || c2 >= grid.cols) continue;
          if (filled_snapshot[patch_of(r2, c2)]) nbrs.emplace_back(r2, c2);
        }
        if (nbrs.empty()) continue;
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x)
            for (int c = 0; c < img.channels; ++c) {
              double acc = 0.0;
              for (auto [r2, c2] : nbrs) {
                std::size_t idx =
                    (static_cast<std::size_t>(r2 * ps + y) * img.width + (c2 * ps + x)) *
                        img.channels +
                    c;
                acc += snapshot[idx];
              }
              std::size_t idx =
                  (static_cast<std::size_t>(pr * ps + y) * img.width + (pc * ps + x)) *
                      img.channels +
                  c;
              work[idx] = acc / static_cast<double>(nbrs.size());
            }
        filled[patch_of(pr, pc)] = 1;
        progress = true;
      }
    if (!progress) throw std::runtime_error("infill: no kept patch to grow from");
    remaining = std::find(filled.begin(), filled.end(), 0) != filled.end();
  }

  ImageTensor out = img;
  for (std::size_t i = 0; i < work.size(); ++i)
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(work[i]), 0L, 255L));
  return out;
}

}  // namespace semlink
