#pragma once

#include <vector>

#include "semlink/image.hpp"

namespace semlink {

// Patch grid bookkeeping. Patches are indexed row-major over the grid.
struct PatchGrid {
  int patch_size = 16;
  int rows = 0;
  int cols = 0;
  int count() const { return rows * cols; }
};

// Throws if image dimensions are not divisible by patch_size.
PatchGrid partition_patches(const ImageTensor& img, int patch_size);

// Per-patch counts of difference-of-Gaussians scale-space extrema.
// 3 octaves, 3 scales per octave, contrast threshold 0.03 on normalized
// intensity, edge-response ratio threshold 10. Deterministic.
std::vector<int> detect_keypoints(const ImageTensor& img, int patch_size);

struct ImportanceOrder {
  std::vector<int> patch_indices;   // permutation, most-important first
  std::vector<int> keypoint_counts; // per patch
  std::vector<bool> object_flags;   // per patch
};

// Patches intersecting any annotation box come first (sorted by descending
// keypoint count), then the rest by descending count; ties break by
// ascending patch index. A patch is object-flagged if at least one of its
// pixels lies inside any box.
ImportanceOrder build_importance_order(const std::vector<int>& counts,
                                       const RegionAnnotation& regions,
                                       const PatchGrid& grid);

// Mask-ratio policy: piecewise-bilinear lookup over an SNR x object-area
// grid, clamped to [0, 0.7], non-increasing in both inputs.
double decide_mask_ratio(double snr_db, double object_area_fraction);

struct MaskMatrix {
  std::vector<std::uint8_t> patch_mask;  // 0 = masked, 1 = kept
  double mask_ratio = 0.0;

  int zeros() const {
    int n = 0;
    for (auto b : patch_mask) n += (b == 0);
    return n;
  }
};

// Masks the floor(mask_ratio * N_T) least-important patches. The policy cap
// keeps mask_ratio within [0, 0.7].
MaskMatrix generate_mask(const ImportanceOrder& order, double mask_ratio);

// Sweep-only variant without the policy cap (ratios in [0, 1)); experiment
// code probes beyond the operating range the way the cap itself was chosen.
MaskMatrix generate_mask_unchecked(const ImportanceOrder& order, double mask_ratio);

// Element-wise image * mask (mask expanded to pixels).
ImageTensor apply_mask(const ImageTensor& img, const MaskMatrix& m, const PatchGrid& grid);

// Fills masked patches with the per-pixel mean of their 4-connected already
// filled neighbors, sweeping outward from the kept set until all are filled.
// Stand-in for a learned infill model; kept patches pass through unchanged.
ImageTensor infill_masked(const ImageTensor& img, const MaskMatrix& m, const PatchGrid& grid);

}  // namespace semlink
