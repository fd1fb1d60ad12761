#pragma once

#include <array>
#include <utility>
#include <vector>

#include "fusegrid/volume.hpp"

namespace fusegrid {

/// Tight foreground box of a mask, expanded by `pad` voxels per side and
/// clamped to the volume bounds. Throws EmptyMaskError when no voxel is set.
Roi bounding_box(const Volume& mask, int pad = 20);

/// Fallback ROI when the predicted mask is empty: the centered half-side box.
Roi center_fallback_roi(const Volume& v);

/// Crop both volumes to `roi` and resample each axis to `out_side` voxels:
/// trilinear for the image, nearest neighbor for the mask (keeps it binary).
/// Border samples clamp to the roi edge, so a constant image stays constant.
/// Output spacing scales by roi_extent / out_side per axis.
std::pair<Volume, Volume> crop_and_resample(const Volume& image, const Volume& mask,
                                            const Roi& roi, int out_side);

/// Clamp to [lo_hu, hi_hu] and rescale linearly onto [0, 1].
Volume normalize_hu(const Volume& image, float lo_hu = -100.0f, float hi_hu = 240.0f);

/// One point of the rotation-augmentation grid, in degrees per axis.
struct RotationAngles {
  float z_deg = 0.0f;
  float y_deg = 0.0f;
  float x_deg = 0.0f;
};

/// Angles for variant `index` in [0, 27): index = (iz*3 + iy)*3 + ix over the
/// per-axis angle list, so the identity sits at index 13 with the default
/// {-10, 0, +10} grid.
RotationAngles variant_angles(int index, const std::array<float, 3>& angles = {-10.f, 0.f, 10.f});

/// Rotate both volumes about the volume center, composing z-axis, then y,
/// then x rotations. Trilinear resampling for the image, nearest for the
/// mask; out-of-bounds samples fill with 0. Zero angles copy bit-identically.
std::pair<Volume, Volume> rotate_pair(const Volume& image, const Volume& mask,
                                      const RotationAngles& angles);

/// All 27 rotation variants in variant_angles order.
std::vector<std::pair<Volume, Volume>> rotation_variants(
    const Volume& image, const Volume& mask,
    const std::array<float, 3>& angles = {-10.f, 0.f, 10.f});

}  // namespace fusegrid
