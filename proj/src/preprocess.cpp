#include "fusegrid/preprocess.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_same_dims(const Volume& image, const Volume& mask) {
  if (image.dims != mask.dims)
    throw ShapeError("image and mask dimensions differ");
}

/// Trilinear sample at fractional (z,y,x); coordinates outside the half-open
/// index box contribute 0 through their missing corners.
float sample_trilinear_zero(const Volume& v, double z, double y, double x) {
  const int z0 = static_cast<int>(std::floor(z));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int zi = z0 + dz, yi = y0 + dy, xi = x0 + dx;
        if (zi < 0 || zi >= v.dims[0] || yi < 0 || yi >= v.dims[1] || xi < 0 ||
            xi >= v.dims[2])
          continue;
        const double w = (dz ? fz : 1.0 - fz) * (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
        acc += w * v.at(zi, yi, xi);
      }
  return static_cast<float>(acc);
}

/// Trilinear sample with coordinates clamped into the roi's index range, so
/// the crop behaves like edge replication at its borders.
float sample_trilinear_clamped(const Volume& v, const Roi& roi, double z, double y, double x) {
  z = std::clamp(z, static_cast<double>(roi.lo[0]), static_cast<double>(roi.hi[0] - 1));
  y = std::clamp(y, static_cast<double>(roi.lo[1]), static_cast<double>(roi.hi[1] - 1));
  x = std::clamp(x, static_cast<double>(roi.lo[2]), static_cast<double>(roi.hi[2] - 1));
  const int z0 = static_cast<int>(std::floor(z));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int z1 = std::min(z0 + 1, roi.hi[0] - 1);
  const int y1 = std::min(y0 + 1, roi.hi[1] - 1);
  const int x1 = std::min(x0 + 1, roi.hi[2] - 1);
  const double fz = z - z0, fy = y - y0, fx = x - x0;
  double acc = 0.0;
  acc += (1 - fz) * (1 - fy) * (1 - fx) * v.at(z0, y0, x0);
  acc += (1 - fz) * (1 - fy) * fx * v.at(z0, y0, x1);
  acc += (1 - fz) * fy * (1 - fx) * v.at(z0, y1, x0);
  acc += (1 - fz) * fy * fx * v.at(z0, y1, x1);
  acc += fz * (1 - fy) * (1 - fx) * v.at(z1, y0, x0);
  acc += fz * (1 - fy) * fx * v.at(z1, y0, x1);
  acc += fz * fy * (1 - fx) * v.at(z1, y1, x0);
  acc += fz * fy * fx * v.at(z1, y1, x1);
  return static_cast<float>(acc);
}

Eigen::Matrix3d rotation_matrix(const RotationAngles& a) {
  const double rz = a.z_deg * kPi / 180.0;
  const double ry = a.y_deg * kPi / 180.0;
  const double rx = a.x_deg * kPi / 180.0;
  // Axes in (x, y, z) math order; applied to content as Rz first, then Ry,
  // then Rx, so the combined matrix is Rx * Ry * Rz.
  Eigen::Matrix3d Rz, Ry, Rx;
  Rz << std::cos(rz), -std::sin(rz), 0, std::sin(rz), std::cos(rz), 0, 0, 0, 1;
  Ry << std::cos(ry), 0, std::sin(ry), 0, 1, 0, -std::sin(ry), 0, std::cos(ry);
  Rx << 1, 0, 0, 0, std::cos(rx), -std::sin(rx), 0, std::sin(rx), std::cos(rx);
  return Rx * Ry * Rz;
}

}  // namespace

Roi bounding_box(const Volume& mask, int pad) {
  if (pad < 0) throw ConfigError("bounding_box: pad must be non-negative");
  Roi tight{{mask.dims[0], mask.dims[1], mask.dims[2]}, {0, 0, 0}};
  bool any = false;
  for (int z = 0; z < mask.dims[0]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[2]; ++x)
        if (mask.at(z, y, x) != 0.0f) {
          any = true;
          const int idx[3] = {z, y, x};
          for (int i = 0; i < 3; ++i) {
            tight.lo[i] = std::min(tight.lo[i], idx[i]);
            tight.hi[i] = std::max(tight.hi[i], idx[i] + 1);
          }
        }
  if (!any) throw EmptyMaskError("bounding_box: mask has no foreground voxels");
  Roi out;
  for (int i = 0; i < 3; ++i) {
    out.lo[i] = std::max(0, tight.lo[i] - pad);
    out.hi[i] = std::min(mask.dims[i], tight.hi[i] + pad);
  }
  return out;
}

Roi center_fallback_roi(const Volume& v) {
  Roi roi;
  for (int i = 0; i < 3; ++i) {
    const int side = std::max(1, v.dims[i] / 2);
    roi.lo[i] = (v.dims[i] - side) / 2;
    roi.hi[i] = roi.lo[i] + side;
  }
  return roi;
}

std::pair<Volume, Volume> crop_and_resample(const Volume& image, const Volume& mask,
                                            const Roi& roi, int out_side) {
  require_same_dims(image, mask);
  if (out_side <= 0) throw ConfigError("crop_and_resample: out_side must be positive");
  Roi r = roi;
  for (int i = 0; i < 3; ++i) {
    r.lo[i] = std::clamp(r.lo[i], 0, image.dims[i]);
    r.hi[i] = std::clamp(r.hi[i], 0, image.dims[i]);
    if (r.lo[i] >= r.hi[i])
      throw ValidationError("crop_and_resample: roi is empty after clamping");
  }

  double scale[3];
  for (int i = 0; i < 3; ++i) scale[i] = static_cast<double>(r.hi[i] - r.lo[i]) / out_side;

  Volume out_img = make_volume(VolumeKind::Image, {out_side, out_side, out_side});
  Volume out_msk = make_volume(VolumeKind::Mask, {out_side, out_side, out_side});
  for (int i = 0; i < 3; ++i) {
    out_img.spacing[i] = static_cast<float>(image.spacing[i] * scale[i]);
    out_msk.spacing[i] = out_img.spacing[i];
  }

  for (int z = 0; z < out_side; ++z) {
    const double sz = r.lo[0] + (z + 0.5) * scale[0] - 0.5;
    for (int y = 0; y < out_side; ++y) {
      const double sy = r.lo[1] + (y + 0.5) * scale[1] - 0.5;
      for (int x = 0; x < out_side; ++x) {
        const double sx = r.lo[2] + (x + 0.5) * scale[2] - 0.5;
        out_img.at(z, y, x) = sample_trilinear_clamped(image, r, sz, sy, sx);
        const int nz = std::clamp(static_cast<int>(std::lround(sz)), r.lo[0], r.hi[0] - 1);
        const int ny = std::clamp(static_cast<int>(std::lround(sy)), r.lo[1], r.hi[1] - 1);
        const int nx = std::clamp(static_cast<int>(std::lround(sx)), r.lo[2], r.hi[2] - 1);
        out_msk.at(z, y, x) = mask.at(nz, ny, nx);
      }
    }
  }
  return {std::move(out_img), std::move(out_msk)};
}

Volume normalize_hu(const Volume& image, float lo_hu, float hi_hu) {
  if (image.kind != VolumeKind::Image)
    throw ValidationError("normalize_hu expects an image volume");
  if (lo_hu >= hi_hu) throw ConfigError("normalize_hu: window must satisfy lo < hi");
  Volume out = image;
  const float range = hi_hu - lo_hu;
  for (float& v : out.data) v = (std::clamp(v, lo_hu, hi_hu) - lo_hu) / range;
  return out;
}

RotationAngles variant_angles(int index, const std::array<float, 3>& angles) {
  if (index < 0 || index >= 27)
    throw ConfigError("rotation variant index out of range [0, 27)");
  RotationAngles a;
  a.z_deg = angles[static_cast<size_t>(index / 9)];
  a.y_deg = angles[static_cast<size_t>((index / 3) % 3)];
  a.x_deg = angles[static_cast<size_t>(index % 3)];
  return a;
}

std::pair<Volume, Volume> rotate_pair(const Volume& image, const Volume& mask,
                                      const RotationAngles& angles) {
  require_same_dims(image, mask);
  if (image.dims[0] != image.dims[1] || image.dims[1] != image.dims[2])
    throw ShapeError("rotation requires cubic volumes");
  if (angles.z_deg == 0.0f && angles.y_deg == 0.0f && angles.x_deg == 0.0f)
    return {image, mask};

  const int side = image.dims[0];
  const double c = (side - 1) * 0.5;
  // Content moves by R; each output voxel samples the source at R^T offsets.
  const Eigen::Matrix3d Rt = rotation_matrix(angles).transpose();

  Volume out_img = image;
  Volume out_msk = mask;
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const Eigen::Vector3d offset(x - c, y - c, z - c);
        const Eigen::Vector3d src = Rt * offset;
        const double sx = src[0] + c, sy = src[1] + c, sz = src[2] + c;
        out_img.at(z, y, x) = sample_trilinear_zero(image, sz, sy, sx);
        const int nz = static_cast<int>(std::lround(sz));
        const int ny = static_cast<int>(std::lround(sy));
        const int nx = static_cast<int>(std::lround(sx));
        const bool inside = nz >= 0 && nz < side && ny >= 0 && ny < side && nx >= 0 && nx < side;
        out_msk.at(z, y, x) = inside ? mask.at(nz, ny, nx) : 0.0f;
      }
  return {std::move(out_img), std::move(out_msk)};
}

std::vector<std::pair<Volume, Volume>> rotation_variants(const Volume& image, const Volume& mask,
                                                         const std::array<float, 3>& angles) {
  std::vector<std::pair<Volume, Volume>> out;
  out.reserve(27);
  for (int k = 0; k < 27; ++k) out.push_back(rotate_pair(image, mask, variant_angles(k, angles)));
  return out;
}

}  // namespace fusegrid
