#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace fusegrid {

enum class VolumeKind : std::uint8_t { Image = 0, Mask = 1 };

/// Dense voxel grid, row-major in (z, y, x). Image voxels are Hounsfield
/// Units (or normalized intensities downstream); Mask voxels are {0, 1}.
struct Volume {
  VolumeKind kind = VolumeKind::Image;
  std::array<int, 3> dims{0, 0, 0};            // (D, H, W)
  std::array<float, 3> spacing{1.f, 1.f, 1.f};  // mm per voxel, same axis order
  std::vector<float> data;

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  float& at(int z, int y, int x) {
    return data[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
  }
  float at(int z, int y, int x) const {
    return data[(static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x];
  }
};

inline Volume make_volume(VolumeKind kind, std::array<int, 3> dims,
                          std::array<float, 3> spacing = {1.f, 1.f, 1.f}) {
  Volume v;
  v.kind = kind;
  v.dims = dims;
  v.spacing = spacing;
  v.data.assign(static_cast<size_t>(v.voxels()), 0.0f);
  return v;
}

/// Axis-aligned box, lo inclusive, hi exclusive, in (z, y, x) voxel indices.
struct Roi {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};
};

/// Throws ValidationError if a Mask volume carries a voxel outside {0, 1}.
void validate_mask_binary(const Volume& v);

/// VOL1 container: magic "VOL1", u8 kind, u32 dims (D,H,W), f32 spacing,
/// then the little-endian f32 voxel payload.
Volume read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Volume& v);

}  // namespace fusegrid
