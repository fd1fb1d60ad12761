#include "fusegrid/volume.hpp"

#include <cstring>
#include <fstream>

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

}  // namespace

void validate_mask_binary(const Volume& v) {
  if (v.kind != VolumeKind::Mask) return;
  for (float val : v.data)
    if (val != 0.0f && val != 1.0f)
      throw ValidationError("mask volume contains voxel value " + std::to_string(val) +
                            ", expected {0, 1}");
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume file: " + path.string());

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a VOL1 file: " + path.string());

  std::uint8_t kind_byte = 0;
  in.read(reinterpret_cast<char*>(&kind_byte), 1);
  if (kind_byte > 1) throw IoError("bad volume kind byte in " + path.string());

  std::uint32_t dims[3];
  float spacing[3];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  in.read(reinterpret_cast<char*>(spacing), sizeof spacing);
  if (!in) throw IoError("truncated VOL1 header in " + path.string());

  Volume v;
  v.kind = static_cast<VolumeKind>(kind_byte);
  for (int i = 0; i < 3; ++i) {
    if (dims[i] == 0 || dims[i] > (1u << 24))
      throw IoError("unreasonable volume dimension in " + path.string());
    v.dims[i] = static_cast<int>(dims[i]);
    v.spacing[i] = spacing[i];
  }
  v.data.resize(static_cast<size_t>(v.voxels()));
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!in) throw IoError("truncated VOL1 payload in " + path.string());
  validate_mask_binary(v);
  return v;
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  validate_mask_binary(v);
  if (v.voxels() != static_cast<std::int64_t>(v.data.size()))
    throw ShapeError("volume payload does not match its dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create volume file: " + path.string());
  out.write(kMagic, 4);
  const std::uint8_t kind_byte = static_cast<std::uint8_t>(v.kind);
  out.write(reinterpret_cast<const char*>(&kind_byte), 1);
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(v.dims[0]),
                           static_cast<std::uint32_t>(v.dims[1]),
                           static_cast<std::uint32_t>(v.dims[2])};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(v.spacing.data()), sizeof(float) * 3);
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing volume file: " + path.string());
}

}  // namespace fusegrid
