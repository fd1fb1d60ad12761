#include "fusegrid/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "fusegrid/errors.hpp"
#include "fusegrid/rng.hpp"

namespace fusegrid {

namespace {

// Intensity model, HU-like: soft-tissue organ on a darker background, with
// clutter blobs matching the organ so silhouettes alone do not identify it.
constexpr double kOrganBase = 40.0;
constexpr double kOrganNoise = 12.0;
constexpr double kClutterBase = kOrganBase;
constexpr double kBackgroundBase = -65.0;
constexpr double kBackgroundNoise = 10.0;
constexpr double kLesionShift = -70.0;  // hypodense, PDAC-like

// Six cells keep the interior variation at a finer scale than a lesion, so
// depth and extent separate the two.
constexpr int kOrganLatticeCells = 6;
constexpr int kBackgroundLatticeCells = 4;

using Vec3 = std::array<double, 3>;  // (z, y, x), matching Volume::at

Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double norm2(const Vec3& v) { return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]; }

struct Mat3 {
  std::array<Vec3, 3> rows;
  Vec3 apply(const Vec3& v) const {
    return {rows[0][0] * v[0] + rows[0][1] * v[1] + rows[0][2] * v[2],
            rows[1][0] * v[0] + rows[1][1] * v[1] + rows[1][2] * v[2],
            rows[2][0] * v[0] + rows[2][1] * v[1] + rows[2][2] * v[2]};
  }
  Vec3 apply_transposed(const Vec3& v) const {
    return {rows[0][0] * v[0] + rows[1][0] * v[1] + rows[2][0] * v[2],
            rows[0][1] * v[0] + rows[1][1] * v[1] + rows[2][1] * v[2],
            rows[0][2] * v[0] + rows[1][2] * v[1] + rows[2][2] * v[2]};
  }
};

Mat3 axis_rotation(int axis, double radians) {
  const double c = std::cos(radians), s = std::sin(radians);
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  Mat3 m{{Vec3{0, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 0}}};
  m.rows[axis][axis] = 1.0;
  m.rows[a][a] = c;
  m.rows[a][b] = -s;
  m.rows[b][a] = s;
  m.rows[b][b] = c;
  return m;
}

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a.rows[i][k] * b.rows[k][j];
      out.rows[i][j] = acc;
    }
  return out;
}

Vec3 unit_draw(Rng& rng) {
  for (;;) {
    Vec3 v = {normal_draw(rng), normal_draw(rng), normal_draw(rng)};
    const double n = std::sqrt(norm2(v));
    if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Value noise: standard-normal node values on a coarse lattice spanning
// [0, side], read back with trilinear interpolation. The cell count sets the
// spatial frequency.
struct Lattice {
  int cells = 1;
  double cell_size = 1.0;
  std::vector<double> values;  // (cells+1)^3 nodes

  double at(const Vec3& p) const {
    const int n = cells + 1;
    double frac[3];
    int i0[3];
    for (int a = 0; a < 3; ++a) {
      double u = p[a] / cell_size;
      u = std::clamp(u, 0.0, static_cast<double>(cells) - 1e-9);
      i0[a] = static_cast<int>(u);
      frac[a] = u - i0[a];
    }
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double w = (dz ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                           (dx ? frac[2] : 1.0 - frac[2]);
          acc += w * values[(static_cast<size_t>(i0[0] + dz) * n + (i0[1] + dy)) * n +
                            (i0[2] + dx)];
        }
    return acc;
  }
};

Lattice make_lattice(int cells, double side, Rng& rng) {
  Lattice lat;
  lat.cells = cells;
  lat.cell_size = side / cells;
  const int n = cells + 1;
  lat.values.resize(static_cast<size_t>(n) * n * n);
  for (double& v : lat.values) v = normal_draw(rng);
  return lat;
}

struct Sphere {
  Vec3 center{};
  double radius = 0.0;
  bool contains(const Vec3& p) const { return norm2(p - center) <= radius * radius; }
};

// Everything drawn from one case's base stream: the anatomy shared by the
// normal and anomalous versions of the scene.
struct BaseScene {
  Vec3 center{};
  Vec3 radii{};
  Mat3 rot{};  // world -> ellipsoid frame
  Lattice organ_noise;
  Lattice background_noise;
  std::vector<Sphere> clutter;
};

BaseScene draw_base_scene(int side, Rng& rng) {
  BaseScene scene;
  const double s = side;
  for (int a = 0; a < 3; ++a) scene.radii[a] = uniform_in(rng, 0.28, 0.35) * s;
  for (int a = 0; a < 3; ++a)
    scene.center[a] = (s - 1.0) * 0.5 + uniform_in(rng, -0.04, 0.04) * s;
  const double max_tilt = 12.0 * std::acos(-1.0) / 180.0;
  Mat3 rot = axis_rotation(0, uniform_in(rng, -max_tilt, max_tilt));
  rot = matmul(axis_rotation(1, uniform_in(rng, -max_tilt, max_tilt)), rot);
  rot = matmul(axis_rotation(2, uniform_in(rng, -max_tilt, max_tilt)), rot);
  scene.rot = rot;
  scene.organ_noise = make_lattice(kOrganLatticeCells, s, rng);
  scene.background_noise = make_lattice(kBackgroundLatticeCells, s, rng);
  const int n_clutter = 3 + static_cast<int>(uniform_below(rng, 2));
  for (int i = 0; i < n_clutter; ++i) {
    Sphere blob;
    // Blobs sit on a shell at the ellipsoid boundary, many close enough that
    // no background gap separates them from the organ. Their in-image
    // footprint (organ-like intensity pressed against the silhouette) matches
    // a boundary bump's, and bump cases trade one blob for the bump so the
    // protrusion count carries no label information either; only the mask
    // resolves which protrusions are organ.
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Vec3 v = unit_draw(rng);
      const double shell = uniform_in(rng, 1.0, 1.25);
      const Vec3 in_frame = {v[0] * scene.radii[0] * shell, v[1] * scene.radii[1] * shell,
                             v[2] * scene.radii[2] * shell};
      const Vec3 offset = scene.rot.apply_transposed(in_frame);
      for (int a = 0; a < 3; ++a) blob.center[a] = scene.center[a] + offset[a];
      const bool in_bounds = blob.center[0] >= 0.08 * s && blob.center[0] <= 0.92 * s &&
                             blob.center[1] >= 0.08 * s && blob.center[1] <= 0.92 * s &&
                             blob.center[2] >= 0.08 * s && blob.center[2] <= 0.92 * s;
      if (in_bounds) break;
    }
    blob.radius = uniform_in(rng, 0.14, 0.20) * s;
    scene.clutter.push_back(blob);
  }
  return scene;
}

// A point on the organ surface: unit direction in the ellipsoid frame scaled
// by the radii, mapped back to world coordinates.
Vec3 surface_point(const BaseScene& scene, Rng& rng) {
  const Vec3 v = unit_draw(rng);
  const Vec3 in_frame = {v[0] * scene.radii[0], v[1] * scene.radii[1], v[2] * scene.radii[2]};
  const Vec3 offset = scene.rot.apply_transposed(in_frame);
  return {scene.center[0] + offset[0], scene.center[1] + offset[1],
          scene.center[2] + offset[2]};
}

struct Anomalies {
  bool has_shape = false;
  bool bump = false;  // false: dent
  Sphere shape_sphere;
  bool has_texture = false;
  Sphere lesion;
};

Anomalies draw_anomalies(const GenConfig& config, const BaseScene& scene, Rng& rng) {
  Anomalies a;
  do {
    a.has_shape = uniform01(rng) < config.shape_signal;
    a.has_texture = uniform01(rng) < config.texture_signal;
  } while (!a.has_shape && !a.has_texture);
  const double s = config.side;
  if (a.has_shape) {
    a.bump = uniform01(rng) < 0.5;
    a.shape_sphere.center = surface_point(scene, rng);
    // Bump radii match the clutter range so size cannot separate them in the
    // image; dents are mask-only, so theirs just need a clear cavity.
    a.shape_sphere.radius = a.bump ? uniform_in(rng, 0.14, 0.20) * s
                                   : uniform_in(rng, 0.17, 0.23) * s;
  }
  if (a.has_texture) {
    const Vec3 v = unit_draw(rng);
    const double depth = uniform_in(rng, 0.10, 0.35);
    const Vec3 in_frame = {v[0] * scene.radii[0] * depth, v[1] * scene.radii[1] * depth,
                           v[2] * scene.radii[2] * depth};
    const Vec3 offset = scene.rot.apply_transposed(in_frame);
    a.lesion.center = {scene.center[0] + offset[0], scene.center[1] + offset[1],
                       scene.center[2] + offset[2]};
    a.lesion.radius = uniform_in(rng, 0.15, 0.21) * s;
  }
  return a;
}

bool inside_ellipsoid(const BaseScene& scene, const Vec3& p) {
  const Vec3 q = scene.rot.apply(p - scene.center);
  const double q0 = q[0] / scene.radii[0], q1 = q[1] / scene.radii[1], q2 = q[2] / scene.radii[2];
  return q0 * q0 + q1 * q1 + q2 * q2 <= 1.0;
}

// Tissue support drives image intensity; organ support drives the mask.
// A bump extends both. A dent is excluded tissue: its voxels keep organ-like
// intensity in the image while the mask shows the cavity, the way an isodense
// infiltration reads on CT. Only the mask makes dents visible.
bool inside_tissue(const BaseScene& scene, const Anomalies& a, const Vec3& p) {
  bool in = inside_ellipsoid(scene, p);
  if (a.has_shape && a.bump) in = in || a.shape_sphere.contains(p);
  return in;
}

bool inside_organ(const BaseScene& scene, const Anomalies& a, const Vec3& p) {
  bool in = inside_tissue(scene, a, p);
  if (a.has_shape && !a.bump) in = in && !a.shape_sphere.contains(p);
  return in;
}

double lesion_weight(const Sphere& lesion, const Vec3& p) {
  const double d = std::sqrt(norm2(p - lesion.center));
  if (d >= lesion.radius) return 0.0;
  // Full shift in the core, linear ramp over the outer 30% of the radius.
  return std::min(1.0, (1.0 - d / lesion.radius) / 0.3);
}

void apply_seg_noise(Volume& mask, const GenConfig& config, const BaseScene& scene, Rng& rng) {
  if (config.seg_noise <= 0.0) return;
  const double expected = 3.0 * config.seg_noise;
  int patches = static_cast<int>(expected);
  if (uniform01(rng) < expected - patches) ++patches;
  const int side = config.side;
  for (int i = 0; i < patches; ++i) {
    Sphere patch;
    patch.center = surface_point(scene, rng);
    patch.radius = uniform_in(rng, 0.05, 0.09) * side;
    const bool dilate = uniform01(rng) < 0.5;
    const int lo[3] = {
        std::max(0, static_cast<int>(std::floor(patch.center[0] - patch.radius))),
        std::max(0, static_cast<int>(std::floor(patch.center[1] - patch.radius))),
        std::max(0, static_cast<int>(std::floor(patch.center[2] - patch.radius)))};
    const int hi[3] = {
        std::min(side - 1, static_cast<int>(std::ceil(patch.center[0] + patch.radius))),
        std::min(side - 1, static_cast<int>(std::ceil(patch.center[1] + patch.radius))),
        std::min(side - 1, static_cast<int>(std::ceil(patch.center[2] + patch.radius)))};
    for (int z = lo[0]; z <= hi[0]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[2]; x <= hi[2]; ++x) {
          const Vec3 p = {static_cast<double>(z), static_cast<double>(y),
                          static_cast<double>(x)};
          if (patch.contains(p)) mask.at(z, y, x) = dilate ? 1.0f : 0.0f;
        }
  }
}

Sample make_case(const GenConfig& config, std::uint64_t case_index, int label,
                 CaseChannels* channels) {
  Rng base_rng(derive_seed(config.seed, case_index, 0));
  Rng anomaly_rng(derive_seed(config.seed, case_index, 1));
  Rng noise_rng(derive_seed(config.seed, case_index, 2));

  const int side = config.side;
  const BaseScene scene = draw_base_scene(side, base_rng);
  Anomalies anomalies;
  if (label == 1) anomalies = draw_anomalies(config, scene, anomaly_rng);
  if (channels) {
    channels->shape = anomalies.has_shape;
    channels->texture = anomalies.has_texture;
  }

  Sample sample;
  sample.z = label;
  sample.image = make_volume(VolumeKind::Image, {side, side, side});
  sample.mask = make_volume(VolumeKind::Mask, {side, side, side});

  // A bump takes the place of one clutter blob, keeping the per-case count
  // of boundary protrusions label-free.
  const std::size_t clutter_begin = (anomalies.has_shape && anomalies.bump) ? 1 : 0;
  std::int64_t organ_voxels = 0;
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const Vec3 p = {static_cast<double>(z), static_cast<double>(y),
                        static_cast<double>(x)};
        double value;
        if (inside_tissue(scene, anomalies, p)) {
          if (inside_organ(scene, anomalies, p)) {
            ++organ_voxels;
            sample.mask.at(z, y, x) = 1.0f;
          }
          value = kOrganBase + kOrganNoise * scene.organ_noise.at(p);
          if (anomalies.has_texture) value += kLesionShift * lesion_weight(anomalies.lesion, p);
        } else {
          bool clutter = false;
          for (std::size_t b = clutter_begin; b < scene.clutter.size(); ++b)
            if (scene.clutter[b].contains(p)) {
              clutter = true;
              break;
            }
          value = clutter ? kClutterBase + kOrganNoise * scene.organ_noise.at(p)
                          : kBackgroundBase + kBackgroundNoise * scene.background_noise.at(p);
        }
        sample.image.at(z, y, x) = static_cast<float>(value);
      }

  const double total = static_cast<double>(side) * side * side;
  const double occupancy = static_cast<double>(organ_voxels) / total;
  if (occupancy < 0.05 || occupancy > 0.30)
    throw ValidationError("generate: case " + std::to_string(case_index) +
                          " organ occupancy " + std::to_string(occupancy) +
                          " outside [0.05, 0.30]");

  apply_seg_noise(sample.mask, config, scene, noise_rng);
  return sample;
}

}  // namespace

void validate(const GenConfig& config) {
  if (config.side < 16) throw ConfigError("gen config: side must be >= 16");
  if (config.n_normal < 0 || config.n_abnormal < 0)
    throw ConfigError("gen config: case counts must be >= 0");
  if (config.shape_signal < 0.0 || config.shape_signal > 1.0 || config.texture_signal < 0.0 ||
      config.texture_signal > 1.0)
    throw ConfigError("gen config: signals must lie in [0, 1]");
  if (config.seg_noise < 0.0) throw ConfigError("gen config: seg_noise must be >= 0");
  if (config.n_abnormal > 0 && config.shape_signal <= 0.0 && config.texture_signal <= 0.0)
    throw ConfigError("gen config: abnormal cases need at least one anomaly channel enabled");
}

std::vector<Sample> generate(const GenConfig& config, std::vector<CaseChannels>* channels) {
  validate(config);
  const int total = config.n_normal + config.n_abnormal;
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(total));
  if (channels) channels->assign(static_cast<size_t>(total), {});
  for (int i = 0; i < total; ++i) {
    const int label = i >= config.n_normal;
    samples.push_back(make_case(config, static_cast<std::uint64_t>(i), label,
                                channels ? &(*channels)[static_cast<size_t>(i)] : nullptr));
  }
  return samples;
}

}  // namespace fusegrid
