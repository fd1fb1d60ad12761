#pragma once

#include <cstdint>
#include <vector>

#include "fusegrid/train.hpp"

namespace fusegrid {

/// Generator controls. Abnormal cases draw their anomaly channels
/// independently: shape_signal / texture_signal are the per-channel
/// probabilities, redrawn until at least one channel is present.
struct GenConfig {
  int side = 32;
  int n_normal = 200;
  int n_abnormal = 136;
  double shape_signal = 0.5;    // boundary bump or dent, visible in the mask
  double texture_signal = 0.5;  // intensity lesion inside the organ, mask-invisible
  double seg_noise = 0.0;       // expected boundary patches per mask (scaled by 3)
  std::uint64_t seed = 0;
};

/// Throws ConfigError on side < 16, negative counts, signals outside [0,1],
/// negative seg_noise, or abnormal cases requested with both signals at 0.
void validate(const GenConfig& config);

/// Which anomaly channels one generated case carries (both false for
/// normals).
struct CaseChannels {
  bool shape = false;
  bool texture = false;
};

/// Deterministic scene synthesis, one Sample per case: normals first, then
/// abnormals. Each case is a jittered rotated ellipsoid organ with value-noise
/// texture on a darker noisy background, plus 2-4 organ-intensity clutter
/// blobs outside the organ. The mask is the organ support, optionally
/// boundary-perturbed by seg_noise patches; texture lesions never reach the
/// mask. Images are raw HU-like intensities; run normalize_hu before
/// training. Per-case sub-seeds keep the base scene of a given case index
/// identical across signal settings.
std::vector<Sample> generate(const GenConfig& config,
                             std::vector<CaseChannels>* channels = nullptr);

}  // namespace fusegrid
