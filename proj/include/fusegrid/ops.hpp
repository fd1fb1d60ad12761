#pragma once

#include <vector>

#include "fusegrid/tensor.hpp"

namespace fusegrid::ops {

inline constexpr float kBnEpsilon = 1e-5f;
inline constexpr float kBnMomentum = 0.9f;

/// Per-channel running statistics of a batch-norm layer. Fresh state holds
/// the defaults (mean 0, var 1), so eval before any train step is valid.
struct BatchNormState {
  std::vector<float> running_mean;
  std::vector<float> running_var;

  BatchNormState() = default;
  explicit BatchNormState(int channels)
      : running_mean(static_cast<size_t>(channels), 0.0f),
        running_var(static_cast<size_t>(channels), 1.0f) {}
};

/// 3x3x3 cross-correlation, stride 1, zero padding 1 on every spatial side;
/// output spatial shape equals input spatial shape.
/// input [B,Cin,D,H,W], weight [Cout,Cin,3,3,3], bias [Cout] -> [B,Cout,D,H,W].
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// 2x2x2 max pooling with stride 2; spatial dims must be even. Gradient
/// routes to the argmax voxel, first index in scan order on ties.
Tensor maxpool3d(const Tensor& input);

/// 2x2x2 average pooling with stride 2; spatial dims must be even.
Tensor avgpool3d(const Tensor& input);

/// Batch normalization over (B,D,H,W) per channel. Training mode normalizes
/// by batch statistics (epsilon kBnEpsilon) and updates `state` with momentum
/// kBnMomentum; eval mode normalizes by the running statistics.
Tensor batchnorm3d(const Tensor& input, const Tensor& gamma, const Tensor& beta_shift,
                   BatchNormState& state, bool training);

Tensor relu(const Tensor& input);

/// Numerically safe logistic; outputs lie strictly inside (0,1) even for
/// inputs far outside [-100, 100].
Tensor sigmoid(const Tensor& input);

/// input [B,N] * weight [M,N]^T + bias [M] -> [B,M].
Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Concatenates along the channel axis (axis 1); all other dims must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// [B,...] -> [B,N].
Tensor flatten(const Tensor& input);

/// Sum of all elements -> scalar tensor.
Tensor sum(const Tensor& input);

}  // namespace fusegrid::ops
