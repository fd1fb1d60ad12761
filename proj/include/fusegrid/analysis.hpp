#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusegrid/model.hpp"

namespace fusegrid {

/// Cost conventions, applied uniformly so architecture comparisons are
/// meaningful even though absolute numbers depend on the convention:
///   params: conv Cout*(Cin*27 + 1); batch-norm 2*C; FC M*(N+1).
///   flops (forward, batch 1, multiply-accumulate = 2 ops):
///     conv 2*27*Cin*Cout*out_voxels; FC 2*M*N;
///     batch-norm, ReLU, pooling, fusion, sigmoid: 1 op per output element;
///     flatten free.
/// A per_layer entry covers one conv block (conv + BN + ReLU + pool), one
/// fusion op, or one FC stage.
struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct CostReport {
  FusionSpec spec;
  std::int64_t param_count = 0;
  std::int64_t flops = 0;
  std::vector<LayerCost> per_layer;
};

/// Closed-form accounting for the dual-branch network; branch layers 1..alpha
/// are counted twice (two unshared copies).
CostReport cost_report(const FusionSpec& spec);
std::int64_t count_params(const FusionSpec& spec);
std::int64_t count_flops(const FusionSpec& spec);

/// Same conventions for a single-branch model with the given input channels.
/// The returned report marks itself with spec.alpha == 0 (no fusion point).
CostReport cost_report_base(const BaseConfig& config, int in_channels);
std::int64_t count_params_base(const BaseConfig& config, int in_channels);

}  // namespace fusegrid
