#include "fusegrid/analysis.hpp"

#include <algorithm>

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

bool pooled_at(const BaseConfig& config, int layer) {
  return std::find(config.pool_after.begin(), config.pool_after.end(), layer) !=
         config.pool_after.end();
}

/// Conv block cost at a given layer. `side` is the spatial side entering the
/// block; conv keeps it (stride 1, pad 1), pooling afterwards halves it.
LayerCost conv_block_cost(const std::string& name, int cin, int cout, int side, bool pool) {
  LayerCost c;
  c.name = name;
  const std::int64_t voxels = static_cast<std::int64_t>(side) * side * side;
  c.params = static_cast<std::int64_t>(cout) * (static_cast<std::int64_t>(cin) * 27 + 1) +
             2LL * cout;
  c.flops = 2LL * 27 * cin * cout * voxels;  // conv
  c.flops += 2LL * cout * voxels;            // batch-norm + relu, one op each
  if (pool) c.flops += cout * voxels / 8;    // one op per pooled output element
  return c;
}

void fc_costs(const BaseConfig& config, std::int64_t fc_in, std::vector<LayerCost>& out) {
  LayerCost fc1{"fc1", 0, 0};
  fc1.params = static_cast<std::int64_t>(config.fc_hidden) * (fc_in + 1);
  fc1.flops = 2LL * config.fc_hidden * fc_in + config.fc_hidden;  // affine + relu
  out.push_back(fc1);
  LayerCost fc2{"fc2", 0, 0};
  fc2.params = static_cast<std::int64_t>(config.fc_hidden) + 1;
  fc2.flops = 2LL * config.fc_hidden + 1;  // affine + sigmoid
  out.push_back(fc2);
}

CostReport finalize(CostReport report) {
  for (const LayerCost& l : report.per_layer) {
    report.param_count += l.params;
    report.flops += l.flops;
  }
  return report;
}

}  // namespace

CostReport cost_report(const FusionSpec& spec) {
  validate(spec);
  const BaseConfig& config = spec.base;
  CostReport report;
  report.spec = spec;

  int side = config.input_side;
  int cin = 1;
  for (int layer = 1; layer <= spec.alpha; ++layer) {
    const int cout = config.channels[layer - 1];
    const bool pool = pooled_at(config, layer);
    for (const char* stem : {"branch1.conv", "branch2.conv"})
      report.per_layer.push_back(
          conv_block_cost(stem + std::to_string(layer), cin, cout, side, pool));
    cin = cout;
    if (pool) side /= 2;
  }

  const bool concat = spec.beta == FusionOp::Concat;
  const int fused_ch = cin * (concat ? 2 : 1);
  LayerCost fusion{std::string("fusion.") + fusion_op_name(spec.beta), 0,
                   static_cast<std::int64_t>(fused_ch) * side * side * side};
  report.per_layer.push_back(fusion);

  cin = fused_ch;
  for (int layer = spec.alpha + 1; layer <= config.num_layers; ++layer) {
    const int cout = config.channels[layer - 1];
    const bool pool = pooled_at(config, layer);
    report.per_layer.push_back(
        conv_block_cost("trunk.conv" + std::to_string(layer), cin, cout, side, pool));
    cin = cout;
    if (pool) side /= 2;
  }

  fc_costs(config, static_cast<std::int64_t>(cin) * side * side * side, report.per_layer);
  return finalize(std::move(report));
}

std::int64_t count_params(const FusionSpec& spec) { return cost_report(spec).param_count; }
std::int64_t count_flops(const FusionSpec& spec) { return cost_report(spec).flops; }

CostReport cost_report_base(const BaseConfig& config, int in_channels) {
  validate(config);
  if (in_channels < 1) throw ConfigError("in_channels must be positive");
  CostReport report;
  report.spec.alpha = 0;
  report.spec.beta = FusionOp::Add;
  report.spec.base = config;

  int side = config.input_side;
  int cin = in_channels;
  for (int layer = 1; layer <= config.num_layers; ++layer) {
    const int cout = config.channels[layer - 1];
    const bool pool = pooled_at(config, layer);
    report.per_layer.push_back(
        conv_block_cost("conv" + std::to_string(layer), cin, cout, side, pool));
    cin = cout;
    if (pool) side /= 2;
  }
  fc_costs(config, static_cast<std::int64_t>(cin) * side * side * side, report.per_layer);
  return finalize(std::move(report));
}

std::int64_t count_params_base(const BaseConfig& config, int in_channels) {
  return cost_report_base(config, in_channels).param_count;
}

}  // namespace fusegrid
