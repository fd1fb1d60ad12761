#include "fusegrid/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

#include "fusegrid/errors.hpp"
#include "fusegrid/rng.hpp"

namespace fusegrid {

namespace {

constexpr float kMaskTolerance = 1e-6f;

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / fan_in);
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<float> data(static_cast<size_t>(n));
  for (float& v : data) v = static_cast<float>(normal_draw(rng) * std_dev);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

void require_input(const Tensor& t, const char* what, int side) {
  if (t.rank() != 5 || t.dim(1) != 1)
    throw ShapeError(std::string("forward: ") + what + " must be [B,1,s,s,s]");
  if (t.dim(2) != side || t.dim(3) != side || t.dim(4) != side)
    throw ShapeError(std::string("forward: ") + what + " side " + std::to_string(t.dim(2)) +
                     " does not match configured input side " + std::to_string(side));
}

}  // namespace

void validate(const BaseConfig& config) {
  if (config.num_layers < 1) throw ConfigError("config: num_layers must be >= 1");
  if (static_cast<int>(config.channels.size()) != config.num_layers)
    throw ConfigError("config: channels list length must equal num_layers");
  for (int c : config.channels)
    if (c < 1) throw ConfigError("config: channel counts must be positive");
  if (config.fc_hidden < 1) throw ConfigError("config: fc_hidden must be positive");
  std::set<int> pools(config.pool_after.begin(), config.pool_after.end());
  if (pools.size() != config.pool_after.size())
    throw ConfigError("config: pool_after has duplicate layer indices");
  for (int p : config.pool_after)
    if (p < 1 || p > config.num_layers)
      throw ConfigError("config: pool_after index " + std::to_string(p) + " out of range");
  const int factor = 1 << config.pool_after.size();
  if (config.input_side < factor || config.input_side % factor != 0)
    throw ConfigError("config: input_side " + std::to_string(config.input_side) +
                      " is not divisible by the pooling factor " + std::to_string(factor));
}

void validate(const FusionSpec& spec) {
  validate(spec.base);
  if (spec.alpha < 1 || spec.alpha > spec.base.num_layers)
    throw ConfigError("fusion spec: alpha " + std::to_string(spec.alpha) +
                      " outside [1, " + std::to_string(spec.base.num_layers) + "]");
}

const char* fusion_op_name(FusionOp op) {
  switch (op) {
    case FusionOp::Add: return "add";
    case FusionOp::Mul: return "mul";
    case FusionOp::Concat: return "concat";
  }
  throw ConfigError("unknown fusion op");
}

const char* fusion_op_symbol(FusionOp op) {
  switch (op) {
    case FusionOp::Add: return "+";
    case FusionOp::Mul: return "*";
    case FusionOp::Concat: return "\xE2\x8A\x95";  // ⊕
  }
  throw ConfigError("unknown fusion op");
}

FusionOp fusion_op_from_name(const std::string& name) {
  if (name == "add") return FusionOp::Add;
  if (name == "mul") return FusionOp::Mul;
  if (name == "concat") return FusionOp::Concat;
  throw ConfigError("unknown fusion op name: " + name);
}

const FusionSpec& Model::fusion_spec() const {
  if (!fused_) throw ValidationError("base model has no fusion spec");
  return spec_;
}

BaseInput Model::base_input() const {
  if (fused_) throw ValidationError("fused model has no base input selector");
  return input_;
}

Tensor Model::run_blocks(std::vector<ConvBlock>& blocks, Tensor h) {
  for (ConvBlock& b : blocks) {
    h = ops::conv3d(h, b.weight, b.bias);
    h = ops::batchnorm3d(h, b.gamma, b.beta, b.bn, train_);
    h = ops::relu(h);
    if (b.pool) h = ops::maxpool3d(h);
    last_shapes_.push_back(h.shape());
  }
  return h;
}

Tensor Model::head(Tensor features) {
  Tensor h = ops::flatten(std::move(features));
  h = ops::relu(ops::fully_connected(h, fc1_w_, fc1_b_));
  last_shapes_.push_back(h.shape());
  h = ops::sigmoid(ops::fully_connected(h, fc2_w_, fc2_b_));
  last_shapes_.push_back(h.shape());
  return h;
}

Tensor Model::forward(const Tensor& mask, const Tensor& image) {
  require_input(mask, "mask", config_.input_side);
  require_input(image, "image", config_.input_side);
  if (mask.shape() != image.shape())
    throw ShapeError("forward: mask and image batch sizes differ");
  for (float v : mask.data())
    if (std::abs(v) > kMaskTolerance && std::abs(v - 1.0f) > kMaskTolerance)
      throw ValidationError("forward: mask voxel " + std::to_string(v) +
                            " is not binary");

  std::optional<NoGradGuard> guard;
  if (!train_) guard.emplace();
  last_shapes_.clear();
  Tensor h;
  if (fused_) {
    Tensor f1 = run_blocks(branch1_, mask);
    Tensor f2 = run_blocks(branch2_, image);
    switch (spec_.beta) {
      case FusionOp::Add: h = ops::add(f1, f2); break;
      case FusionOp::Mul: h = ops::mul(f1, f2); break;
      case FusionOp::Concat: h = ops::concat_channels(f1, f2); break;
    }
    last_shapes_.push_back(h.shape());
    h = run_blocks(trunk_, std::move(h));
  } else {
    switch (input_) {
      case BaseInput::Mask: h = mask; break;
      case BaseInput::Image: h = image; break;
      case BaseInput::Both: h = ops::concat_channels(mask, image); break;
    }
    h = run_blocks(trunk_, std::move(h));
  }
  return head(std::move(h));
}

std::vector<Parameter> Model::parameters() const {
  std::vector<Parameter> out;
  auto add_block = [&out](const ConvBlock& b) {
    const auto bn_name = [&b](const char* field) {
      std::string n = b.name;
      const auto pos = n.rfind("conv");
      n.replace(pos, 4, "bn");
      return n + "." + field;
    };
    out.push_back({b.name + ".weight", b.weight});
    out.push_back({b.name + ".bias", b.bias});
    out.push_back({bn_name("gamma"), b.gamma});
    out.push_back({bn_name("beta"), b.beta});
  };
  for (const ConvBlock& b : branch1_) add_block(b);
  for (const ConvBlock& b : branch2_) add_block(b);
  for (const ConvBlock& b : trunk_) add_block(b);
  out.push_back({"fc1.weight", fc1_w_});
  out.push_back({"fc1.bias", fc1_b_});
  out.push_back({"fc2.weight", fc2_w_});
  out.push_back({"fc2.bias", fc2_b_});
  return out;
}

std::vector<std::pair<std::string, std::span<float>>> Model::state_buffers() {
  std::vector<std::pair<std::string, std::span<float>>> out;
  auto add_block = [&out](ConvBlock& b) {
    std::string n = b.name;
    n.replace(n.rfind("conv"), 4, "bn");
    out.emplace_back(n + ".running_mean", std::span<float>(b.bn.running_mean));
    out.emplace_back(n + ".running_var", std::span<float>(b.bn.running_var));
  };
  for (ConvBlock& b : branch1_) add_block(b);
  for (ConvBlock& b : branch2_) add_block(b);
  for (ConvBlock& b : trunk_) add_block(b);
  return out;
}

std::vector<Model::ConvBlock> Model::make_blocks(const BaseConfig& config, int first_in,
                                                 int lo_layer, int hi_layer,
                                                 const std::string& stem, Rng& rng) {
  std::vector<ConvBlock> blocks;
  int in_ch = first_in;
  for (int layer = lo_layer; layer <= hi_layer; ++layer) {
    const int out_ch = config.channels[layer - 1];
    ConvBlock b;
    b.name = stem + "conv" + std::to_string(layer);
    b.weight = he_normal({out_ch, in_ch, 3, 3, 3}, in_ch * 27, rng);
    b.bias = Tensor::zeros({out_ch}, true);
    b.gamma = Tensor::full({out_ch}, 1.0f, true);
    b.beta = Tensor::zeros({out_ch}, true);
    b.bn = ops::BatchNormState(out_ch);
    b.pool = std::find(config.pool_after.begin(), config.pool_after.end(), layer) !=
             config.pool_after.end();
    blocks.push_back(std::move(b));
    in_ch = out_ch;
  }
  return blocks;
}

Model build_base(const BaseConfig& config, BaseInput input, std::uint64_t seed) {
  validate(config);
  Model m;
  m.config_ = config;
  m.fused_ = false;
  m.input_ = input;
  Rng rng(mix_seed(seed));
  const int in_ch = input == BaseInput::Both ? 2 : 1;
  m.trunk_ = Model::make_blocks(config, in_ch, 1, config.num_layers, "", rng);

  const int pools = static_cast<int>(config.pool_after.size());
  const int final_side = config.input_side >> pools;
  const int fc_in = config.channels.back() * final_side * final_side * final_side;
  m.fc1_w_ = he_normal({config.fc_hidden, fc_in}, fc_in, rng);
  m.fc1_b_ = Tensor::zeros({config.fc_hidden}, true);
  m.fc2_w_ = he_normal({1, config.fc_hidden}, config.fc_hidden, rng);
  m.fc2_b_ = Tensor::zeros({1}, true);
  return m;
}

Model build_fused(const FusionSpec& spec, std::uint64_t seed) {
  validate(spec);
  const BaseConfig& config = spec.base;
  Model m;
  m.config_ = config;
  m.fused_ = true;
  m.spec_ = spec;
  Rng rng(mix_seed(seed));

  m.branch1_ = Model::make_blocks(config, 1, 1, spec.alpha, "branch1.", rng);
  m.branch2_ = Model::make_blocks(config, 1, 1, spec.alpha, "branch2.", rng);

  const bool concat = spec.beta == FusionOp::Concat;
  const int fused_ch = config.channels[spec.alpha - 1] * (concat ? 2 : 1);
  if (spec.alpha < config.num_layers)
    m.trunk_ = Model::make_blocks(config, fused_ch, spec.alpha + 1, config.num_layers,
                                  "trunk.", rng);

  const int pools = static_cast<int>(config.pool_after.size());
  const int final_side = config.input_side >> pools;
  const int last_ch = spec.alpha < config.num_layers ? config.channels.back() : fused_ch;
  const int fc_in = last_ch * final_side * final_side * final_side;
  m.fc1_w_ = he_normal({config.fc_hidden, fc_in}, fc_in, rng);
  m.fc1_b_ = Tensor::zeros({config.fc_hidden}, true);
  m.fc2_w_ = he_normal({1, config.fc_hidden}, config.fc_hidden, rng);
  m.fc2_b_ = Tensor::zeros({1}, true);
  return m;
}

std::vector<FusionSpec> enumerate_space(const BaseConfig& base) {
  validate(base);
  std::vector<FusionSpec> out;
  out.reserve(static_cast<size_t>(3 * base.num_layers));
  for (int alpha = 1; alpha <= base.num_layers; ++alpha)
    for (FusionOp beta : {FusionOp::Add, FusionOp::Mul, FusionOp::Concat})
      out.push_back({alpha, beta, base});
  return out;
}

}  // namespace fusegrid
