#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fusegrid/ops.hpp"
#include "fusegrid/rng.hpp"
#include "fusegrid/tensor.hpp"

namespace fusegrid {

/// Hyperparameters of the single-branch classifier stack.
struct BaseConfig {
  int num_layers = 6;
  std::vector<int> channels = {16, 32, 64, 128, 128, 128};
  int input_side = 32;
  std::vector<int> pool_after = {1, 2, 3, 4, 5};  // 1-based layer indices
  int fc_hidden = 256;
};

/// Throws ConfigError when fields are inconsistent (channel count vs layers,
/// pool indices out of range or duplicated, input_side not divisible by the
/// total pooling factor).
void validate(const BaseConfig& config);

enum class FusionOp { Add, Mul, Concat };

/// Which volume a single-branch model consumes; Both concatenates mask and
/// image as a 2-channel input.
enum class BaseInput { Mask, Image, Both };

/// A point (alpha, beta) of the architecture search space.
struct FusionSpec {
  int alpha = 1;
  FusionOp beta = FusionOp::Add;
  BaseConfig base;
};

void validate(const FusionSpec& spec);

const char* fusion_op_name(FusionOp op);      // "add" / "mul" / "concat"
const char* fusion_op_symbol(FusionOp op);    // "+" / "*" / "⊕"
FusionOp fusion_op_from_name(const std::string& name);

/// Classifier network: either one conv stack (base) or two unshared branch
/// stacks of layers 1..alpha fused into a shared trunk. Holds parameters,
/// batch-norm running state, and the train/eval mode flag.
class Model {
 public:
  /// mask and image must both be [B,1,s,s,s] with s == input_side; mask
  /// voxels must be within 1e-6 of {0,1}. Returns probabilities [B,1].
  /// Records an autograd graph only in train mode.
  Tensor forward(const Tensor& mask, const Tensor& image);

  void set_train(bool on) { train_ = on; }
  bool training() const { return train_; }

  bool is_fused() const { return fused_; }
  const BaseConfig& base_config() const { return config_; }
  const FusionSpec& fusion_spec() const;  // throws ValidationError on base models
  BaseInput base_input() const;           // throws ValidationError on fused models

  /// All trainable parameters with their unique names, in build order.
  std::vector<Parameter> parameters() const;
  /// Named mutable views of the non-trainable state (batch-norm running
  /// mean/var), for checkpointing.
  std::vector<std::pair<std::string, std::span<float>>> state_buffers();

  /// Activation shapes recorded by the most recent forward, one entry per
  /// block output plus the FC stages; used to cross-check computed shapes.
  const std::vector<std::vector<int>>& last_forward_shapes() const { return last_shapes_; }

 private:
  struct ConvBlock {
    std::string name;  // "conv3" or "branch1.conv2"; BN entries swap the stem
    Tensor weight, bias, gamma, beta;
    ops::BatchNormState bn;
    bool pool = false;
  };

  static std::vector<ConvBlock> make_blocks(const BaseConfig& config, int first_in,
                                            int lo_layer, int hi_layer,
                                            const std::string& stem, Rng& rng);
  Tensor run_blocks(std::vector<ConvBlock>& blocks, Tensor h);
  Tensor head(Tensor features);

  friend Model build_base(const BaseConfig&, BaseInput, std::uint64_t);
  friend Model build_fused(const FusionSpec&, std::uint64_t);

  BaseConfig config_;
  bool fused_ = false;
  FusionSpec spec_;            // valid iff fused_
  BaseInput input_ = BaseInput::Mask;  // valid iff !fused_
  std::vector<ConvBlock> branch1_, branch2_;  // layers 1..alpha (fused only)
  std::vector<ConvBlock> trunk_;              // base: all layers; fused: alpha+1..L
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  bool train_ = true;
  std::vector<std::vector<int>> last_shapes_;
};

/// Single-branch stack per the declared config; `input` selects what the
/// first conv consumes (1 channel for Mask/Image, 2 for Both).
Model build_base(const BaseConfig& config, BaseInput input, std::uint64_t seed = 0);

/// Dual-branch network: branch 1 consumes the mask, branch 2 the image,
/// fused with spec.beta after block alpha (including its pooling), then the
/// shared trunk. Concat doubles the channels entering layer alpha+1, or the
/// FC input when alpha == L.
Model build_fused(const FusionSpec& spec, std::uint64_t seed = 0);

/// The full search grid: alpha ascending 1..L, beta in {Add, Mul, Concat}
/// order within each alpha.
std::vector<FusionSpec> enumerate_space(const BaseConfig& base);

/// Checkpoint: little-endian records (u32 name length, name bytes, u32 rank,
/// u32 dims, float32 payload) covering every parameter and batch-norm running
/// buffer, plus a JSON sidecar at <path>.json describing the architecture.
void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace fusegrid
