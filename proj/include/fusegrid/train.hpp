#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fusegrid/metrics.hpp"
#include "fusegrid/model.hpp"
#include "fusegrid/volume.hpp"

namespace fusegrid {

/// SGD loop hyperparameters. The learning rate at step t is lr0 * decay^t.
struct TrainConfig {
  int batch_size = 4;
  double lr0 = 0.01;
  double decay = 0.9997;
  int iterations = 1500;
  double lambda = 0.7;  // positive-class weight of the loss
  std::uint64_t seed = 0;
  bool augment = true;  // random rotation variant per sampled case
};

/// Throws ConfigError on out-of-range fields (decay outside (0,1], lambda
/// outside (0,1), non-positive batch size / lr0, negative iterations).
void validate(const TrainConfig& config);

/// One labeled case: intensity volume, binary mask, abnormality label
/// (1 = abnormal). Image and mask share dims.
struct Sample {
  Volume image;
  Volume mask;
  int z = 0;
};

/// Disjoint index lists covering a dataset exactly once.
struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;
};

/// Weighted binary cross-entropy, averaged over the batch:
///   mean_i [ -lambda*z_i*log p_i - (1-lambda)*(1-z_i)*log(1-p_i) ].
/// p has one probability per label ([B,1] or [B]); probabilities are clamped
/// to [1e-7, 1-1e-7] inside the log. The backward pass evaluates the
/// derivative at the clamped probability, so saturated outputs keep a finite
/// restoring gradient.
Tensor weighted_bce(const Tensor& p, const std::vector<int>& z, double lambda);

inline constexpr double kProbEpsilon = 1e-7;

/// lr0 * decay^iter.
double lr_at(std::int64_t iter, const TrainConfig& config);

struct TrainResult {
  std::vector<double> loss_history;  // one entry per iteration
};

/// Plain SGD on weighted_bce: per iteration, draw batch_size training indices
/// uniformly with replacement, optionally rotate each drawn (image, mask)
/// pair by one of the 27 axis-angle variants, forward in train mode, step
/// every parameter by lr_at(t). The model is left in eval mode. Fully
/// reproducible from (initial weights, config.seed). `indices` restricts
/// sampling to a subset of `data`; labels outside it are ignored.
TrainResult train_model(Model& model, const std::vector<Sample>& data,
                        const std::vector<std::size_t>& indices, const TrainConfig& config);
TrainResult train_model(Model& model, const std::vector<Sample>& data, const TrainConfig& config);

/// Stratified k-fold split, deterministic from the seed: each class's indices
/// are shuffled and dealt round-robin, so fold sizes differ by at most one
/// per class. Throws ConfigError when k exceeds the smaller class count.
FoldSplit make_folds(const std::vector<Sample>& samples, int k, std::uint64_t seed);

/// Eval-mode probabilities for the listed samples; case ids are the decimal
/// sample indices.
std::vector<ScoredCase> score_samples(Model& model, const std::vector<Sample>& samples,
                                      const std::vector<std::size_t>& indices);

/// One trained-and-evaluated cross-validation job (one spec on one held-out
/// fold).
struct CvJob {
  std::size_t spec_index = 0;
  int fold = 0;
  EvalReport report;
};

struct CvResult {
  std::vector<CvJob> jobs;          // spec-major, fold-minor
  std::vector<EvalReport> pooled;   // one per spec, held-out scores pooled over folds
  std::vector<std::size_t> ranking; // spec indices, best pooled F1 first
};

/// Called after each finished job (under a lock when jobs > 1); for progress
/// reporting.
using CvProgress = std::function<void(const CvJob&)>;

/// Seed tags for the single-branch baseline jobs, far outside any grid's spec
/// index range. run_baselines reports its progress jobs under these values of
/// CvJob::spec_index.
inline constexpr std::uint64_t kMaskJobTag = 1'000'000;
inline constexpr std::uint64_t kImageJobTag = 1'000'001;

/// Full grid run: for every spec and fold, train on the other folds and score
/// the held-out one. Job seeds derive from (config.seed, spec index, fold),
/// so results do not depend on worker count or completion order. Ranking
/// sorts by pooled F1 descending, ties by AUC descending, then by spec order.
CvResult run_cv(const std::vector<FusionSpec>& space, const std::vector<Sample>& samples,
                const TrainConfig& config, const FoldSplit& folds, int jobs = 1,
                const CvProgress& progress = {});

/// Single-branch baselines on the same folds: mask-only and image-only models
/// trained per fold, their pooled reports, the naive average fusion of the
/// two pooled score lists, and the either-model-correct upper bound.
struct BaselineResult {
  EvalReport mask_report;
  EvalReport image_report;
  EvalReport naive_report;
  ConfusionMetrics gt_bound;
};

BaselineResult run_baselines(const BaseConfig& base, const std::vector<Sample>& samples,
                             const TrainConfig& config, const FoldSplit& folds, int jobs = 1,
                             const CvProgress& progress = {});

}  // namespace fusegrid
