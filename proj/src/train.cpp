#include "fusegrid/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

#include "fusegrid/errors.hpp"
#include "fusegrid/preprocess.hpp"
#include "fusegrid/rng.hpp"

namespace fusegrid {

namespace {

constexpr int kEvalBatch = 16;

void attach_node(Tensor& out, const char* op, std::vector<Tensor> inputs,
                 std::function<void(const detail::TensorImpl&)> backward) {
  out.impl()->requires_grad = true;
  auto node = std::make_shared<detail::AutogradNode>();
  node->op = op;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->node = std::move(node);
}

double clamped(double p) {
  return std::min(std::max(p, kProbEpsilon), 1.0 - kProbEpsilon);
}

// Copies one (possibly augmented) sample into row `slot` of the batch
// buffers.
void fill_slot(std::vector<float>& mask_buf, std::vector<float>& image_buf, std::size_t slot,
               const Volume& mask, const Volume& image) {
  const std::size_t n = mask.data.size();
  std::memcpy(mask_buf.data() + slot * n, mask.data.data(), n * sizeof(float));
  std::memcpy(image_buf.data() + slot * n, image.data.data(), n * sizeof(float));
}

struct CvTask {
  std::size_t slot;       // result index
  std::uint64_t seed_tag; // spec index or baseline tag
  int fold;
};

// Runs `worker` over the task list with `jobs` threads (sequentially when
// jobs <= 1). The first exception thrown by any worker is rethrown here.
void run_jobs(const std::vector<CvTask>& tasks, int jobs,
              const std::function<void(const CvTask&)>& worker) {
  if (jobs <= 1) {
    for (const CvTask& t : tasks) worker(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::vector<std::thread> pool;
  const int n_workers = std::min<int>(jobs, static_cast<int>(tasks.size()));
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&, w] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= tasks.size()) return;
        try {
          worker(tasks[i]);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<std::size_t> training_indices(const FoldSplit& folds, std::size_t held_out) {
  std::vector<std::size_t> idx;
  for (std::size_t f = 0; f < folds.folds.size(); ++f) {
    if (f == held_out) continue;
    idx.insert(idx.end(), folds.folds[f].begin(), folds.folds[f].end());
  }
  return idx;
}

void validate_folds(const FoldSplit& folds, std::size_t n_samples) {
  std::vector<char> seen(n_samples, 0);
  std::size_t total = 0;
  for (const auto& fold : folds.folds) {
    for (std::size_t i : fold) {
      if (i >= n_samples)
        throw ValidationError("folds: index " + std::to_string(i) + " out of range");
      if (seen[i]) throw ValidationError("folds: index " + std::to_string(i) + " repeated");
      seen[i] = 1;
      ++total;
    }
  }
  if (total != n_samples)
    throw ValidationError("folds: cover " + std::to_string(total) + " of " +
                          std::to_string(n_samples) + " samples");
}

std::vector<ScoredCase> pool_scores(const std::vector<const EvalReport*>& fold_reports) {
  std::vector<ScoredCase> pooled;
  for (const EvalReport* r : fold_reports)
    pooled.insert(pooled.end(), r->scores.begin(), r->scores.end());
  return pooled;
}

}  // namespace

void validate(const TrainConfig& config) {
  if (config.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(config.lr0 > 0.0)) throw ConfigError("train config: lr0 must be > 0");
  if (!(config.decay > 0.0) || config.decay > 1.0)
    throw ConfigError("train config: decay must lie in (0, 1]");
  if (config.iterations < 0) throw ConfigError("train config: iterations must be >= 0");
  if (!(config.lambda > 0.0 && config.lambda < 1.0))
    throw ConfigError("train config: lambda must lie in (0, 1)");
}

Tensor weighted_bce(const Tensor& p, const std::vector<int>& z, double lambda) {
  if (!(lambda > 0.0 && lambda < 1.0))
    throw ConfigError("weighted_bce: lambda must lie in (0, 1)");
  if (p.rank() > 2 || (p.rank() == 2 && p.dim(1) != 1))
    throw ShapeError("weighted_bce: probabilities must be [B,1] or [B]");
  const std::size_t n = static_cast<std::size_t>(p.size());
  if (n != z.size())
    throw ShapeError("weighted_bce: " + std::to_string(n) + " probabilities vs " +
                     std::to_string(z.size()) + " labels");
  if (n == 0) throw ValidationError("weighted_bce: empty batch");
  for (int label : z)
    if (label != 0 && label != 1)
      throw ValidationError("weighted_bce: labels must be 0 or 1");

  const std::span<const float> pv = p.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = clamped(pv[i]);
    acc += z[i] ? -lambda * std::log(pc) : -(1.0 - lambda) * std::log1p(-pc);
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));

  if (grad_enabled() && p.requires_grad()) {
    Tensor in = p;
    std::vector<int> labels = z;
    attach_node(out, "weighted_bce", {p}, [in, labels, lambda, n](const detail::TensorImpl& o) mutable {
      in.ensure_grad();
      const float g = o.grad[0];
      const std::span<const float> values = in.data();
      const std::span<float> grad = in.grad();
      const double scale = static_cast<double>(g) / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double pc = clamped(values[i]);
        const double d = labels[i] ? -lambda / pc : (1.0 - lambda) / (1.0 - pc);
        grad[i] += static_cast<float>(scale * d);
      }
    });
  }
  return out;
}

double lr_at(std::int64_t iter, const TrainConfig& config) {
  if (iter < 0) throw ConfigError("lr_at: iteration must be >= 0");
  return config.lr0 * std::pow(config.decay, static_cast<double>(iter));
}

TrainResult train_model(Model& model, const std::vector<Sample>& data,
                        const std::vector<std::size_t>& indices, const TrainConfig& config) {
  validate(config);
  if (indices.empty()) throw ValidationError("train: training set is empty");
  for (std::size_t i : indices)
    if (i >= data.size())
      throw ValidationError("train: sample index " + std::to_string(i) + " out of range");

  const std::array<int, 3> dims = data[indices[0]].image.dims;
  bool has_normal = false, has_abnormal = false;
  for (std::size_t i : indices) {
    const Sample& s = data[i];
    if (s.z != 0 && s.z != 1)
      throw ValidationError("train: sample " + std::to_string(i) + " has non-binary label");
    if (s.image.dims != dims || s.mask.dims != dims)
      throw ValidationError("train: sample " + std::to_string(i) +
                            " does not match the common volume dims");
    (s.z ? has_abnormal : has_normal) = true;
  }
  if (!has_normal || !has_abnormal)
    std::cerr << "warning: training set contains a single class; the loss will saturate\n";

  Rng rng(mix_seed(config.seed));
  const std::size_t voxels =
      static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
      static_cast<std::size_t>(dims[2]);
  const int B = config.batch_size;
  const std::vector<int> batch_shape = {B, 1, dims[0], dims[1], dims[2]};

  std::vector<Parameter> params = model.parameters();
  model.set_train(true);

  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(config.iterations));
  std::vector<float> mask_buf(static_cast<std::size_t>(B) * voxels);
  std::vector<float> image_buf(mask_buf.size());
  std::vector<int> labels(static_cast<std::size_t>(B));

  for (int t = 0; t < config.iterations; ++t) {
    for (int b = 0; b < B; ++b) {
      const Sample& s = data[indices[uniform_below(rng, indices.size())]];
      labels[static_cast<std::size_t>(b)] = s.z;
      if (config.augment) {
        const int variant = static_cast<int>(uniform_below(rng, 27));
        auto [image, mask] = rotate_pair(s.image, s.mask, variant_angles(variant));
        fill_slot(mask_buf, image_buf, static_cast<std::size_t>(b), mask, image);
      } else {
        fill_slot(mask_buf, image_buf, static_cast<std::size_t>(b), s.mask, s.image);
      }
    }
    Tensor mask_t = Tensor::from_data(batch_shape, mask_buf);
    Tensor image_t = Tensor::from_data(batch_shape, image_buf);

    Tensor p = model.forward(mask_t, image_t);
    Tensor loss = weighted_bce(p, labels, config.lambda);
    backward(loss);

    const float lr = static_cast<float>(lr_at(t, config));
    for (Parameter& param : params) {
      const std::span<const float> g = param.tensor.grad();
      if (g.empty()) continue;
      const std::span<float> w = param.tensor.data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      param.tensor.zero_grad();
    }
    result.loss_history.push_back(static_cast<double>(loss.item()));
  }

  model.set_train(false);
  return result;
}

TrainResult train_model(Model& model, const std::vector<Sample>& data, const TrainConfig& config) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return train_model(model, data, all, config);
}

FoldSplit make_folds(const std::vector<Sample>& samples, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("make_folds: k must be >= 1");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int z = samples[i].z;
    if (z != 0 && z != 1)
      throw ValidationError("make_folds: sample " + std::to_string(i) + " has non-binary label");
    by_class[z].push_back(i);
  }
  const std::size_t smaller = std::min(by_class[0].size(), by_class[1].size());
  if (static_cast<std::size_t>(k) > smaller)
    throw ConfigError("make_folds: k = " + std::to_string(k) +
                      " exceeds the smaller class count " + std::to_string(smaller));

  Rng rng(mix_seed(seed));
  FoldSplit split;
  split.folds.resize(static_cast<std::size_t>(k));
  for (std::vector<std::size_t>& cls : by_class) {
    // Fisher-Yates with owned draws; std::shuffle's draw sequence is
    // implementation-defined and the split must be stable across platforms.
    for (std::size_t i = cls.size(); i > 1; --i)
      std::swap(cls[i - 1], cls[uniform_below(rng, i)]);
    for (std::size_t i = 0; i < cls.size(); ++i)
      split.folds[i % static_cast<std::size_t>(k)].push_back(cls[i]);
  }
  for (std::vector<std::size_t>& fold : split.folds) std::sort(fold.begin(), fold.end());
  return split;
}

std::vector<ScoredCase> score_samples(Model& model, const std::vector<Sample>& samples,
                                      const std::vector<std::size_t>& indices) {
  model.set_train(false);
  std::vector<ScoredCase> scores;
  scores.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const std::size_t count = std::min<std::size_t>(kEvalBatch, indices.size() - start);
    const std::array<int, 3> dims = samples[indices[start]].image.dims;
    const std::size_t voxels =
        static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
        static_cast<std::size_t>(dims[2]);
    std::vector<float> mask_buf(count * voxels);
    std::vector<float> image_buf(count * voxels);
    for (std::size_t b = 0; b < count; ++b) {
      const Sample& s = samples[indices[start + b]];
      fill_slot(mask_buf, image_buf, b, s.mask, s.image);
    }
    const std::vector<int> shape = {static_cast<int>(count), 1, dims[0], dims[1], dims[2]};
    Tensor p = model.forward(Tensor::from_data(shape, std::move(mask_buf)),
                             Tensor::from_data(shape, std::move(image_buf)));
    const std::span<const float> pv = p.data();
    for (std::size_t b = 0; b < count; ++b)
      scores.push_back({std::to_string(indices[start + b]), static_cast<double>(pv[b]),
                        samples[indices[start + b]].z});
  }
  return scores;
}

CvResult run_cv(const std::vector<FusionSpec>& space, const std::vector<Sample>& samples,
                const TrainConfig& config, const FoldSplit& folds, int jobs,
                const CvProgress& progress) {
  validate(config);
  for (const FusionSpec& spec : space) validate(spec);
  validate_folds(folds, samples.size());
  const std::size_t n_folds = folds.folds.size();

  std::vector<CvTask> tasks;
  for (std::size_t s = 0; s < space.size(); ++s)
    for (std::size_t f = 0; f < n_folds; ++f)
      tasks.push_back({s * n_folds + f, s, static_cast<int>(f)});

  CvResult result;
  result.jobs.resize(tasks.size());
  std::mutex progress_mutex;

  run_jobs(tasks, jobs, [&](const CvTask& task) {
    const std::uint64_t job_seed = derive_seed(config.seed, task.seed_tag,
                                               static_cast<std::uint64_t>(task.fold));
    Model model = build_fused(space[task.seed_tag], derive_seed(job_seed, 1));
    TrainConfig job_config = config;
    job_config.seed = derive_seed(job_seed, 2);
    train_model(model, samples, training_indices(folds, static_cast<std::size_t>(task.fold)),
                job_config);
    CvJob& job = result.jobs[task.slot];
    job.spec_index = task.seed_tag;
    job.fold = task.fold;
    job.report = evaluate(
        score_samples(model, samples, folds.folds[static_cast<std::size_t>(task.fold)]));
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(job);
    }
  });

  result.pooled.reserve(space.size());
  for (std::size_t s = 0; s < space.size(); ++s) {
    std::vector<const EvalReport*> fold_reports;
    for (std::size_t f = 0; f < n_folds; ++f)
      fold_reports.push_back(&result.jobs[s * n_folds + f].report);
    result.pooled.push_back(evaluate(pool_scores(fold_reports)));
  }

  result.ranking.resize(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) result.ranking[i] = i;
  std::sort(result.ranking.begin(), result.ranking.end(), [&](std::size_t a, std::size_t b) {
    if (result.pooled[a].f1 != result.pooled[b].f1) return result.pooled[a].f1 > result.pooled[b].f1;
    if (result.pooled[a].auc != result.pooled[b].auc)
      return result.pooled[a].auc > result.pooled[b].auc;
    return a < b;
  });
  return result;
}

BaselineResult run_baselines(const BaseConfig& base, const std::vector<Sample>& samples,
                             const TrainConfig& config, const FoldSplit& folds, int jobs,
                             const CvProgress& progress) {
  validate(config);
  validate(base);
  validate_folds(folds, samples.size());
  const std::size_t n_folds = folds.folds.size();

  std::vector<CvTask> tasks;
  for (std::size_t kind = 0; kind < 2; ++kind)
    for (std::size_t f = 0; f < n_folds; ++f)
      tasks.push_back({kind * n_folds + f, kind ? kImageJobTag : kMaskJobTag,
                       static_cast<int>(f)});

  std::vector<EvalReport> reports(tasks.size());
  std::mutex progress_mutex;

  run_jobs(tasks, jobs, [&](const CvTask& task) {
    const std::uint64_t job_seed = derive_seed(config.seed, task.seed_tag,
                                               static_cast<std::uint64_t>(task.fold));
    const BaseInput input = task.seed_tag == kMaskJobTag ? BaseInput::Mask : BaseInput::Image;
    Model model = build_base(base, input, derive_seed(job_seed, 1));
    TrainConfig job_config = config;
    job_config.seed = derive_seed(job_seed, 2);
    train_model(model, samples, training_indices(folds, static_cast<std::size_t>(task.fold)),
                job_config);
    reports[task.slot] = evaluate(
        score_samples(model, samples, folds.folds[static_cast<std::size_t>(task.fold)]));
    if (progress) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      CvJob job;
      job.spec_index = task.seed_tag;
      job.fold = task.fold;
      job.report = reports[task.slot];
      progress(job);
    }
  });

  BaselineResult result;
  std::vector<const EvalReport*> mask_folds, image_folds;
  for (std::size_t f = 0; f < n_folds; ++f) {
    mask_folds.push_back(&reports[f]);
    image_folds.push_back(&reports[n_folds + f]);
  }
  const std::vector<ScoredCase> mask_scores = pool_scores(mask_folds);
  const std::vector<ScoredCase> image_scores = pool_scores(image_folds);
  result.mask_report = evaluate(mask_scores);
  result.image_report = evaluate(image_scores);
  result.naive_report = evaluate(naive_fusion(mask_scores, image_scores));
  result.gt_bound = gt_upper_bound(mask_scores, image_scores);
  return result;
}

}  // namespace fusegrid
