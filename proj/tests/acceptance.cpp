// Release gate. Runs every acceptance criterion and prints one PASS/FAIL
// line per criterion; the exit status is the number of failed criteria.
//
// The desk-scale experiment (criterion 7) trains the full architecture grid
// under 4-fold cross-validation for several seeds and runs for hours; it
// executes last so every fast criterion reports first. FUSEGRID_ACCEPT_SEEDS
// (comma-separated integers) overrides the seed list for shorter development
// runs; the committed default is the real gate.
//
// argv[1] (optional): path to the fusegrid CLI binary, needed by the
// determinism criterion. ctest passes it; manual runs may rely on the
// build-tree probe.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fusegrid/analysis.hpp"
#include "fusegrid/errors.hpp"
#include "fusegrid/metrics.hpp"
#include "fusegrid/model.hpp"
#include "fusegrid/ops.hpp"
#include "fusegrid/preprocess.hpp"
#include "fusegrid/rng.hpp"
#include "fusegrid/synthdata.hpp"
#include "fusegrid/tensor.hpp"
#include "fusegrid/train.hpp"
#include "fusegrid/volume.hpp"
#include "testutil.hpp"

namespace {

namespace fs = std::filesystem;
using namespace fusegrid;
using fusegrid::test::gradcheck;
using fusegrid::test::randu;

int g_failures = 0;

void report(int criterion, const char* name, bool ok, const std::string& detail = "") {
  std::printf("criterion %d  %-42s %s%s%s\n", criterion, name, ok ? "PASS" : "FAIL",
              detail.empty() ? "" : "  ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// ---------------------------------------------------------------------------
// 1. Autograd gradients vs central finite differences

// Permuted evenly spaced values; keeps every pooling window free of
// near-ties, which a +-1e-3 finite-difference probe would otherwise flip.
Tensor distinct_values(std::vector<int> shape, Rng& rng) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<float> data(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    data[i] = -1.0f + 2.0f * static_cast<float>(i) / static_cast<float>(std::max<std::int64_t>(n - 1, 1));
  for (std::int64_t i = n; i > 1; --i)
    std::swap(data[i - 1], data[uniform_below(rng, static_cast<std::uint64_t>(i))]);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void criterion_gradients() {
  Rng rng(mix_seed(777));
  const int trials = 20;
  int bad = 0;
  long long checked = 0;

  auto run = [&](const std::function<Tensor()>& apply, std::vector<Tensor> leaves) {
    const auto rep = gradcheck(apply, std::move(leaves), rng);
    checked += rep.checked;
    if (!rep.ok) ++bad;
  };
  auto dim = [&](int lo, int hi) {
    return lo + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
  };

  for (int t = 0; t < trials; ++t) {
    const int B = dim(1, 2), Cin = dim(1, 3), Cout = dim(1, 3), S = dim(2, 4);
    Tensor x = randu({B, Cin, S, S, S}, rng);
    Tensor w = randu({Cout, Cin, 3, 3, 3}, rng);
    Tensor b = randu({Cout}, rng);
    run([&] { return ops::conv3d(x, w, b); }, {x, w, b});
  }
  for (int t = 0; t < trials; ++t) {
    const int B = dim(1, 2), C = dim(1, 3), S = 2 * dim(1, 2);
    Tensor x = distinct_values({B, C, S, S, S}, rng);
    run([&] { return ops::maxpool3d(x); }, {x});
  }
  for (int t = 0; t < trials; ++t) {
    const int B = dim(2, 3), C = dim(1, 3), S = dim(2, 3);
    Tensor x = randu({B, C, S, S, S}, rng);
    Tensor gamma = randu({C}, rng, 0.5f, 1.5f);
    Tensor beta = randu({C}, rng);
    ops::BatchNormState state(C);
    run([&] { return ops::batchnorm3d(x, gamma, beta, state, true); }, {x, gamma, beta});
  }
  for (int t = 0; t < trials; ++t) {
    const int B = dim(1, 3), N = dim(2, 6), M = dim(1, 4);
    Tensor x = randu({B, N}, rng);
    Tensor w = randu({M, N}, rng);
    Tensor b = randu({M}, rng);
    run([&] { return ops::fully_connected(x, w, b); }, {x, w, b});
  }
  for (int t = 0; t < trials; ++t) {
    const int B = dim(1, 2), C = dim(1, 3), S = dim(2, 3);
    Tensor a = randu({B, C, S, S, S}, rng);
    Tensor b = randu({B, C, S, S, S}, rng);
    switch (t % 3) {
      case 0: run([&] { return ops::add(a, b); }, {a, b}); break;
      case 1: run([&] { return ops::mul(a, b); }, {a, b}); break;
      case 2: run([&] { return ops::concat_channels(a, b); }, {a, b}); break;
    }
  }
  for (int t = 0; t < trials; ++t) {
    const int B = dim(1, 5);
    Tensor p = randu({B, 1}, rng, 0.05f, 0.95f);
    std::vector<int> z(static_cast<size_t>(B));
    for (int& zi : z) zi = static_cast<int>(uniform_below(rng, 2));
    run([&] { return weighted_bce(p, z, 0.7); }, {p});
  }

  char detail[96];
  std::snprintf(detail, sizeof detail, "(6 op families x %d instances, %lld elements, rtol 1e-3)",
                trials, checked);
  report(1, "autograd vs central finite differences", bad == 0, detail);
}

// ---------------------------------------------------------------------------
// 2. Search-space cardinality

void criterion_space() {
  const auto space = enumerate_space(BaseConfig{});
  std::set<std::pair<int, int>> distinct;
  for (const FusionSpec& spec : space)
    distinct.emplace(spec.alpha, static_cast<int>(spec.beta));
  const bool ok = space.size() == 18 && distinct.size() == 18;
  report(2, "architecture grid enumerates 3L = 18 specs", ok,
         "(" + std::to_string(distinct.size()) + " distinct)");
}

// ---------------------------------------------------------------------------
// 3. Cost-model relations and instantiation cross-check

void criterion_costs() {
  const BaseConfig base;
  const int L = base.num_layers;
  bool ok = true;

  for (int a = 1; a <= L; ++a) {
    const FusionSpec add{a, FusionOp::Add, base};
    const FusionSpec mul{a, FusionOp::Mul, base};
    const FusionSpec cat{a, FusionOp::Concat, base};
    ok = ok && count_params(add) == count_params(mul);
    ok = ok && count_flops(add) == count_flops(mul);
    if (a < L) {
      ok = ok && count_params(cat) > count_params(add);
      ok = ok && count_flops(cat) > count_flops(add);
    } else {
      ok = ok && count_params(cat) >= count_params(add);
      ok = ok && count_flops(cat) >= count_flops(add);
    }
  }
  for (const FusionOp beta : {FusionOp::Add, FusionOp::Mul, FusionOp::Concat}) {
    for (int a = 1; a < L; ++a) {
      ok = ok && count_params({a, beta, base}) <= count_params({a + 1, beta, base});
      ok = ok && count_flops({a, beta, base}) <= count_flops({a + 1, beta, base});
    }
  }

  bool instantiation_ok = true;
  for (const FusionSpec& spec : enumerate_space(base)) {
    Model model = build_fused(spec, 1);
    std::int64_t elements = 0;
    for (const Parameter& p : model.parameters()) elements += p.tensor.size();
    instantiation_ok = instantiation_ok && elements == count_params(spec);
  }
  report(3, "cost relations; closed form == instantiation", ok && instantiation_ok,
         instantiation_ok ? "(18 models cross-checked)" : "(instantiation mismatch)");
}

// ---------------------------------------------------------------------------
// 4. Loss and schedule closed forms

void criterion_closed_forms() {
  const Tensor p = Tensor::from_data({1, 1}, {0.5f});
  const double loss = weighted_bce(p, {1}, 0.7).item();
  const double loss_ref = -0.7 * std::log(0.5);
  const bool loss_ok = std::abs(loss - loss_ref) < 1e-6;

  TrainConfig config;
  const double lr = lr_at(10000, config);
  const double lr_ref = 0.01 * std::pow(0.9997, 10000.0);
  const bool lr_ok = std::abs(lr - lr_ref) <= 1e-12 * lr_ref;

  char detail[96];
  std::snprintf(detail, sizeof detail, "(bce %.9f vs %.9f; lr %.9e)", loss, loss_ref, lr);
  report(4, "weighted-bce and lr schedule closed forms", loss_ok && lr_ok, detail);
}

// ---------------------------------------------------------------------------
// 5. Metric oracle equivalence

std::vector<ScoredCase> random_scores(Rng& rng, int n) {
  std::vector<ScoredCase> scores;
  scores.reserve(static_cast<size_t>(n));
  // Quantized probabilities so ties actually occur.
  for (int i = 0; i < n; ++i) {
    ScoredCase s;
    s.id = std::to_string(i);
    s.p = static_cast<double>(uniform_below(rng, 9)) / 8.0;
    s.z = i < 2 ? i : static_cast<int>(uniform_below(rng, 2));  // both classes present
    scores.push_back(std::move(s));
  }
  return scores;
}

void criterion_metric_oracles() {
  Rng rng(mix_seed(555));
  bool auc_ok = true;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto scores = random_scores(rng, 5 + static_cast<int>(uniform_below(rng, 56)));
    const double gap = std::abs(roc_auc(scores).auc - pairwise_auc(scores));
    worst = std::max(worst, gap);
    auc_ok = auc_ok && gap <= 1e-12;
  }

  bool gt_ok = true;
  for (int t = 0; t < 100; ++t) {
    const int n = 5 + static_cast<int>(uniform_below(rng, 56));
    auto mask_scores = random_scores(rng, n);
    auto image_scores = mask_scores;
    for (auto& s : image_scores) s.p = static_cast<double>(uniform_below(rng, 9)) / 8.0;
    const auto bound = gt_upper_bound(mask_scores, image_scores);
    for (const auto& branch : {confusion_metrics(mask_scores), confusion_metrics(image_scores)})
      gt_ok = gt_ok && bound.sen >= branch.sen && bound.spec >= branch.spec;
  }

  char detail[80];
  std::snprintf(detail, sizeof detail, "(100 + 100 trials, worst auc gap %.2e)", worst);
  report(5, "trapezoid == pairwise AUC; GT dominance", auc_ok && gt_ok, detail);
}

// ---------------------------------------------------------------------------
// 6. Preprocessing contract

bool mask_is_binary(const Volume& v) {
  for (float x : v.data)
    if (x != 0.0f && x != 1.0f) return false;
  return true;
}

void criterion_preprocess() {
  Volume mask = make_volume(VolumeKind::Mask, {128, 128, 128});
  for (int z = 30; z < 50; ++z)
    for (int y = 30; y < 50; ++y)
      for (int x = 30; x < 50; ++x) mask.at(z, y, x) = 1.0f;
  const Roi roi = bounding_box(mask, 20);
  const bool box_ok = roi.lo == std::array<int, 3>{10, 10, 10} &&
                      roi.hi == std::array<int, 3>{70, 70, 70};

  Rng rng(mix_seed(99));
  Volume image = make_volume(VolumeKind::Image, {24, 24, 24});
  Volume blob = make_volume(VolumeKind::Mask, {24, 24, 24});
  for (auto& v : image.data) v = static_cast<float>(uniform01(rng));
  for (int z = 8; z < 17; ++z)
    for (int y = 7; y < 18; ++y)
      for (int x = 9; x < 16; ++x) blob.at(z, y, x) = 1.0f;

  const auto variants = rotation_variants(image, blob);
  bool rot_ok = variants.size() == 27;
  rot_ok = rot_ok && variants[13].first.data == image.data &&
           variants[13].second.data == blob.data;

  bool binary_ok = true;
  const Roi blob_roi = bounding_box(blob, 2);
  const auto [cropped_image, cropped_mask] = crop_and_resample(image, blob, blob_roi, 16);
  binary_ok = binary_ok && mask_is_binary(cropped_mask);
  for (const auto& [vi, vm] : rotation_variants(cropped_image, cropped_mask))
    binary_ok = binary_ok && mask_is_binary(vm);

  report(6, "ROI box, 27 rotations, mask binarity", box_ok && rot_ok && binary_ok);
}

// ---------------------------------------------------------------------------
// 8. End-to-end determinism through the CLI

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool files_equal(const fs::path& a, const fs::path& b) {
  return read_file_bytes(a) == read_file_bytes(b);
}

bool run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null";
  return std::system(cmd.c_str()) == 0;
}

void criterion_determinism(const std::string& cli_arg) {
  std::string cli = cli_arg;
  if (cli.empty()) {
    for (const char* candidate :
         {"./tools/fusegrid", "../tools/fusegrid", "build/tools/fusegrid"})
      if (fs::exists(candidate)) {
        cli = candidate;
        break;
      }
  }
  if (cli.empty() || !fs::exists(cli)) {
    report(8, "CLI determinism (gen-data, train)", false, "(CLI binary not found)");
    return;
  }

  const fs::path root = fs::temp_directory_path() / "fusegrid_acceptance";
  std::error_code ec;
  fs::remove_all(root, ec);
  fs::create_directories(root);

  bool ok = true;
  const std::string gen_flags = "--side 24 --normal 8 --abnormal 6 --seed 11 --seg-noise 0.3";
  ok = ok && run_cli(cli, "gen-data --out " + (root / "a").string() + " " + gen_flags);
  ok = ok && run_cli(cli, "gen-data --out " + (root / "b").string() + " " + gen_flags);
  if (ok) {
    ok = ok && files_equal(root / "a" / "manifest.csv", root / "b" / "manifest.csv");
    for (const auto& entry : fs::directory_iterator(root / "a")) {
      const std::string name = entry.path().filename().string();
      if (name.ends_with(".vol")) ok = ok && files_equal(entry.path(), root / "b" / name);
    }
  }

  const fs::path cfg = root / "train.json";
  std::ofstream(cfg) << R"({
  "train": {"iterations": 40, "batch_size": 2, "seed": 17},
  "model": {"kind": "fused",
            "spec": {"alpha": 1, "beta": "concat",
                     "base": {"num_layers": 2, "channels": [4, 4], "input_side": 24,
                              "pool_after": [1, 2], "fc_hidden": 8}}}
})";
  const std::string train_flags =
      "--config " + cfg.string() + " --data " + (root / "a").string();
  ok = ok && run_cli(cli, "train " + train_flags + " --out " + (root / "t1").string());
  ok = ok && run_cli(cli, "train " + train_flags + " --out " + (root / "t2").string());
  if (ok) {
    ok = ok && files_equal(root / "t1" / "checkpoint.bin", root / "t2" / "checkpoint.bin");
    ok = ok && files_equal(root / "t1" / "loss_trace.csv", root / "t2" / "loss_trace.csv");
  }

  fs::remove_all(root, ec);
  report(8, "CLI determinism (gen-data, train)", ok,
         "(dataset bytes and checkpoint bytes identical)");
}

// ---------------------------------------------------------------------------
// 7. Desk-scale complementarity experiment

constexpr std::uint64_t kExperimentSeeds[] = {42, 43, 44, 45, 46};
constexpr double kF1Margin = 0.03;

std::vector<std::uint64_t> experiment_seeds() {
  const char* raw = std::getenv("FUSEGRID_ACCEPT_SEEDS");
  if (!raw || !*raw) return {std::begin(kExperimentSeeds), std::end(kExperimentSeeds)};
  std::vector<std::uint64_t> seeds;
  const std::string text(raw);
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string field = text.substr(start, comma - start);
    if (!field.empty()) seeds.push_back(std::strtoull(field.c_str(), nullptr, 10));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) seeds.assign(std::begin(kExperimentSeeds), std::end(kExperimentSeeds));
  return seeds;
}

struct SeedOutcome {
  bool margin_ok = false, naive_ok = false, gt_ok = false;
  double minutes = 0.0;
  std::string summary;
};

SeedOutcome run_experiment(std::uint64_t seed) {
  const std::time_t t0 = std::time(nullptr);

  GenConfig gen;
  gen.side = 32;
  gen.n_normal = 200;
  gen.n_abnormal = 136;
  gen.shape_signal = 0.5;
  gen.texture_signal = 0.5;
  gen.seg_noise = 0.0;
  gen.seed = seed;
  std::vector<Sample> samples = generate(gen);
  for (Sample& s : samples) s.image = normalize_hu(s.image);

  BaseConfig base;
  base.channels = {4, 8, 16, 32, 32, 32};
  base.fc_hidden = 32;
  TrainConfig config;
  config.iterations = 2500;
  config.seed = seed;
  const FoldSplit folds = make_folds(samples, 4, derive_seed(seed, 2'000'000));
  const std::vector<FusionSpec> space = enumerate_space(base);

  const auto progress = [&](const CvJob& job) {
    std::fprintf(stderr, "  seed %" PRIu64 ": job tag %zu fold %d done (f1 %.3f)\n", seed,
                 job.spec_index, job.fold, job.report.f1);
  };
  const BaselineResult bl = run_baselines(base, samples, config, folds, 1, progress);
  const CvResult cv = run_cv(space, samples, config, folds, 1, progress);

  const EvalReport& best = cv.pooled[cv.ranking[0]];
  const FusionSpec& best_spec = space[cv.ranking[0]];

  SeedOutcome out;
  out.margin_ok = best.f1 >= bl.mask_report.f1 + kF1Margin &&
                  best.f1 >= bl.image_report.f1 + kF1Margin;
  out.naive_ok = best.f1 >= bl.naive_report.f1;
  out.gt_ok = true;
  const auto dominated = [&](double sen, double spec) {
    return bl.gt_bound.sen >= sen && bl.gt_bound.spec >= spec;
  };
  out.gt_ok = out.gt_ok && dominated(bl.mask_report.sen, bl.mask_report.spec);
  out.gt_ok = out.gt_ok && dominated(bl.image_report.sen, bl.image_report.spec);
  out.gt_ok = out.gt_ok && dominated(bl.naive_report.sen, bl.naive_report.spec);
  for (const EvalReport& pooled : cv.pooled)
    out.gt_ok = out.gt_ok && dominated(pooled.sen, pooled.spec);
  out.minutes = static_cast<double>(std::time(nullptr) - t0) / 60.0;

  char line[256];
  std::snprintf(line, sizeof line,
                "seed %" PRIu64 ": best FusionNet%d%s f1 %.3f | mask %.3f image %.3f naive %.3f "
                "| a:%s b:%s c:%s | %.0f min",
                seed, best_spec.alpha, fusion_op_symbol(best_spec.beta), best.f1,
                bl.mask_report.f1, bl.image_report.f1, bl.naive_report.f1,
                out.margin_ok ? "ok" : "FAIL", out.naive_ok ? "ok" : "FAIL",
                out.gt_ok ? "ok" : "FAIL", out.minutes);
  out.summary = line;
  return out;
}

void criterion_experiment() {
  const std::vector<std::uint64_t> seeds = experiment_seeds();
  // The full five-seed gate tolerates one bad seed; shortened dev lists
  // require every listed seed to pass.
  const std::size_t needed = seeds.size() >= 5 ? seeds.size() - 1 : seeds.size();

  std::size_t passed = 0;
  for (const std::uint64_t seed : seeds) {
    const SeedOutcome out = run_experiment(seed);
    std::printf("  %s\n", out.summary.c_str());
    std::fflush(stdout);
    if (out.margin_ok && out.naive_ok && out.gt_ok) ++passed;
  }
  char detail[64];
  std::snprintf(detail, sizeof detail, "(%zu/%zu seeds, need %zu)", passed, seeds.size(), needed);
  report(7, "desk-scale complementarity experiment", passed >= needed, detail);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  criterion_gradients();
  criterion_space();
  criterion_costs();
  criterion_closed_forms();
  criterion_metric_oracles();
  criterion_preprocess();
  criterion_determinism(cli);
  criterion_experiment();
  std::printf("%s\n", g_failures == 0 ? "acceptance: all criteria passed"
                                      : "acceptance: FAILED");
  return g_failures;
}
