// fusegrid command-line tool: synthetic dataset generation, ROI
// preprocessing, model training, the (alpha, beta) architecture search,
// score evaluation, and static cost accounting, all over the VOL1/CSV/JSON
// file formats described in the README.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fusegrid/analysis.hpp"
#include "fusegrid/config_json.hpp"
#include "fusegrid/errors.hpp"
#include "fusegrid/metrics.hpp"
#include "fusegrid/model.hpp"
#include "fusegrid/preprocess.hpp"
#include "fusegrid/rng.hpp"
#include "fusegrid/synthdata.hpp"
#include "fusegrid/train.hpp"
#include "fusegrid/volume.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fusegrid;

constexpr const char* kToolVersion = "fusegrid 0.1.0";

// Seed tag for the fold split, outside the spec-index and baseline tag
// ranges used by the per-job training seeds.
constexpr std::uint64_t kFoldSeedTag = 2'000'000;

std::string format_fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Terminal columns, counting UTF-8 code points ("⊕" is one column).
std::size_t display_columns(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

struct TextTable {
  std::vector<std::vector<std::string>> rows;

  void print(std::ostream& out) const {
    std::vector<std::size_t> width;
    for (const auto& row : rows)
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (width.size() <= i) width.resize(i + 1, 0);
        width[i] = std::max(width[i], display_columns(row[i]));
      }
    for (const auto& row : rows) {
      std::string line;
      for (std::size_t i = 0; i < row.size(); ++i) {
        line += row[i];
        if (i + 1 < row.size()) line.append(width[i] - display_columns(row[i]) + 2, ' ');
      }
      out << line << "\n";
    }
  }
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw IoError("unparseable JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << content;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path path(dir);
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError("cannot create output directory " + path.string() + ": " + ec.message());
  return path;
}

class RunTimer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_run_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                        std::uint64_t seed, std::vector<std::string> inputs,
                        std::vector<std::string> outputs, double seconds) {
  const json manifest{{"command", command},
                      {"config", config},
                      {"seed", seed},
                      {"tool_version", kToolVersion},
                      {"inputs", std::move(inputs)},
                      {"outputs", std::move(outputs)},
                      {"duration_seconds", seconds}};
  write_text_file(out_dir / "run_manifest.json", manifest.dump(2) + "\n");
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("FUSEGRID_SEED");
  if (!raw || !*raw) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0')
    throw ConfigError(std::string("FUSEGRID_SEED is not an unsigned integer: ") + raw);
  return v;
}

// Precedence: --seed flag, then the config file's seed, then FUSEGRID_SEED,
// then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           const std::optional<std::uint64_t>& from_config) {
  if (flag) return *flag;
  if (from_config) return *from_config;
  if (const auto env = env_seed()) return *env;
  return 0;
}

std::string fusion_label(const FusionSpec& spec) {
  return "FusionNet" + std::to_string(spec.alpha) + fusion_op_symbol(spec.beta);
}

FusionOp parse_beta(const std::string& text) {
  if (text == "+") return FusionOp::Add;
  if (text == "*") return FusionOp::Mul;
  if (text == "⊕") return FusionOp::Concat;
  return fusion_op_from_name(text);
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> ids;
  fs::path manifest;
};

std::vector<std::string> split_csv_line(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

// `data` is a dataset directory holding manifest.csv, or the manifest file
// itself; volume paths in the manifest resolve relative to it. Images are
// HU windowed to [0, 1] unless `normalize` is off.
Dataset load_dataset(const fs::path& data, bool normalize) {
  fs::path manifest = data;
  std::error_code ec;
  if (fs::is_directory(data, ec)) manifest = data / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open dataset manifest: " + manifest.string());
  const fs::path root = manifest.parent_path();

  Dataset ds;
  ds.manifest = manifest;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset manifest: " + manifest.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4)
      throw IoError("manifest row needs case_id,image,mask,z: " + line);
    Sample sample;
    sample.image = read_volume(root / fields[1]);
    sample.mask = read_volume(root / fields[2]);
    if (sample.mask.kind != VolumeKind::Mask)
      throw ValidationError("manifest mask column points at a non-mask volume: " + fields[2]);
    validate_mask_binary(sample.mask);
    if (fields[3] != "0" && fields[3] != "1")
      throw ValidationError("manifest label must be 0 or 1, got: " + fields[3]);
    sample.z = fields[3] == "1" ? 1 : 0;
    if (normalize) sample.image = normalize_hu(sample.image);
    ds.ids.push_back(fields[0]);
    ds.samples.push_back(std::move(sample));
  }
  if (ds.samples.empty())
    throw ValidationError("dataset manifest lists no cases: " + manifest.string());
  return ds;
}

std::pair<int, int> class_counts(const std::vector<Sample>& samples) {
  int neg = 0, pos = 0;
  for (const Sample& s : samples) (s.z ? pos : neg) += 1;
  return {neg, pos};
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string out;
  std::string config_path;
  GenConfig flags;
  std::uint64_t seed = 0;
  CLI::Option* side = nullptr;
  CLI::Option* n_normal = nullptr;
  CLI::Option* n_abnormal = nullptr;
  CLI::Option* shape_signal = nullptr;
  CLI::Option* texture_signal = nullptr;
  CLI::Option* seg_noise = nullptr;
  CLI::Option* seed_opt = nullptr;
};

int cmd_gen_data(const GenDataArgs& args) {
  RunTimer timer;
  const json file_cfg =
      args.config_path.empty() ? json::object() : read_json_file(args.config_path);
  GenConfig config = gen_config_from_json(file_cfg);
  if (args.side->count()) config.side = args.flags.side;
  if (args.n_normal->count()) config.n_normal = args.flags.n_normal;
  if (args.n_abnormal->count()) config.n_abnormal = args.flags.n_abnormal;
  if (args.shape_signal->count()) config.shape_signal = args.flags.shape_signal;
  if (args.texture_signal->count()) config.texture_signal = args.flags.texture_signal;
  if (args.seg_noise->count()) config.seg_noise = args.flags.seg_noise;

  std::optional<std::uint64_t> cfg_seed;
  if (file_cfg.contains("seed")) cfg_seed = config.seed;
  std::optional<std::uint64_t> flag_seed;
  if (args.seed_opt->count()) flag_seed = args.seed;
  config.seed = resolve_seed(flag_seed, cfg_seed);
  validate(config);

  const fs::path out = ensure_out_dir(args.out);
  const std::vector<Sample> samples = generate(config);

  const std::size_t width =
      std::max<std::size_t>(4, std::to_string(samples.size() - 1).size());
  std::string manifest_csv = "case_id,image,mask,z\n";
  std::vector<std::string> outputs{"manifest.csv"};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, width - idx.size(), '0');
    const std::string id = "case_" + idx;
    const std::string image_name = id + "_image.vol";
    const std::string mask_name = id + "_mask.vol";
    write_volume(out / image_name, samples[i].image);
    write_volume(out / mask_name, samples[i].mask);
    manifest_csv += id + "," + image_name + "," + mask_name + "," +
                    std::to_string(samples[i].z) + "\n";
    outputs.push_back(image_name);
    outputs.push_back(mask_name);
  }
  write_text_file(out / "manifest.csv", manifest_csv);

  std::vector<std::string> inputs;
  if (!args.config_path.empty()) inputs.push_back(args.config_path);
  write_run_manifest(out, "gen-data", to_json(config), config.seed, inputs, outputs,
                     timer.seconds());
  std::cout << "wrote " << samples.size() << " cases (" << config.n_normal << " normal, "
            << config.n_abnormal << " abnormal, side " << config.side << ") to "
            << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessArgs {
  std::string image;
  std::string mask;
  std::string out = ".";
  int out_side = 32;
  int pad = 20;
  bool no_normalize = false;
  float lo_hu = -100.0f;
  float hi_hu = 240.0f;
};

int cmd_preprocess(const PreprocessArgs& args) {
  RunTimer timer;
  const Volume image = read_volume(args.image);
  const Volume mask = read_volume(args.mask);

  Roi roi;
  bool empty_fallback = false;
  try {
    roi = bounding_box(mask, args.pad);
  } catch (const EmptyMaskError&) {
    empty_fallback = true;
    roi = center_fallback_roi(mask);
    std::cerr << "warning: mask has no foreground voxel; "
                 "using a centered crop of half the volume\n";
  }

  auto [out_image, out_mask] = crop_and_resample(image, mask, roi, args.out_side);
  if (!args.no_normalize) out_image = normalize_hu(out_image, args.lo_hu, args.hi_hu);

  const fs::path out = ensure_out_dir(args.out);
  write_volume(out / "image.vol", out_image);
  write_volume(out / "mask.vol", out_mask);

  const json config{{"out_side", args.out_side},   {"pad", args.pad},
                    {"normalize", !args.no_normalize}, {"lo_hu", args.lo_hu},
                    {"hi_hu", args.hi_hu},         {"empty_mask_fallback", empty_fallback}};
  write_run_manifest(out, "preprocess", config, 0, {args.image, args.mask},
                     {"image.vol", "mask.vol"}, timer.seconds());
  std::cout << "wrote " << (out / "image.vol").string() << " and "
            << (out / "mask.vol").string() << " (side " << args.out_side << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct ModelChoice {
  bool fused = false;
  FusionSpec spec;
  BaseConfig base;
  BaseInput input = BaseInput::Both;
};

ModelChoice model_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("model config needs a \"kind\" of \"base\" or \"fused\"");
  ModelChoice choice;
  std::string kind;
  try {
    kind = j.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config JSON: ") + e.what());
  }
  if (kind == "fused") {
    choice.fused = true;
    if (!j.contains("spec"))
      throw ConfigError("fused model config needs a \"spec\" with alpha/beta");
    choice.spec = fusion_spec_from_json(j.at("spec"));
  } else if (kind == "base") {
    choice.fused = false;
    try {
      choice.input = base_input_from_name(j.value("input", "both"));
      choice.base = base_config_from_json(j.value("base", json::object()));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad model config JSON: ") + e.what());
    }
  } else {
    throw ConfigError("unknown model kind: " + kind);
  }
  return choice;
}

std::string model_label(const ModelChoice& choice) {
  if (choice.fused) return fusion_label(choice.spec);
  switch (choice.input) {
    case BaseInput::Mask: return "Mask";
    case BaseInput::Image: return "Image";
    case BaseInput::Both: return "Both";
  }
  return "Base";
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  bool no_normalize = false;
  CLI::Option* seed_opt = nullptr;
};

// Resolves the dataset path from the --data flag or the config file's "data"
// key (relative to the config file).
std::string resolve_data_path(const std::string& flag, const json& cfg,
                              const std::string& config_path) {
  if (!flag.empty()) return flag;
  if (cfg.contains("data")) {
    try {
      const auto rel = cfg.at("data").get<std::string>();
      return (fs::path(config_path).parent_path() / rel).string();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad \"data\" entry in config: ") + e.what());
    }
  }
  throw ConfigError("no dataset given; pass --data or put \"data\" in the config");
}

std::optional<std::uint64_t> config_seed(const json& cfg, const TrainConfig& tc) {
  if (cfg.contains("train") && cfg.at("train").is_object() && cfg.at("train").contains("seed"))
    return tc.seed;
  return std::nullopt;
}

int cmd_train(const TrainArgs& args) {
  RunTimer timer;
  const json cfg = read_json_file(args.config);
  const TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
  if (!cfg.contains("model"))
    throw ConfigError("train config must declare a \"model\" (kind base or fused)");
  const ModelChoice choice = model_from_json(cfg.at("model"));

  std::optional<std::uint64_t> flag_seed;
  if (args.seed_opt->count()) flag_seed = args.seed;
  const std::uint64_t seed = resolve_seed(flag_seed, config_seed(cfg, tc));

  const std::string data_path = resolve_data_path(args.data, cfg, args.config);
  const Dataset ds = load_dataset(data_path, !args.no_normalize);
  const auto [neg, pos] = class_counts(ds.samples);
  std::cout << "dataset: " << ds.samples.size() << " cases (" << neg << " normal, " << pos
            << " abnormal) from " << ds.manifest.string() << "\n";

  // Initialization and the sampling stream get independent sub-seeds, the
  // same derivation the cross-validation harness applies per job.
  Model model = choice.fused ? build_fused(choice.spec, derive_seed(seed, 1))
                             : build_base(choice.base, choice.input, derive_seed(seed, 1));
  TrainConfig run_tc = tc;
  run_tc.seed = derive_seed(seed, 2);
  const TrainResult result = train_model(model, ds.samples, run_tc);

  const fs::path out = ensure_out_dir(args.out);
  save_checkpoint(out / "checkpoint.bin", model);
  std::string trace = "iter,loss,lr\n";
  for (std::size_t t = 0; t < result.loss_history.size(); ++t)
    trace += std::to_string(t) + "," + format_full(result.loss_history[t]) + "," +
             format_full(lr_at(static_cast<std::int64_t>(t), tc)) + "\n";
  write_text_file(out / "loss_trace.csv", trace);

  json snapshot{{"train", to_json(tc)}, {"model", cfg.at("model")}};
  snapshot["train"]["seed"] = seed;
  write_run_manifest(out, "train", snapshot, seed, {args.config, data_path},
                     {"checkpoint.bin", "checkpoint.bin.json", "loss_trace.csv"},
                     timer.seconds());

  std::cout << "trained " << model_label(choice) << " for " << tc.iterations
            << " iterations (seed " << seed << ")\n";
  const std::size_t n = result.loss_history.size();
  if (n >= 2) {
    const std::size_t window = std::min<std::size_t>(50, n / 2);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      first += result.loss_history[i];
      last += result.loss_history[n - window + i];
    }
    std::cout << "mean loss: first " << window << " iters " << format_fixed(first / window, 4)
              << ", last " << window << " iters " << format_fixed(last / window, 4) << "\n";
  }
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// search

struct SearchArgs {
  std::string config;
  std::string data;
  std::string out;
  int folds = 4;
  int jobs = 1;
  std::uint64_t seed = 0;
  bool no_normalize = false;
  CLI::Option* folds_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

std::vector<std::string> metric_row(const std::string& name, double sen, double spec,
                                    const std::string& auc, double f1) {
  return {name, format_fixed(sen, 4), format_fixed(spec, 4), auc, format_fixed(f1, 4)};
}

int cmd_search(const SearchArgs& args) {
  RunTimer timer;
  const json cfg = args.config.empty() ? json::object() : read_json_file(args.config);
  const TrainConfig tc = train_config_from_json(cfg.value("train", json::object()));
  const BaseConfig base = base_config_from_json(cfg.value("base", json::object()));
  int k = args.folds;
  if (!args.folds_opt->count() && cfg.contains("folds")) {
    try {
      k = cfg.at("folds").get<int>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad \"folds\" entry in config: ") + e.what());
    }
  }
  if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");

  std::optional<std::uint64_t> flag_seed;
  if (args.seed_opt->count()) flag_seed = args.seed;
  const std::uint64_t seed = resolve_seed(flag_seed, config_seed(cfg, tc));

  const std::string data_path = resolve_data_path(args.data, cfg, args.config);
  const Dataset ds = load_dataset(data_path, !args.no_normalize);
  const auto [neg, pos] = class_counts(ds.samples);
  std::cout << "dataset: " << ds.samples.size() << " cases (" << neg << " normal, " << pos
            << " abnormal) from " << ds.manifest.string() << "\n"
            << "folds: " << k << "  jobs: " << args.jobs << "  iterations: " << tc.iterations
            << "  seed: " << seed << "\n\n";

  const FoldSplit folds = make_folds(ds.samples, k, derive_seed(seed, kFoldSeedTag));
  const std::vector<FusionSpec> space = enumerate_space(base);
  TrainConfig run_tc = tc;
  run_tc.seed = seed;

  const std::size_t total = (2 + space.size()) * folds.folds.size();
  std::atomic<std::size_t> done{0};
  const CvProgress progress = [&](const CvJob& job) {
    std::string label;
    if (job.spec_index == kMaskJobTag) label = "Mask";
    else if (job.spec_index == kImageJobTag) label = "Image";
    else label = fusion_label(space[job.spec_index]);
    std::fprintf(stderr, "[%3zu/%zu] %s fold %d: f1 %.4f auc %.4f\n", done.fetch_add(1) + 1,
                 total, label.c_str(), job.fold, job.report.f1, job.report.auc);
  };

  const BaselineResult bl = run_baselines(base, ds.samples, run_tc, folds, args.jobs, progress);
  const CvResult cv = run_cv(space, ds.samples, run_tc, folds, args.jobs, progress);

  TextTable baselines;
  baselines.rows.push_back({"model", "SEN", "SPEC", "AUC", "F1"});
  baselines.rows.push_back(metric_row("Mask", bl.mask_report.sen, bl.mask_report.spec,
                                      format_fixed(bl.mask_report.auc, 4), bl.mask_report.f1));
  baselines.rows.push_back(metric_row("Image", bl.image_report.sen, bl.image_report.spec,
                                      format_fixed(bl.image_report.auc, 4), bl.image_report.f1));
  baselines.rows.push_back(metric_row("Naive Fusion", bl.naive_report.sen, bl.naive_report.spec,
                                      format_fixed(bl.naive_report.auc, 4), bl.naive_report.f1));
  baselines.rows.push_back(
      metric_row("GT Upper Bound", bl.gt_bound.sen, bl.gt_bound.spec, "-", bl.gt_bound.f1));
  baselines.print(std::cout);
  std::cout << "\n";

  TextTable board;
  board.rows.push_back({"rank", "model", "SEN", "SPEC", "AUC", "F1"});
  std::string board_csv = "rank,model,alpha,beta,sen,spec,auc,f1\n";
  for (std::size_t rank = 0; rank < cv.ranking.size(); ++rank) {
    const std::size_t s = cv.ranking[rank];
    const EvalReport& r = cv.pooled[s];
    auto row = metric_row(fusion_label(space[s]), r.sen, r.spec, format_fixed(r.auc, 4), r.f1);
    row.insert(row.begin(), std::to_string(rank + 1));
    board.rows.push_back(std::move(row));
    board_csv += std::to_string(rank + 1) + "," + fusion_label(space[s]) + "," +
                 std::to_string(space[s].alpha) + "," + fusion_op_name(space[s].beta) + "," +
                 format_fixed(r.sen, 6) + "," + format_fixed(r.spec, 6) + "," +
                 format_fixed(r.auc, 6) + "," + format_fixed(r.f1, 6) + "\n";
  }
  board.print(std::cout);

  const EvalReport& best = cv.pooled[cv.ranking[0]];
  std::cout << "\nwinner: " << fusion_label(space[cv.ranking[0]]) << " (pooled F1 "
            << format_fixed(best.f1, 4) << ", AUC " << format_fixed(best.auc, 4) << ")\n";

  const fs::path out = ensure_out_dir(args.out);
  write_text_file(out / "leaderboard.csv", board_csv);
  std::string baselines_csv = "model,sen,spec,auc,f1\n";
  const auto baseline_csv_row = [](const std::string& name, double sen, double spec,
                                   const std::string& auc, double f1) {
    return name + "," + format_fixed(sen, 6) + "," + format_fixed(spec, 6) + "," + auc + "," +
           format_fixed(f1, 6) + "\n";
  };
  baselines_csv += baseline_csv_row("Mask", bl.mask_report.sen, bl.mask_report.spec,
                                    format_fixed(bl.mask_report.auc, 6), bl.mask_report.f1);
  baselines_csv += baseline_csv_row("Image", bl.image_report.sen, bl.image_report.spec,
                                    format_fixed(bl.image_report.auc, 6), bl.image_report.f1);
  baselines_csv += baseline_csv_row("Naive Fusion", bl.naive_report.sen, bl.naive_report.spec,
                                    format_fixed(bl.naive_report.auc, 6), bl.naive_report.f1);
  baselines_csv +=
      baseline_csv_row("GT Upper Bound", bl.gt_bound.sen, bl.gt_bound.spec, "", bl.gt_bound.f1);
  write_text_file(out / "baselines.csv", baselines_csv);

  // Pooled score lists keep the library's index ids; swap in the manifest's
  // case ids before writing.
  const auto with_case_ids = [&ds](std::vector<ScoredCase> scores) {
    for (ScoredCase& s : scores) s.id = ds.ids.at(std::stoul(s.id));
    return scores;
  };
  write_scores_csv(out / "scores_mask.csv", with_case_ids(bl.mask_report.scores));
  write_scores_csv(out / "scores_image.csv", with_case_ids(bl.image_report.scores));
  write_scores_csv(out / "scores_naive.csv", with_case_ids(bl.naive_report.scores));
  write_scores_csv(out / "scores_best.csv", with_case_ids(best.scores));

  json snapshot{{"train", to_json(tc)}, {"base", to_json(base)}, {"folds", k}};
  snapshot["train"]["seed"] = seed;
  std::vector<std::string> inputs{data_path};
  if (!args.config.empty()) inputs.insert(inputs.begin(), args.config);
  write_run_manifest(out, "search", snapshot, seed, inputs,
                     {"leaderboard.csv", "baselines.csv", "scores_mask.csv", "scores_image.csv",
                      "scores_naive.csv", "scores_best.csv"},
                     timer.seconds());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string scores;
  std::string out;
  double threshold = kDefaultThreshold;
};

int cmd_eval(const EvalArgs& args) {
  RunTimer timer;
  const std::vector<ScoredCase> scores = read_scores_csv(args.scores);
  const EvalReport report = evaluate(scores, args.threshold);

  const fs::path out = ensure_out_dir(args.out);
  const json rj{{"threshold", report.threshold},
                {"cases", report.scores.size()},
                {"counts",
                 {{"tp", report.counts.tp},
                  {"fp", report.counts.fp},
                  {"tn", report.counts.tn},
                  {"fn", report.counts.fn}}},
                {"sen", report.sen},
                {"spec", report.spec},
                {"f1", report.f1},
                {"auc", report.auc}};
  write_text_file(out / "report.json", rj.dump(2) + "\n");
  write_roc_csv(out / "roc.csv", report.roc);
  write_run_manifest(out, "eval", json{{"threshold", args.threshold}}, 0, {args.scores},
                     {"report.json", "roc.csv"}, timer.seconds());

  std::cout << report.scores.size() << " cases at threshold " << format_fixed(args.threshold, 2)
            << ": sen " << format_fixed(report.sen, 4) << "  spec "
            << format_fixed(report.spec, 4) << "  auc " << format_fixed(report.auc, 4)
            << "  f1 " << format_fixed(report.f1, 4) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  bool all = false;
  int alpha = 1;
  std::string beta = "add";
  std::string config;
  std::string out;
  CLI::Option* alpha_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

int cmd_analyze(const AnalyzeArgs& args) {
  RunTimer timer;
  const BaseConfig base =
      args.config.empty() ? BaseConfig{} : base_config_from_json(read_json_file(args.config));

  std::vector<CostReport> reports;
  if (args.all) {
    for (const FusionSpec& spec : enumerate_space(base)) reports.push_back(cost_report(spec));
  } else if (args.alpha_opt->count()) {
    FusionSpec spec{args.alpha, parse_beta(args.beta), base};
    validate(spec);
    reports.push_back(cost_report(spec));
  } else {
    throw ConfigError("pass --all for the whole grid or --alpha/--beta for one architecture");
  }

  TextTable table;
  table.rows.push_back({"model", "alpha", "beta", "params", "flops"});
  for (const CostReport& r : reports)
    table.rows.push_back({fusion_label(r.spec), std::to_string(r.spec.alpha),
                          fusion_op_name(r.spec.beta), std::to_string(r.param_count),
                          std::to_string(r.flops)});
  table.print(std::cout);

  if (reports.size() == 1) {
    std::cout << "\n";
    TextTable layers;
    layers.rows.push_back({"layer", "params", "flops"});
    for (const LayerCost& l : reports[0].per_layer)
      layers.rows.push_back({l.name, std::to_string(l.params), std::to_string(l.flops)});
    layers.print(std::cout);
  }

  if (args.out_opt->count()) {
    const fs::path out = ensure_out_dir(args.out);
    json arr = json::array();
    for (const CostReport& r : reports) {
      json layers = json::array();
      for (const LayerCost& l : r.per_layer)
        layers.push_back({{"name", l.name}, {"params", l.params}, {"flops", l.flops}});
      arr.push_back({{"spec", to_json(r.spec)},
                     {"param_count", r.param_count},
                     {"flops", r.flops},
                     {"per_layer", layers}});
    }
    write_text_file(out / "cost_reports.json", arr.dump(2) + "\n");
    std::vector<std::string> inputs;
    if (!args.config.empty()) inputs.push_back(args.config);
    write_run_manifest(out, "analyze", json{{"all", args.all}, {"base", to_json(base)}}, 0,
                       inputs, {"cost_reports.json"}, timer.seconds());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-branch 3D CNN pipeline: synthetic volumes, ROI preprocessing, "
               "training, fusion-architecture search, evaluation, cost accounting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.footer("Seeds fall back to the FUSEGRID_SEED environment variable when neither a\n"
             "flag nor a config file provides one.");

  GenDataArgs gen;
  CLI::App* gen_cmd =
      app.add_subcommand("gen-data", "Generate a synthetic paired (image, mask) dataset");
  gen_cmd->add_option("--out", gen.out, "Output dataset directory")->required();
  gen_cmd->add_option("--config", gen.config_path, "Generator config JSON");
  gen.side = gen_cmd->add_option("--side", gen.flags.side, "Volume side length (>= 16)");
  gen.n_normal = gen_cmd->add_option("--normal", gen.flags.n_normal, "Normal case count");
  gen.n_abnormal = gen_cmd->add_option("--abnormal", gen.flags.n_abnormal, "Abnormal case count");
  gen.shape_signal = gen_cmd->add_option("--shape-signal", gen.flags.shape_signal,
                                         "Probability an abnormal case deforms the boundary");
  gen.texture_signal = gen_cmd->add_option("--texture-signal", gen.flags.texture_signal,
                                           "Probability an abnormal case carries a lesion");
  gen.seg_noise = gen_cmd->add_option("--seg-noise", gen.flags.seg_noise,
                                      "Mask boundary perturbation magnitude");
  gen.seed_opt = gen_cmd->add_option("--seed", gen.seed, "Generator seed");

  PreprocessArgs pre;
  CLI::App* pre_cmd = app.add_subcommand(
      "preprocess", "Crop a padded ROI around the mask foreground and resample");
  pre_cmd->add_option("--image", pre.image, "Input image volume (VOL1)")->required();
  pre_cmd->add_option("--mask", pre.mask, "Input mask volume (VOL1)")->required();
  pre_cmd->add_option("--out-side", pre.out_side, "Output cube side")
      ->check(CLI::PositiveNumber);
  pre_cmd->add_option("--pad", pre.pad, "ROI padding in voxels")
      ->check(CLI::NonNegativeNumber);
  pre_cmd->add_option("--out", pre.out, "Output directory (default: current)");
  pre_cmd->add_flag("--no-normalize", pre.no_normalize,
                    "Keep raw intensities instead of windowing to [0, 1]");
  pre_cmd->add_option("--lo-hu", pre.lo_hu, "Lower intensity window bound");
  pre_cmd->add_option("--hi-hu", pre.hi_hu, "Upper intensity window bound");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one model on a dataset");
  train_cmd->add_option("--config", train.config, "Train config JSON (train + model)")
      ->required();
  train_cmd->add_option("--data", train.data, "Dataset directory or manifest CSV");
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train.seed_opt = train_cmd->add_option("--seed", train.seed, "Seed override");
  train_cmd->add_flag("--no-normalize", train.no_normalize,
                      "Dataset images are already in [0, 1]");

  SearchArgs search;
  CLI::App* search_cmd = app.add_subcommand(
      "search", "Cross-validate the fusion grid plus single-branch baselines");
  search_cmd->add_option("--config", search.config, "Search config JSON (train + base + folds)");
  search_cmd->add_option("--data", search.data, "Dataset directory or manifest CSV");
  search_cmd->add_option("--out", search.out, "Output directory")->required();
  search.folds_opt = search_cmd->add_option("--folds", search.folds, "Cross-validation folds");
  search_cmd->add_option("--jobs", search.jobs, "Parallel (spec, fold) workers")
      ->check(CLI::PositiveNumber);
  search.seed_opt = search_cmd->add_option("--seed", search.seed, "Seed override");
  search_cmd->add_flag("--no-normalize", search.no_normalize,
                       "Dataset images are already in [0, 1]");

  EvalArgs eval;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a score CSV: confusion metrics, ROC, AUC");
  eval_cmd->add_option("--scores", eval.scores, "Score CSV (case_id,p,z)")->required();
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--threshold", eval.threshold, "Decision threshold (default 0.5)");

  AnalyzeArgs analyze;
  CLI::App* analyze_cmd =
      app.add_subcommand("analyze", "Parameter and FLOP accounting per architecture");
  analyze_cmd->add_flag("--all", analyze.all, "Report every (alpha, beta) in the grid");
  analyze.alpha_opt = analyze_cmd->add_option("--alpha", analyze.alpha, "Fusion layer index");
  analyze_cmd->add_option("--beta", analyze.beta, "Fusion op: add, mul, concat (or +, *)");
  analyze_cmd->add_option("--config", analyze.config, "Base architecture config JSON");
  analyze.out_opt = analyze_cmd->add_option("--out", analyze.out, "Output directory for JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (pre_cmd->parsed()) return cmd_preprocess(pre);
    if (train_cmd->parsed()) return cmd_train(train);
    if (search_cmd->parsed()) return cmd_search(search);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (analyze_cmd->parsed()) return cmd_analyze(analyze);
    std::cerr << app.help();
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
