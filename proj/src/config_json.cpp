#include "fusegrid/config_json.hpp"

#include "fusegrid/errors.hpp"

namespace fusegrid {

namespace {

using nlohmann::json;

}  // namespace

json to_json(const TrainConfig& config) {
  return json{{"batch_size", config.batch_size}, {"lr0", config.lr0},
              {"decay", config.decay},           {"iterations", config.iterations},
              {"lambda", config.lambda},         {"seed", config.seed},
              {"augment", config.augment}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig config;
  try {
    if (j.contains("batch_size")) config.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr0")) config.lr0 = j.at("lr0").get<double>();
    if (j.contains("decay")) config.decay = j.at("decay").get<double>();
    if (j.contains("iterations")) config.iterations = j.at("iterations").get<int>();
    if (j.contains("lambda")) config.lambda = j.at("lambda").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("augment")) config.augment = j.at("augment").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config JSON: ") + e.what());
  }
  validate(config);
  return config;
}

json to_json(const GenConfig& config) {
  return json{{"side", config.side},
              {"n_normal", config.n_normal},
              {"n_abnormal", config.n_abnormal},
              {"shape_signal", config.shape_signal},
              {"texture_signal", config.texture_signal},
              {"seg_noise", config.seg_noise},
              {"seed", config.seed}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig config;
  try {
    if (j.contains("side")) config.side = j.at("side").get<int>();
    if (j.contains("n_normal")) config.n_normal = j.at("n_normal").get<int>();
    if (j.contains("n_abnormal")) config.n_abnormal = j.at("n_abnormal").get<int>();
    if (j.contains("shape_signal")) config.shape_signal = j.at("shape_signal").get<double>();
    if (j.contains("texture_signal")) config.texture_signal = j.at("texture_signal").get<double>();
    if (j.contains("seg_noise")) config.seg_noise = j.at("seg_noise").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad generator config JSON: ") + e.what());
  }
  validate(config);
  return config;
}

}  // namespace fusegrid
