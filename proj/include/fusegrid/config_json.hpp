#pragma once

#include <json.hpp>

#include "fusegrid/model.hpp"
#include "fusegrid/synthdata.hpp"
#include "fusegrid/train.hpp"

namespace fusegrid {

/// All from_json readers accept partial objects (absent fields keep their
/// defaults), validate the result, and wrap nlohmann parse/type errors in
/// ConfigError.

nlohmann::json to_json(const BaseConfig& config);
BaseConfig base_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FusionSpec& spec);
FusionSpec fusion_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const GenConfig& config);
GenConfig gen_config_from_json(const nlohmann::json& j);

const char* base_input_name(BaseInput input);  // "mask" / "image" / "both"
BaseInput base_input_from_name(const std::string& name);

}  // namespace fusegrid
