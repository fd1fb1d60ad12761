#include <cstdint>
#include <fstream>
#include <map>

#include "fusegrid/config_json.hpp"
#include "fusegrid/errors.hpp"
#include "fusegrid/model.hpp"

namespace fusegrid {

namespace {

using nlohmann::json;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_record(std::ofstream& out, const std::string& name, const std::vector<int>& shape,
                  std::span<const float> payload) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return path.string() + ".json";
}

}  // namespace

const char* base_input_name(BaseInput input) {
  switch (input) {
    case BaseInput::Mask: return "mask";
    case BaseInput::Image: return "image";
    case BaseInput::Both: return "both";
  }
  throw ConfigError("unknown base input");
}

BaseInput base_input_from_name(const std::string& name) {
  if (name == "mask") return BaseInput::Mask;
  if (name == "image") return BaseInput::Image;
  if (name == "both") return BaseInput::Both;
  throw ConfigError("unknown base input name: " + name);
}

json to_json(const BaseConfig& config) {
  return json{{"num_layers", config.num_layers},
              {"channels", config.channels},
              {"input_side", config.input_side},
              {"pool_after", config.pool_after},
              {"fc_hidden", config.fc_hidden}};
}

BaseConfig base_config_from_json(const json& j) {
  BaseConfig config;
  try {
    if (j.contains("num_layers")) config.num_layers = j.at("num_layers").get<int>();
    if (j.contains("channels")) config.channels = j.at("channels").get<std::vector<int>>();
    if (j.contains("input_side")) config.input_side = j.at("input_side").get<int>();
    if (j.contains("pool_after")) config.pool_after = j.at("pool_after").get<std::vector<int>>();
    if (j.contains("fc_hidden")) config.fc_hidden = j.at("fc_hidden").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad base config JSON: ") + e.what());
  }
  validate(config);
  return config;
}

json to_json(const FusionSpec& spec) {
  return json{{"alpha", spec.alpha},
              {"beta", fusion_op_name(spec.beta)},
              {"base", to_json(spec.base)}};
}

FusionSpec fusion_spec_from_json(const json& j) {
  FusionSpec spec;
  try {
    spec.alpha = j.at("alpha").get<int>();
    spec.beta = fusion_op_from_name(j.at("beta").get<std::string>());
    if (j.contains("base")) spec.base = base_config_from_json(j.at("base"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad fusion spec JSON: ") + e.what());
  }
  validate(spec);
  return spec;
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create checkpoint file: " + path.string());
  for (const Parameter& p : model.parameters())
    write_record(out, p.name, p.tensor.shape(), p.tensor.data());
  for (const auto& [name, buf] : model.state_buffers())
    write_record(out, name, {static_cast<int>(buf.size())}, buf);
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
  out.close();

  json side;
  side["format"] = "fusegrid-checkpoint";
  if (model.is_fused()) {
    side["kind"] = "fused";
    side["spec"] = to_json(model.fusion_spec());
  } else {
    side["kind"] = "base";
    side["input"] = base_input_name(model.base_input());
    side["base"] = to_json(model.base_config());
  }
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw IoError("cannot create checkpoint sidecar: " + sidecar_path(path).string());
  js << side.dump(2) << "\n";
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw IoError("missing checkpoint sidecar: " + sidecar_path(path).string());
  json side;
  try {
    js >> side;
  } catch (const json::exception& e) {
    throw IoError("unparseable checkpoint sidecar: " + std::string(e.what()));
  }

  Model model = [&side]() {
    try {
      const std::string kind = side.at("kind").get<std::string>();
      if (kind == "fused") return build_fused(fusion_spec_from_json(side.at("spec")));
      if (kind == "base")
        return build_base(base_config_from_json(side.at("base")),
                          base_input_from_name(side.at("input").get<std::string>()));
      throw ConfigError("unknown checkpoint kind: " + kind);
    } catch (const json::exception& e) {
      throw IoError(std::string("bad checkpoint sidecar: ") + e.what());
    }
  }();

  std::map<std::string, std::span<float>> slots;
  std::map<std::string, std::vector<int>> shapes;
  auto params = model.parameters();  // handles sharing the model's storage
  for (Parameter& p : params) {
    slots.emplace(p.name, p.tensor.data());
    shapes.emplace(p.name, p.tensor.shape());
  }
  for (auto& [name, buf] : model.state_buffers()) {
    slots.emplace(name, buf);
    shapes.emplace(name, std::vector<int>{static_cast<int>(buf.size())});
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path.string());
  std::map<std::string, bool> filled;
  while (true) {
    const std::uint32_t name_len = read_u32(in);
    if (in.eof()) break;
    if (!in || name_len == 0 || name_len > 4096)
      throw IoError("corrupt checkpoint record header in " + path.string());
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(in);
    if (!in || rank > 8) throw IoError("corrupt checkpoint record for " + name);
    std::vector<int> shape(rank);
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(read_u32(in));
      numel *= shape[i];
    }
    auto slot = slots.find(name);
    if (slot == slots.end())
      throw IoError("checkpoint entry " + name + " does not belong to this architecture");
    if (shapes.at(name) != shape)
      throw IoError("checkpoint entry " + name + " has mismatched shape");
    in.read(reinterpret_cast<char*>(slot->second.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload for " + name);
    if (!filled.emplace(name, true).second)
      throw IoError("checkpoint entry " + name + " appears twice");
  }
  for (const auto& [name, _] : slots)
    if (!filled.count(name)) throw IoError("checkpoint is missing entry " + name);

  model.set_train(false);
  return model;
}

}  // namespace fusegrid
