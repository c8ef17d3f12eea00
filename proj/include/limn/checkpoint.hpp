#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "limn/adam.hpp"
#include "limn/params.hpp"

namespace limn {

// On disk a checkpoint is two files: a JSON manifest (config, tensor names,
// shapes, payload offsets in doubles) and a flat little-endian float64
// payload next to it with the extension replaced by ".bin".
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  ParamStore params;
  std::optional<AdamState> optimizer;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& manifest, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& manifest);

std::filesystem::path payload_path(const std::filesystem::path& manifest);

}  // namespace limn
