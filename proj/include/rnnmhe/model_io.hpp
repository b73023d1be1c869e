#pragma once

// JSON persistence for model descriptors and weight vectors.

#include <cstdint>
#include <filesystem>
#include <string>

#include "rnnmhe/model.hpp"
#include "json.hpp"

namespace rnnmhe {

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
/// Missing kind-specific fields take the ModelSpec defaults; throws ConfigError
/// naming the offending field.
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json params_to_json(const ParamVector& params);
ParamVector params_from_json(const nlohmann::json& j);

struct ParamCheckpoint {
  ParamVector params;
  std::uint64_t seed = 0;
  std::string scheme = "glorot";
  std::string created_at;  ///< ISO-8601 UTC; filled with the current time when empty
};

/// Writes {spec, values, seed, scheme, created_at} with 17 significant digits.
void save_checkpoint(const std::filesystem::path& path, const ParamCheckpoint& ckpt);
ParamCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

/// Dumps with doubles printed at %.17g so they round-trip exactly.
std::string dump_json(const nlohmann::ordered_json& j, int indent = 2);

}  // namespace rnnmhe
