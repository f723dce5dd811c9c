#pragma once

#include "dosgan/layers.hpp"
#include "dosgan/networks.hpp"
#include "dosgan/optim.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace dosgan {

inline constexpr const char* kCheckpointFormat = "dosgan-ckpt-v1";

/// On-disk layout: the format tag and a newline, a little-endian u64 header
/// length, a JSON header (metadata plus the blob table), the float32 blobs in
/// table order, and a trailing u64 FNV-1a checksum of everything before it.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix<float>> blobs;
};

/// Writes to a temporary file and renames it into place.
void save_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws Error on a missing file, wrong format tag, truncation or checksum mismatch.
Archive load_archive(const std::filesystem::path& path);

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

void store_parameters(Archive& archive, const std::string& prefix, const ConstParameterList<float>& params);
/// Copies blobs named `prefix/<param>` into the parameters; shapes must match.
void restore_parameters(const Archive& archive, const std::string& prefix, const ParameterList<float>& params);

void store_optimizer(Archive& archive, const std::string& prefix, const Adam<float>& opt,
                     const ConstParameterList<float>& params);
void restore_optimizer(const Archive& archive, const std::string& prefix, Adam<float>& opt,
                       const ParameterList<float>& params);

}  // namespace dosgan
