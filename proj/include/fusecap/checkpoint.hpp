#pragma once
// Binary checkpoint container:
//   "FCAPCKPT" | u32 version | u64 header length | header JSON
//   | u64 parameter count | per parameter: u32 name length, name, u8 frozen,
//     u32 rank, u64 dims..., little-endian f64 values
//   | 32-byte SHA-256 of everything before it
// The header records the model type, its config (seed and vocabulary
// included) and free-form metadata.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fusecap/caption_model.hpp"
#include "fusecap/mlm.hpp"

namespace fusecap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json mlm_config_to_json(const MlmConfig& config);
MlmConfig mlm_config_from_json(const nlohmann::json& j);

/// Serialized bytes of a model; `meta` is stored verbatim in the header.
std::vector<unsigned char> checkpoint_bytes(const CaptionModel& model,
                                            const nlohmann::json& meta = nlohmann::json::object());
std::vector<unsigned char> checkpoint_bytes(const ToyMLM& mlm,
                                            const nlohmann::json& meta = nlohmann::json::object());

void save_checkpoint(const CaptionModel& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());
void save_checkpoint(const ToyMLM& mlm, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCaptionModel {
  CaptionModel model;
  nlohmann::json meta;
};
struct LoadedMlm {
  ToyMLM mlm;
  nlohmann::json meta;
};

/// Model type recorded in a checkpoint ("caption" or "mlm").
std::string checkpoint_model_type(const std::filesystem::path& path);

/// Throw LoadError on a bad magic, version, checksum, model type, parameter
/// set or frozen flag (caption models have none frozen, MLMs all frozen).
LoadedCaptionModel load_caption_model(const std::filesystem::path& path);
LoadedMlm load_mlm(const std::filesystem::path& path);
LoadedCaptionModel parse_caption_model(const std::vector<unsigned char>& bytes);
LoadedMlm parse_mlm(const std::vector<unsigned char>& bytes);

}  // namespace fusecap
