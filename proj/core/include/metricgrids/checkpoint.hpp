#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "metricgrids/field_model.hpp"
#include "metricgrids/run_config.hpp"

namespace metricgrids {

// On-disk layout, all integers little-endian:
//   "MGRD" | u32 version | u32 json length | config JSON | float32 params
// Parameters are the grid slabs in (grid, level) order followed by the
// decoder backbone, modulation and output blocks.
inline constexpr char kCheckpointMagic[4] = {'M', 'G', 'R', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;          // parsed from config_json
  std::string config_json;   // embedded text, kept verbatim
  ResolvedModel shapes;
  FieldModel<float> model;
};

// cfg must already be resolved (resolve_model) for model's shapes.
std::string encode_checkpoint(const RunConfig& cfg, const FieldModel<float>& model);
std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, version or truncation.
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                      const FieldModel<float>& model);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace metricgrids
