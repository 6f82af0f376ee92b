#include "metricgrids/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "metricgrids/errors.hpp"

namespace metricgrids {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= std::uint32_t(static_cast<unsigned char>(in[pos + std::size_t(i)])) << (8 * i);
  }
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

void get_floats(std::string_view in, std::size_t pos, std::span<float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(in, pos + 4 * i));
  }
}

std::string encode(std::string_view json, const FieldModel<float>& model) {
  std::string out;
  out.reserve(12 + json.size() + 4 * model.parameter_count());
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out.append(json);
  put_floats(out, model.grids.params());
  put_floats(out, model.decoder.data());
  return out;
}

}  // namespace

std::string encode_checkpoint(const RunConfig& cfg, const FieldModel<float>& model) {
  return encode(cfg.to_json(), model);
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  return encode(ckpt.config_json, ckpt.model);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)", 0);
  }
  if (bytes.size() < 12) throw FormatError("truncated checkpoint header", bytes.size());
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")",
                      4);
  }
  const std::size_t json_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + json_len) {
    throw FormatError("truncated checkpoint config", bytes.size());
  }
  Checkpoint c;
  c.config_json = std::string(bytes.substr(12, json_len));
  c.config = RunConfig::from_json(c.config_json);
  RunConfig resolved = c.config;
  c.shapes = resolve_model(resolved);
  if (resolved.model.levels != c.config.model.levels ||
      resolved.model.log2_table != c.config.model.log2_table ||
      resolved.model.max_res != c.config.model.max_res) {
    throw FormatError("embedded config is not fully resolved", 12);
  }
  c.model = FieldModel<float>(c.shapes.grid, c.shapes.decoder);
  const std::size_t count = c.model.parameter_count();
  const std::size_t body = 12 + json_len;
  if (bytes.size() != body + 4 * count) {
    throw FormatError("checkpoint holds " + std::to_string((bytes.size() - body) / 4) +
                          " parameters, config implies " + std::to_string(count),
                      body);
  }
  get_floats(bytes, body, c.model.grids.params());
  get_floats(bytes, body + 4 * c.model.grids.params().size(), c.model.decoder.data());
  return c;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return s.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                      const FieldModel<float>& model) {
  write_file_bytes(path, encode_checkpoint(cfg, model));
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace metricgrids
