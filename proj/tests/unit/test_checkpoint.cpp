#include <gtest/gtest.h>

#include <filesystem>

#include "metricgrids/checkpoint.hpp"
#include "metricgrids/errors.hpp"

namespace mg = metricgrids;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  mg::RunConfig cfg;
  mg::FieldModel<float> model;
};

Fixture small_fixture() {
  Fixture f{mg::RunConfig::defaults(mg::TaskKind::Image), {}};
  f.cfg.task.image_path = "x.png";
  f.cfg.task.image_width = 32;
  f.cfg.task.image_height = 32;
  f.cfg.model.levels = 3;
  f.cfg.model.decoder_hidden = 8;
  f.cfg.model.decoder_layers = 2;
  f.cfg.model.log2_table = 8;
  f.cfg.model.param_budget = 0;
  const auto r = mg::resolve_model(f.cfg);
  f.model = mg::FieldModel<float>(r.grid, r.decoder);
  f.model.init(4);
  return f;
}

}  // namespace

TEST(Checkpoint, WriteReadWriteIsBitExact) {
  const auto f = small_fixture();
  const fs::path dir = fs::temp_directory_path() / "metricgrids_ckpt";
  fs::create_directories(dir);
  mg::write_checkpoint(dir / "a.mgrd", f.cfg, f.model);
  const auto ck = mg::read_checkpoint(dir / "a.mgrd");
  mg::write_checkpoint(dir / "b.mgrd", ck);
  EXPECT_EQ(mg::read_file_bytes(dir / "a.mgrd"), mg::read_file_bytes(dir / "b.mgrd"));
  EXPECT_TRUE(std::equal(ck.model.grids.params().begin(), ck.model.grids.params().end(),
                         f.model.grids.params().begin()));
  EXPECT_TRUE(std::equal(ck.model.decoder.data().begin(), ck.model.decoder.data().end(),
                         f.model.decoder.data().begin()));
  EXPECT_EQ(ck.config.to_json(), f.cfg.to_json());
  EXPECT_EQ(ck.shapes.parameter_count, f.model.parameter_count());
}

TEST(Checkpoint, LayoutHeader) {
  const auto f = small_fixture();
  const auto bytes = mg::encode_checkpoint(f.cfg, f.model);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "MGRD");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  const std::uint32_t len = static_cast<unsigned char>(bytes[8]) |
                            static_cast<unsigned char>(bytes[9]) << 8 |
                            static_cast<unsigned char>(bytes[10]) << 16 |
                            std::uint32_t(static_cast<unsigned char>(bytes[11])) << 24;
  EXPECT_EQ(bytes.size(), 12 + len + 4 * f.model.parameter_count());
  EXPECT_EQ(bytes.substr(12, len), f.cfg.to_json());
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto f = small_fixture();
  const auto good = mg::encode_checkpoint(f.cfg, f.model);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  try {
    mg::decode_checkpoint(bad_magic);
    FAIL();
  } catch (const mg::FormatError& e) {
    EXPECT_EQ(e.position(), 0);
  }
  auto bad_version = good;
  bad_version[4] = 9;
  try {
    mg::decode_checkpoint(bad_version);
    FAIL();
  } catch (const mg::FormatError& e) {
    EXPECT_EQ(e.position(), 4);
  }
  EXPECT_THROW(mg::decode_checkpoint(good.substr(0, good.size() - 3)), mg::FormatError);
  EXPECT_THROW(mg::decode_checkpoint(good.substr(0, 6)), mg::FormatError);
  EXPECT_THROW(mg::decode_checkpoint(good + "xx"), mg::FormatError);
  EXPECT_THROW(mg::read_checkpoint("/nonexistent/dir/model.mgrd"), mg::IoError);
}
