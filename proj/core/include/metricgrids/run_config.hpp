#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metricgrids/extrapolation_decoder.hpp"
#include "metricgrids/metric_encoding.hpp"
#include "metricgrids/signals.hpp"
#include "metricgrids/training.hpp"

namespace metricgrids {

enum class TaskKind : std::uint8_t { Image, Sdf };

struct ModelConfig {
  std::vector<MetricKind> metrics{MetricKind::linear(), MetricKind::sin_warp(),
                                  MetricKind::arcsin_warp()};
  int levels = 16;
  int features = 2;
  int base_res = 16;
  int max_res = 0;      // 0: derived from the task
  int log2_table = 0;   // 0: solved from param_budget, else kDefaultLog2Table
  int decoder_layers = 5;
  int decoder_hidden = 64;
  long param_budget = 0;  // 0 disables the solver

  static constexpr int kDefaultLog2Table = 15;
};

struct TaskConfig {
  TaskKind kind = TaskKind::Image;
  std::string image_path;
  int image_width = 0;  // recorded once the image is loaded
  int image_height = 0;
  AnalyticSdf sdf;
  double near_fraction = 0.5;
  double sigma_near = 0.01;
};

struct AblationConfig {
  bool baseline_mode = false;       // single linear grid at native resolution
  bool no_hierarchy = false;        // modulation sees all grids at once
  bool unrestricted_params = false; // ignore param_budget
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskConfig task;
  AblationConfig ablation;

  static RunConfig defaults(TaskKind kind);

  // `[section]` headers and `key = value` lines; '#' starts a comment.
  // Unknown keys and malformed values raise ConfigError naming the line.
  void apply_kv(std::string_view text);
  std::string to_kv() const;

  // Canonical form embedded in checkpoints (sorted keys, no whitespace).
  std::string to_json() const;
  static RunConfig from_json(std::string_view json);

  void validate() const;
};

struct ResolvedModel {
  GridStructure grid;
  DecoderShape decoder;
  std::size_t parameter_count = 0;
};

std::size_t count_parameters(const GridStructure& grid, const DecoderShape& decoder);

// Largest log2 table size at (or just below) the configured level count whose
// total lands in [0.95 B, 1.05 B]. Levels are only reduced when no table size
// at the current count fits. Throws ConfigError when nothing fits.
ResolvedModel solve_param_budget(GridStructure grid, DecoderShape decoder,
                                 std::size_t budget);

// Fills every derived field of cfg.model (max_res, levels, log2_table) so the
// result is reproducible from the config alone, and returns the shapes.
ResolvedModel resolve_model(RunConfig& cfg);

}  // namespace metricgrids
