#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "metricgrids/field_model.hpp"
#include "metricgrids/signals.hpp"

namespace metricgrids {

// Evaluates a scalar field at n points (xyz row-major) into out[0..n).
using ScalarField = std::function<void(std::span<const double> xyz, std::span<double> out)>;

// -10 log10(MSE) over all channels; +infinity when the images are identical.
double psnr(const ImageField& pred, const ImageField& ref);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, range 1, per channel over valid windows, averaged over channels.
double ssim(const ImageField& pred, const ImageField& ref);

// Evaluates a 3-output model at every pixel centre of a width x height raster
// and clamps to [0,1].
template <class Real>
ImageField render_image(const FieldModel<Real>& model, int width, int height);

// Wraps a 1-output 3D model as a ScalarField.
template <class Real>
ScalarField as_scalar_field(const FieldModel<Real>& model);

// Central-difference step used for predicted normals: half the finest cell.
double normal_fd_step(const GridStructure& grid);

// Occupancy (value <= 0) IoU on a resolution^3 lattice of cell centres. Two
// empty sets score 1.
double iou_occupancy(const ScalarField& predicted, const AnalyticSdf& sdf,
                     int resolution = 128);

struct NaeResult {
  double degrees = 0.0;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // zero-magnitude predicted gradients
  bool warning = false;      // more than 1% excluded
};

// Mean angle between the central-difference gradient of `predicted` (step
// fd_step) and the analytic normal, over n_points surface points.
NaeResult normal_angular_error(const ScalarField& predicted, const AnalyticSdf& sdf,
                               std::size_t n_points, Rng& rng, double fd_step);

// Mean angle between paired unit vectors (n x 3 row-major), in degrees.
double mean_angle_degrees(std::span<const double> a, std::span<const double> b);

// Per-pixel squared error summed over channels, scaled so the largest error
// is white, written as 8-bit grayscale PNG.
void error_map(const ImageField& pred, const ImageField& ref,
               const std::filesystem::path& path);

struct MetricsReport {
  std::string task;  // "image" or "sdf"
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> iou;
  std::optional<double> nae;
  std::optional<std::size_t> params_count;
  std::optional<double> wall_time;

  // Single-line JSON; +infinity PSNR is written as the string "inf".
  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
  // Writes the header first when the file is new or empty.
  void append_csv(const std::filesystem::path& path) const;
};

}  // namespace metricgrids
