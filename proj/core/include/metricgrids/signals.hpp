#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace metricgrids {

// Row-major RGB image with channel values in [0,1].
struct ImageField {
  int width = 0;
  int height = 0;
  static constexpr int channels = 3;
  std::vector<float> data;

  ImageField() = default;
  ImageField(int w, int h, float fill = 0.0f);

  std::size_t pixel_count() const {
    return std::size_t(width) * std::size_t(height);
  }
  float& at(int x, int y, int c) {
    return data[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 +
                std::size_t(c)];
  }
  float at(int x, int y, int c) const {
    return data[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 +
                std::size_t(c)];
  }
};

// 8-bit RGB PNG (grayscale is expanded) or binary PPM (P6, maxval 255).
// Throws IoError for unreadable files and FormatError for bad contents.
ImageField load_image(const std::filesystem::path& path);
// Format chosen by extension: .ppm writes P6, anything else PNG.
void save_image(const ImageField& field, const std::filesystem::path& path);
// 8-bit grayscale PNG from row-major values in [0,1].
void save_gray_png(int width, int height, const std::vector<float>& values,
                   const std::filesystem::path& path);

// Coordinates in [0,1]^d paired with targets; both row-major.
struct SampleBatch {
  int dims = 0;
  int outputs = 0;
  std::vector<double> coords;
  std::vector<double> targets;

  std::size_t size() const {
    return dims == 0 ? 0 : coords.size() / static_cast<std::size_t>(dims);
  }
};

using Rng = std::mt19937_64;

// Pixel (i, j) maps to ((i + 0.5) / width, (j + 0.5) / height).
std::array<double, 2> pixel_coord(const ImageField& field, int i, int j);
// Inverse of pixel_coord on pixel centres.
std::array<int, 2> nearest_pixel(const ImageField& field, double u, double v);

// n pixels drawn uniformly with replacement.
SampleBatch sample_image_batch(const ImageField& field, std::size_t n, Rng& rng);

// Walks a seeded permutation of all pixels so every pixel is visited once per
// epoch before any repeats.
class ExhaustiveImageSampler {
 public:
  ExhaustiveImageSampler(const ImageField& field, std::uint64_t seed);
  SampleBatch next(std::size_t n);

 private:
  const ImageField* field_;
  Rng rng_;
  std::vector<std::uint32_t> order_;
  std::size_t cursor_ = 0;
};

// Every pixel centre in row-major order, with targets.
SampleBatch all_pixels(const ImageField& field);

using Vec3 = std::array<double, 3>;

enum class SdfShape : std::uint8_t { Sphere, Torus, Box, Csg };

// Closed-form signed distance fields on the unit cube.
struct AnalyticSdf {
  SdfShape shape = SdfShape::Sphere;
  Vec3 center{0.5, 0.5, 0.5};
  double radius = 0.3;            // sphere
  double major_radius = 0.25;     // torus, ring in the xz plane
  double minor_radius = 0.1;      // torus
  Vec3 half_extents{0.2, 0.2, 0.2};  // box

  static AnalyticSdf sphere(Vec3 c = {0.5, 0.5, 0.5}, double r = 0.3);
  static AnalyticSdf torus(Vec3 c = {0.5, 0.5, 0.5}, double major = 0.25,
                           double minor = 0.1);
  static AnalyticSdf box(Vec3 c = {0.5, 0.5, 0.5}, Vec3 half = {0.2, 0.2, 0.2});
  static AnalyticSdf csg();

  std::string name() const;
  // "sphere", "torus", "box", "csg"; throws ConfigError otherwise.
  static AnalyticSdf from_name(std::string_view name);
};

double sdf_eval(const AnalyticSdf& sdf, const Vec3& p);
// Unit gradient. On medial sets the branch with the lowest axis index wins.
Vec3 sdf_gradient(const AnalyticSdf& sdf, const Vec3& p);

// (1 - near_fraction) * n uniform points plus near_fraction * n points pulled
// onto the surface by three projection steps and jittered by N(0, sigma).
SampleBatch sample_sdf_batch(const AnalyticSdf& sdf, std::size_t n, Rng& rng,
                             double near_fraction = 0.5, double sigma_near = 0.01);

// Projection half of sample_sdf_batch, exposed for tests.
Vec3 project_to_surface(const AnalyticSdf& sdf, Vec3 p, int iterations = 3);

}  // namespace metricgrids
