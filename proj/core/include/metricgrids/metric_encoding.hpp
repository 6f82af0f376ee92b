#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metricgrids {

enum class MetricTag : std::uint8_t { Linear, Power, Sin, Arcsin, Cos };

// A per-axis warp phi: [0,1] -> [0,1] with phi(0) = 0, phi(1) = 1 that
// replaces the linear fraction inside multilinear corner weights.
struct MetricKind {
  MetricTag tag = MetricTag::Linear;
  int power = 1;  // exponent for MetricTag::Power, unused otherwise

  static constexpr MetricKind linear() { return {MetricTag::Linear, 1}; }
  static MetricKind pow(int p);
  static constexpr MetricKind sin_warp() { return {MetricTag::Sin, 1}; }
  static constexpr MetricKind arcsin_warp() { return {MetricTag::Arcsin, 1}; }
  static constexpr MetricKind cos_warp() { return {MetricTag::Cos, 1}; }

  // "linear", "pow<p>", "sin", "arcsin", "cos"
  std::string name() const;
  static MetricKind parse(std::string_view name);

  friend bool operator==(const MetricKind&, const MetricKind&) = default;
};

// Accepts "linear,sin,arcsin" with optional surrounding brackets and spaces.
std::vector<MetricKind> parse_metric_list(std::string_view text);
std::string format_metric_list(std::span<const MetricKind> metrics);

// Throws DomainError when t is outside [0,1].
double metric_warp(MetricKind kind, double t);

// Unchecked warp used on the hot path.
template <class Real>
Real warp_unchecked(MetricKind kind, Real t) noexcept;

// Weight of corner c (bit j of the index selects c_j) is
// prod_j [c_j * phi(t_j) + (1 - c_j) * (1 - phi(t_j))].
std::vector<double> corner_weights(MetricKind kind, std::span<const double> t);

inline constexpr std::array<std::uint32_t, 3> kHashPrimes{1u, 2654435761u,
                                                          805459861u};

// (XOR_j vertex_j * prime_j) mod table_size with wrapping 32-bit products.
std::uint32_t hash_index(std::span<const std::uint32_t> vertex,
                         std::uint32_t table_size);

// Geometric ladder from base_res to max_res (both inclusive).
std::vector<int> level_resolutions(int base_res, int max_res, int levels);

enum class Storage : std::uint8_t { Dense, Hashed };

struct GridLevelSpec {
  int resolution = 0;          // vertices per axis
  Storage storage = Storage::Dense;
  std::uint32_t entries = 0;   // R^d when dense, T_m when hashed
  int features = 0;
  std::size_t offset = 0;      // first scalar of this slab in the flat params
};

// Structural hyperparameters of a MetricGridSet.
struct GridStructure {
  int dims = 2;
  std::vector<MetricKind> metrics{MetricKind::linear()};
  int levels = 16;
  int features = 2;
  int base_res = 16;
  int max_res = 128;
  int log2_table = 14;

  static constexpr int kMinLog2Table = 4;

  int grid_count() const { return static_cast<int>(metrics.size()); }
  int grid_width() const { return levels * features; }
  int feature_width() const { return grid_count() * grid_width(); }
  // T >> m for the m-th (zero based) grid, floored at 2^kMinLog2Table.
  std::uint32_t table_size(int grid) const;
  std::size_t parameter_count() const;
  // Throws ConfigError on inconsistent values.
  void validate() const;
};

// Corner slots and weights retained by a batched encode. For sample i, grid m,
// level l, corner c the record lives at ((i * M + m) * L + l) * 2^d + c.
template <class Real>
struct EncodingCache {
  std::size_t samples = 0;
  int grids = 0;
  int levels = 0;
  int corners = 0;
  std::vector<std::uint32_t> slots;  // scalar offset of feature 0 in params
  std::vector<Real> weights;
};

template <class Real>
struct EncodingOutput {
  // M vectors of length L*F, level-major.
  std::vector<std::vector<Real>> per_grid_features;
  EncodingCache<Real> cache;
};

template <class Real>
class MetricGridSet {
 public:
  MetricGridSet() = default;
  explicit MetricGridSet(GridStructure structure);

  // Uniform in [-scale, scale] from a seeded stream.
  void init_uniform(std::uint64_t seed, Real scale = Real(1e-4));

  const GridStructure& structure() const noexcept { return structure_; }
  int dims() const noexcept { return structure_.dims; }
  int grid_count() const noexcept { return structure_.grid_count(); }
  int levels() const noexcept { return structure_.levels; }
  int features() const noexcept { return structure_.features; }
  int feature_width() const noexcept { return structure_.feature_width(); }
  const GridLevelSpec& level(int grid, int level) const {
    return specs_[static_cast<std::size_t>(grid * structure_.levels + level)];
  }

  std::span<Real> params() noexcept { return params_; }
  std::span<const Real> params() const noexcept { return params_; }
  std::span<Real> slab(int grid, int level);
  std::span<const Real> slab(int grid, int level) const;

  // Entry index inside the (grid, level) slab for an integer vertex.
  std::uint32_t vertex_entry(int grid, int level,
                             std::span<const std::uint32_t> vertex) const;

  // Single point. Throws DomainError for coordinates outside [0,1].
  EncodingOutput<Real> encode(std::span<const Real> x) const;

  // Adds weight * upstream into grad (sized like params()).
  void encode_backward(const EncodingCache<Real>& cache,
                       std::span<const std::vector<Real>> upstream,
                       std::span<Real> grad) const;

  // coords: n x d row-major, clamped into [0,1]. features: column-major
  // (feature_width x n), grid blocks stacked in order.
  void encode_batch(std::span<const Real> coords, std::size_t n,
                    std::span<Real> features, EncodingCache<Real>& cache) const;

  // feature_grads has the layout of encode_batch's features.
  void backward_batch(const EncodingCache<Real>& cache,
                      std::span<const Real> feature_grads,
                      std::span<Real> grad) const;

 private:
  void encode_point(const Real* x, Real* features, std::uint32_t* slots,
                    Real* weights) const;

  GridStructure structure_;
  std::vector<GridLevelSpec> specs_;
  std::vector<Real> params_;
};

extern template class MetricGridSet<float>;
extern template class MetricGridSet<double>;

}  // namespace metricgrids
