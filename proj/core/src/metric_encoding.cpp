#include "metricgrids/metric_encoding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

#include "metricgrids/errors.hpp"

namespace metricgrids {

MetricKind MetricKind::pow(int p) {
  if (p < 2) {
    throw ConfigError("power metric needs an exponent >= 2, got " +
                      std::to_string(p));
  }
  return {MetricTag::Power, p};
}

std::string MetricKind::name() const {
  switch (tag) {
    case MetricTag::Linear: return "linear";
    case MetricTag::Power: return "pow" + std::to_string(power);
    case MetricTag::Sin: return "sin";
    case MetricTag::Arcsin: return "arcsin";
    case MetricTag::Cos: return "cos";
  }
  return "unknown";
}

MetricKind MetricKind::parse(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "linear") return linear();
  if (s == "sin") return sin_warp();
  if (s == "arcsin" || s == "asin") return arcsin_warp();
  if (s == "cos") return cos_warp();
  if (s.size() > 3 && s.starts_with("pow")) {
    const std::string digits = s.substr(3);
    if (std::all_of(digits.begin(), digits.end(),
                    [](unsigned char c) { return std::isdigit(c); }) &&
        digits.size() <= 2) {
      return pow(std::stoi(digits));
    }
  }
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

std::vector<MetricKind> parse_metric_list(std::string_view text) {
  std::vector<MetricKind> out;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      out.push_back(MetricKind::parse(token));
      token.clear();
    }
  };
  for (char c : text) {
    if (c == ',') {
      flush();
    } else if (c != '[' && c != ']' && c != '"' &&
               !std::isspace(static_cast<unsigned char>(c))) {
      token.push_back(c);
    }
  }
  flush();
  if (out.empty()) throw ConfigError("empty metric list");
  return out;
}

std::string format_metric_list(std::span<const MetricKind> metrics) {
  std::string out;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    if (i) out += ',';
    out += metrics[i].name();
  }
  return out;
}

template <class Real>
Real warp_unchecked(MetricKind kind, Real t) noexcept {
  constexpr Real half_pi = std::numbers::pi_v<Real> / Real(2);
  Real r = t;
  switch (kind.tag) {
    case MetricTag::Linear:
      return t;
    case MetricTag::Power:
      r = t;
      for (int i = 1; i < kind.power; ++i) r *= t;
      return r;
    case MetricTag::Sin:
      r = std::sin(t * half_pi);
      break;
    case MetricTag::Arcsin:
      r = std::asin(t) / half_pi;
      break;
    case MetricTag::Cos:
      r = Real(1) - std::cos(t * half_pi);
      break;
  }
  return std::clamp(r, Real(0), Real(1));
}

template float warp_unchecked<float>(MetricKind, float) noexcept;
template double warp_unchecked<double>(MetricKind, double) noexcept;
template long double warp_unchecked<long double>(MetricKind, long double) noexcept;

double metric_warp(MetricKind kind, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("metric_warp: t = " + std::to_string(t) +
                      " outside [0,1]");
  }
  return warp_unchecked(kind, t);
}

std::vector<double> corner_weights(MetricKind kind, std::span<const double> t) {
  const std::size_t d = t.size();
  if (d == 0 || d > 3) throw DomainError("corner_weights: need 1 to 3 axes");
  std::array<double, 3> phi{};
  for (std::size_t j = 0; j < d; ++j) {
    if (!(t[j] >= 0.0 && t[j] < 1.0)) {
      throw DomainError("corner_weights: t outside [0,1)");
    }
    phi[j] = warp_unchecked(kind, t[j]);
  }
  std::vector<double> w(std::size_t{1} << d);
  for (std::size_t c = 0; c < w.size(); ++c) {
    double p = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      p *= ((c >> j) & 1u) ? phi[j] : 1.0 - phi[j];
    }
    w[c] = p;
  }
  return w;
}

std::uint32_t hash_index(std::span<const std::uint32_t> vertex,
                         std::uint32_t table_size) {
  std::uint32_t h = 0;
  for (std::size_t j = 0; j < vertex.size(); ++j) {
    h ^= vertex[j] * kHashPrimes[j];
  }
  return h & (table_size - 1u);
}

std::vector<int> level_resolutions(int base_res, int max_res, int levels) {
  if (levels < 1) throw ConfigError("level count must be >= 1");
  if (base_res < 2 || max_res < base_res) {
    throw ConfigError("need 2 <= base_res <= max_res");
  }
  std::vector<int> out(static_cast<std::size_t>(levels));
  out[0] = base_res;
  if (levels == 1) return out;
  const double growth =
      std::exp((std::log(double(max_res)) - std::log(double(base_res))) /
               double(levels - 1));
  for (int l = 1; l < levels; ++l) {
    // The 1e-9 guards exact powers (e.g. a ladder doubling 16 -> 32) against
    // landing one ulp below the integer.
    out[static_cast<std::size_t>(l)] = static_cast<int>(
        std::floor(double(base_res) * std::pow(growth, double(l)) + 1e-9));
  }
  out.back() = max_res;
  return out;
}

std::uint32_t GridStructure::table_size(int grid) const {
  const std::uint32_t full = std::uint32_t{1} << log2_table;
  const std::uint32_t floor_size = std::uint32_t{1} << kMinLog2Table;
  return std::max(full >> grid, floor_size);
}

namespace {

std::uint64_t ipow(std::uint64_t base, int e) {
  std::uint64_t r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace

void GridStructure::validate() const {
  if (dims < 1 || dims > 3) throw ConfigError("dims must be 1, 2 or 3");
  if (metrics.empty()) throw ConfigError("at least one metric grid required");
  if (metrics.front().tag != MetricTag::Linear) {
    throw ConfigError("the first metric grid must be linear");
  }
  for (const auto& m : metrics) {
    if (m.tag == MetricTag::Power && m.power < 2) {
      throw ConfigError("power metric exponent must be >= 2");
    }
  }
  if (levels < 1) throw ConfigError("levels must be >= 1");
  if (features < 1) throw ConfigError("features per level must be >= 1");
  if (base_res < 2 || max_res < base_res) {
    throw ConfigError("need 2 <= base_res <= max_res");
  }
  if (log2_table < kMinLog2Table || log2_table > 30) {
    throw ConfigError("log2_table must be in [4, 30]");
  }
}

std::size_t GridStructure::parameter_count() const {
  const auto res = level_resolutions(base_res, max_res, levels);
  std::size_t total = 0;
  for (int m = 0; m < grid_count(); ++m) {
    const std::uint64_t t = table_size(m);
    for (int r : res) {
      const bool dense = ipow(std::uint64_t(r) + 1, dims) <= t;
      total += (dense ? ipow(std::uint64_t(r), dims) : t) *
               static_cast<std::uint64_t>(features);
    }
  }
  return total;
}

template <class Real>
MetricGridSet<Real>::MetricGridSet(GridStructure structure)
    : structure_(std::move(structure)) {
  structure_.validate();
  const auto res = level_resolutions(structure_.base_res, structure_.max_res,
                                     structure_.levels);
  std::size_t offset = 0;
  for (int m = 0; m < structure_.grid_count(); ++m) {
    const std::uint64_t t = structure_.table_size(m);
    for (int r : res) {
      GridLevelSpec spec;
      spec.resolution = r;
      spec.features = structure_.features;
      spec.storage = ipow(std::uint64_t(r) + 1, structure_.dims) <= t
                         ? Storage::Dense
                         : Storage::Hashed;
      spec.entries = static_cast<std::uint32_t>(
          spec.storage == Storage::Dense ? ipow(std::uint64_t(r), structure_.dims)
                                         : t);
      spec.offset = offset;
      offset += std::size_t{spec.entries} * std::size_t(spec.features);
      specs_.push_back(spec);
    }
  }
  if (offset > std::size_t{0xffffffffu}) {
    throw ConfigError("grid parameters exceed 32-bit addressing");
  }
  params_.assign(offset, Real(0));
}

template <class Real>
void MetricGridSet<Real>::init_uniform(std::uint64_t seed, Real scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> dist(-scale, scale);
  for (auto& p : params_) p = dist(rng);
}

template <class Real>
std::span<Real> MetricGridSet<Real>::slab(int grid, int lvl) {
  const auto& s = level(grid, lvl);
  return std::span<Real>(params_).subspan(
      s.offset, std::size_t{s.entries} * std::size_t(s.features));
}

template <class Real>
std::span<const Real> MetricGridSet<Real>::slab(int grid, int lvl) const {
  const auto& s = level(grid, lvl);
  return std::span<const Real>(params_).subspan(
      s.offset, std::size_t{s.entries} * std::size_t(s.features));
}

template <class Real>
std::uint32_t MetricGridSet<Real>::vertex_entry(
    int grid, int lvl, std::span<const std::uint32_t> vertex) const {
  const auto& s = level(grid, lvl);
  if (s.storage == Storage::Hashed) return hash_index(vertex, s.entries);
  std::uint32_t idx = 0;
  std::uint32_t stride = 1;
  for (std::size_t j = 0; j < vertex.size(); ++j) {
    idx += vertex[j] * stride;
    stride *= static_cast<std::uint32_t>(s.resolution);
  }
  return idx;
}

template <class Real>
void MetricGridSet<Real>::encode_point(const Real* x, Real* features,
                                       std::uint32_t* slots,
                                       Real* weights) const {
  const int d = structure_.dims;
  const int corners = 1 << d;
  const int nf = structure_.features;
  const int levels = structure_.levels;
  const Real last_t = std::nextafter(Real(1), Real(0));

  std::array<std::uint32_t, 3> base{};
  std::array<Real, 3> phi{};
  std::array<std::uint32_t, 3> vertex{};

  for (int m = 0; m < structure_.grid_count(); ++m) {
    const MetricKind kind = structure_.metrics[static_cast<std::size_t>(m)];
    for (int l = 0; l < levels; ++l) {
      const GridLevelSpec& spec = specs_[static_cast<std::size_t>(m * levels + l)];
      const int r = spec.resolution;
      for (int j = 0; j < d; ++j) {
        const Real xj = std::clamp(x[j], Real(0), Real(1));
        const Real s = xj * Real(r - 1);
        int v = static_cast<int>(std::floor(s));
        Real t;
        if (v >= r - 1) {
          v = r - 2;
          t = last_t;
        } else {
          t = s - Real(v);
        }
        base[static_cast<std::size_t>(j)] = static_cast<std::uint32_t>(v);
        phi[static_cast<std::size_t>(j)] = warp_unchecked(kind, t);
      }

      Real* out = features + (m * levels + l) * nf;
      for (int f = 0; f < nf; ++f) out[f] = Real(0);

      for (int c = 0; c < corners; ++c) {
        Real w = Real(1);
        for (int j = 0; j < d; ++j) {
          const bool hi = (c >> j) & 1;
          const auto ju = static_cast<std::size_t>(j);
          w *= hi ? phi[ju] : Real(1) - phi[ju];
          vertex[ju] = base[ju] + (hi ? 1u : 0u);
        }
        std::uint32_t entry;
        if (spec.storage == Storage::Hashed) {
          std::uint32_t h = 0;
          for (int j = 0; j < d; ++j) {
            h ^= vertex[static_cast<std::size_t>(j)] *
                 kHashPrimes[static_cast<std::size_t>(j)];
          }
          entry = h & (spec.entries - 1u);
        } else {
          entry = 0;
          std::uint32_t stride = 1;
          for (int j = 0; j < d; ++j) {
            entry += vertex[static_cast<std::size_t>(j)] * stride;
            stride *= static_cast<std::uint32_t>(r);
          }
        }
        const auto slot =
            static_cast<std::uint32_t>(spec.offset) + entry * std::uint32_t(nf);
        const Real* p = params_.data() + slot;
        for (int f = 0; f < nf; ++f) out[f] += w * p[f];
        *slots++ = slot;
        *weights++ = w;
      }
    }
  }
}

template <class Real>
EncodingOutput<Real> MetricGridSet<Real>::encode(std::span<const Real> x) const {
  if (static_cast<int>(x.size()) != structure_.dims) {
    throw ShapeError("encode: coordinate has " + std::to_string(x.size()) +
                     " components, grid expects " +
                     std::to_string(structure_.dims));
  }
  for (Real v : x) {
    if (!(v >= Real(0) && v <= Real(1))) {
      throw DomainError("encode: coordinate outside [0,1]");
    }
  }
  EncodingOutput<Real> out;
  std::vector<Real> flat(static_cast<std::size_t>(feature_width()));
  encode_batch(x, 1, flat, out.cache);
  const auto width = static_cast<std::size_t>(structure_.grid_width());
  for (int m = 0; m < grid_count(); ++m) {
    const auto begin = flat.begin() + static_cast<std::ptrdiff_t>(m * width);
    out.per_grid_features.emplace_back(begin,
                                       begin + static_cast<std::ptrdiff_t>(width));
  }
  return out;
}

template <class Real>
void MetricGridSet<Real>::encode_backward(
    const EncodingCache<Real>& cache, std::span<const std::vector<Real>> upstream,
    std::span<Real> grad) const {
  if (cache.samples != 1 || static_cast<int>(upstream.size()) != grid_count()) {
    throw ShapeError("encode_backward: expected one cached sample and " +
                     std::to_string(grid_count()) + " upstream vectors");
  }
  const auto width = static_cast<std::size_t>(structure_.grid_width());
  std::vector<Real> flat;
  flat.reserve(width * upstream.size());
  for (const auto& g : upstream) {
    if (g.size() != width) {
      throw ShapeError("encode_backward: upstream vector length " +
                       std::to_string(g.size()) + " != " + std::to_string(width));
    }
    flat.insert(flat.end(), g.begin(), g.end());
  }
  backward_batch(cache, flat, grad);
}

template <class Real>
void MetricGridSet<Real>::encode_batch(std::span<const Real> coords,
                                       std::size_t n, std::span<Real> features,
                                       EncodingCache<Real>& cache) const {
  const auto d = static_cast<std::size_t>(structure_.dims);
  const auto width = static_cast<std::size_t>(feature_width());
  if (coords.size() != n * d || features.size() != n * width) {
    throw ShapeError("encode_batch: buffer sizes do not match batch");
  }
  cache.samples = n;
  cache.grids = grid_count();
  cache.levels = structure_.levels;
  cache.corners = 1 << structure_.dims;
  const std::size_t per_sample = static_cast<std::size_t>(cache.grids) *
                                 static_cast<std::size_t>(cache.levels) *
                                 static_cast<std::size_t>(cache.corners);
  cache.slots.resize(n * per_sample);
  cache.weights.resize(n * per_sample);
  for (std::size_t i = 0; i < n; ++i) {
    encode_point(coords.data() + i * d, features.data() + i * width,
                 cache.slots.data() + i * per_sample,
                 cache.weights.data() + i * per_sample);
  }
}

template <class Real>
void MetricGridSet<Real>::backward_batch(const EncodingCache<Real>& cache,
                                         std::span<const Real> feature_grads,
                                         std::span<Real> grad) const {
  const auto width = static_cast<std::size_t>(feature_width());
  if (cache.grids != grid_count() || cache.levels != structure_.levels ||
      cache.corners != (1 << structure_.dims)) {
    throw ShapeError("backward: cache was produced by a different grid set");
  }
  if (feature_grads.size() != cache.samples * width) {
    throw ShapeError("backward: feature gradient size mismatch");
  }
  if (grad.size() != params_.size()) {
    throw ShapeError("backward: gradient buffer size mismatch");
  }
  const int nf = structure_.features;
  const auto corners = static_cast<std::size_t>(cache.corners);
  const std::size_t blocks = static_cast<std::size_t>(cache.grids) *
                             static_cast<std::size_t>(cache.levels);
  const std::uint32_t* slot = cache.slots.data();
  const Real* weight = cache.weights.data();
  for (std::size_t i = 0; i < cache.samples; ++i) {
    const Real* g = feature_grads.data() + i * width;
    for (std::size_t b = 0; b < blocks; ++b) {
      const Real* gb = g + b * static_cast<std::size_t>(nf);
      for (std::size_t c = 0; c < corners; ++c) {
        Real* dst = grad.data() + *slot++;
        const Real w = *weight++;
        for (int f = 0; f < nf; ++f) dst[f] += w * gb[f];
      }
    }
  }
}

template class MetricGridSet<float>;
template class MetricGridSet<double>;
template class MetricGridSet<long double>;

}  // namespace metricgrids
