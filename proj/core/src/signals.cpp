#include "metricgrids/signals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metricgrids/errors.hpp"

namespace metricgrids {

ImageField::ImageField(int w, int h, float fill)
    : width(w), height(h), data(std::size_t(w) * std::size_t(h) * 3, fill) {}

std::array<double, 2> pixel_coord(const ImageField& field, int i, int j) {
  return {(i + 0.5) / field.width, (j + 0.5) / field.height};
}

std::array<int, 2> nearest_pixel(const ImageField& field, double u, double v) {
  auto idx = [](double c, int n) {
    return std::clamp(static_cast<int>(std::floor(c * n)), 0, n - 1);
  };
  return {idx(u, field.width), idx(v, field.height)};
}

namespace {

void push_pixel(SampleBatch& b, const ImageField& f, std::size_t index) {
  const int i = static_cast<int>(index % std::size_t(f.width));
  const int j = static_cast<int>(index / std::size_t(f.width));
  const auto c = pixel_coord(f, i, j);
  b.coords.push_back(c[0]);
  b.coords.push_back(c[1]);
  for (int k = 0; k < 3; ++k) b.targets.push_back(f.at(i, j, k));
}

SampleBatch empty_image_batch(std::size_t n) {
  SampleBatch b;
  b.dims = 2;
  b.outputs = 3;
  b.coords.reserve(2 * n);
  b.targets.reserve(3 * n);
  return b;
}

}  // namespace

SampleBatch sample_image_batch(const ImageField& field, std::size_t n, Rng& rng) {
  if (n == 0) throw DomainError("sample_image_batch: n must be >= 1");
  if (field.pixel_count() == 0) throw DomainError("sample_image_batch: empty image");
  SampleBatch b = empty_image_batch(n);
  std::uniform_int_distribution<std::size_t> pick(0, field.pixel_count() - 1);
  for (std::size_t s = 0; s < n; ++s) push_pixel(b, field, pick(rng));
  return b;
}

ExhaustiveImageSampler::ExhaustiveImageSampler(const ImageField& field,
                                               std::uint64_t seed)
    : field_(&field), rng_(seed), order_(field.pixel_count()) {
  std::iota(order_.begin(), order_.end(), 0u);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

SampleBatch ExhaustiveImageSampler::next(std::size_t n) {
  SampleBatch b = empty_image_batch(n);
  for (std::size_t s = 0; s < n; ++s) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    push_pixel(b, *field_, order_[cursor_++]);
  }
  return b;
}

SampleBatch all_pixels(const ImageField& field) {
  SampleBatch b = empty_image_batch(field.pixel_count());
  for (std::size_t k = 0; k < field.pixel_count(); ++k) push_pixel(b, field, k);
  return b;
}

AnalyticSdf AnalyticSdf::sphere(Vec3 c, double r) {
  AnalyticSdf s;
  s.shape = SdfShape::Sphere;
  s.center = c;
  s.radius = r;
  return s;
}

AnalyticSdf AnalyticSdf::torus(Vec3 c, double major, double minor) {
  AnalyticSdf s;
  s.shape = SdfShape::Torus;
  s.center = c;
  s.major_radius = major;
  s.minor_radius = minor;
  return s;
}

AnalyticSdf AnalyticSdf::box(Vec3 c, Vec3 half) {
  AnalyticSdf s;
  s.shape = SdfShape::Box;
  s.center = c;
  s.half_extents = half;
  return s;
}

// Box (half extent 0.25) with a sphere of radius 0.3 carved out of it, joined
// with a thin torus (R = 0.35, r = 0.03). All centred at (0.5, 0.5, 0.5).
AnalyticSdf AnalyticSdf::csg() {
  AnalyticSdf s;
  s.shape = SdfShape::Csg;
  return s;
}

std::string AnalyticSdf::name() const {
  switch (shape) {
    case SdfShape::Sphere: return "sphere";
    case SdfShape::Torus: return "torus";
    case SdfShape::Box: return "box";
    case SdfShape::Csg: return "csg";
  }
  return "unknown";
}

AnalyticSdf AnalyticSdf::from_name(std::string_view name) {
  if (name == "sphere") return sphere();
  if (name == "torus") return torus();
  if (name == "box") return box();
  if (name == "csg") return csg();
  throw ConfigError("unknown sdf shape '" + std::string(name) + "'");
}

namespace {

constexpr Vec3 kCenter{0.5, 0.5, 0.5};
constexpr double kCsgBoxHalf = 0.25;
constexpr double kCsgSphereRadius = 0.3;
constexpr double kCsgTorusMajor = 0.35;
constexpr double kCsgTorusMinor = 0.03;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 neg(const Vec3& a) { return {-a[0], -a[1], -a[2]}; }

struct DistGrad {
  double d;
  Vec3 g;
};

DistGrad sphere_dg(const Vec3& p, const Vec3& c, double r) {
  const Vec3 q = sub(p, c);
  const double len = norm(q);
  if (len == 0.0) return {-r, {1.0, 0.0, 0.0}};
  return {len - r, scale(q, 1.0 / len)};
}

// Ring around the y axis.
DistGrad torus_dg(const Vec3& p, const Vec3& c, double major, double minor) {
  const Vec3 q = sub(p, c);
  const double radial = std::hypot(q[0], q[2]);
  // Direction from the axis in the xz plane; +x on the axis itself.
  const double ux = radial == 0.0 ? 1.0 : q[0] / radial;
  const double uz = radial == 0.0 ? 0.0 : q[2] / radial;
  const double a = radial - major;
  const double b = q[1];
  const double len = std::hypot(a, b);
  if (len == 0.0) return {-minor, {ux, 0.0, uz}};
  const double ga = a / len;
  const double gb = b / len;
  return {len - minor, {ga * ux, gb, ga * uz}};
}

DistGrad box_dg(const Vec3& p, const Vec3& c, const Vec3& half) {
  Vec3 q{};
  Vec3 sgn{};
  for (int j = 0; j < 3; ++j) {
    const double r = p[std::size_t(j)] - c[std::size_t(j)];
    sgn[std::size_t(j)] = r < 0.0 ? -1.0 : 1.0;
    q[std::size_t(j)] = std::abs(r) - half[std::size_t(j)];
  }
  const Vec3 outside{std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
  const double out_len = norm(outside);
  if (out_len > 0.0) {
    Vec3 g = scale(outside, 1.0 / out_len);
    for (int j = 0; j < 3; ++j) g[std::size_t(j)] *= sgn[std::size_t(j)];
    return {out_len, g};
  }
  // Inside: nearest face; ties resolve to the lowest axis.
  int axis = 0;
  for (int j = 1; j < 3; ++j) {
    if (q[std::size_t(j)] > q[std::size_t(axis)]) axis = j;
  }
  Vec3 g{0.0, 0.0, 0.0};
  g[std::size_t(axis)] = sgn[std::size_t(axis)];
  return {q[std::size_t(axis)], g};
}

DistGrad csg_dg(const Vec3& p) {
  const DistGrad bx = box_dg(p, kCenter, {kCsgBoxHalf, kCsgBoxHalf, kCsgBoxHalf});
  const DistGrad sp = sphere_dg(p, kCenter, kCsgSphereRadius);
  // box minus sphere: max(box, -sphere)
  const DistGrad carved = bx.d >= -sp.d ? bx : DistGrad{-sp.d, neg(sp.g)};
  const DistGrad ring = torus_dg(p, kCenter, kCsgTorusMajor, kCsgTorusMinor);
  return carved.d <= ring.d ? carved : ring;
}

DistGrad evaluate(const AnalyticSdf& s, const Vec3& p) {
  switch (s.shape) {
    case SdfShape::Sphere: return sphere_dg(p, s.center, s.radius);
    case SdfShape::Torus: return torus_dg(p, s.center, s.major_radius, s.minor_radius);
    case SdfShape::Box: return box_dg(p, s.center, s.half_extents);
    case SdfShape::Csg: return csg_dg(p);
  }
  return {0.0, {1.0, 0.0, 0.0}};
}

Vec3 clamp_unit(Vec3 p) {
  for (auto& v : p) v = std::clamp(v, 0.0, 1.0);
  return p;
}

}  // namespace

double sdf_eval(const AnalyticSdf& sdf, const Vec3& p) { return evaluate(sdf, p).d; }

Vec3 sdf_gradient(const AnalyticSdf& sdf, const Vec3& p) { return evaluate(sdf, p).g; }

Vec3 project_to_surface(const AnalyticSdf& sdf, Vec3 p, int iterations) {
  for (int it = 0; it < iterations; ++it) {
    const DistGrad dg = evaluate(sdf, p);
    for (int j = 0; j < 3; ++j) p[std::size_t(j)] -= dg.d * dg.g[std::size_t(j)];
  }
  return p;
}

SampleBatch sample_sdf_batch(const AnalyticSdf& sdf, std::size_t n, Rng& rng,
                             double near_fraction, double sigma_near) {
  if (!(near_fraction >= 0.0 && near_fraction <= 1.0)) {
    throw DomainError("sample_sdf_batch: near_fraction must be in [0,1]");
  }
  SampleBatch b;
  b.dims = 3;
  b.outputs = 1;
  b.coords.reserve(3 * n);
  b.targets.reserve(n);
  const auto near_count =
      static_cast<std::size_t>(std::llround(near_fraction * double(n)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma_near > 0.0 ? sigma_near : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p{unit(rng), unit(rng), unit(rng)};
    if (i >= n - near_count) {
      p = project_to_surface(sdf, p);
      if (sigma_near > 0.0) {
        for (auto& v : p) v += noise(rng);
      }
    }
    p = clamp_unit(p);
    b.coords.insert(b.coords.end(), p.begin(), p.end());
    b.targets.push_back(sdf_eval(sdf, p));
  }
  return b;
}

}  // namespace metricgrids
