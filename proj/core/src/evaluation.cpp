#include "metricgrids/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "metricgrids/errors.hpp"

namespace metricgrids {

namespace {

void require_same_size(const ImageField& a, const ImageField& b, const char* op) {
  if (a.width != b.width || a.height != b.height || a.data.size() != b.data.size()) {
    throw ShapeError(std::string(op) + ": image dimensions differ (" +
                     std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height) + ")");
  }
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    w[std::size_t(i)] = std::exp(-(x * x) / (2.0 * kSigma * kSigma));
    sum += w[std::size_t(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h,
                                 const std::array<double, kWindow>& k) {
  const int ow = w - kWindow + 1;
  const int oh = h - kWindow + 1;
  std::vector<double> rows(std::size_t(ow) * std::size_t(h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i)
        s += k[std::size_t(i)] * src[std::size_t(y) * std::size_t(w) + std::size_t(x + i)];
      rows[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = s;
    }
  std::vector<double> out(std::size_t(ow) * std::size_t(oh));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i)
        s += k[std::size_t(i)] * rows[std::size_t(y + i) * std::size_t(ow) + std::size_t(x)];
      out[std::size_t(y) * std::size_t(ow) + std::size_t(x)] = s;
    }
  return out;
}

}  // namespace

double psnr(const ImageField& pred, const ImageField& ref) {
  require_same_size(pred, ref, "psnr");
  if (pred.data.empty()) throw DomainError("psnr: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double e = double(pred.data[i]) - double(ref.data[i]);
    sum += e * e;
  }
  const double mse = sum / double(pred.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim(const ImageField& pred, const ImageField& ref) {
  require_same_size(pred, ref, "ssim");
  if (pred.width < kWindow || pred.height < kWindow) {
    throw DomainError("ssim: image smaller than the 11x11 window");
  }
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto k = gaussian_window();
  const int w = pred.width;
  const int h = pred.height;
  const std::size_t n = pred.pixel_count();
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = pred.data[i * 3 + std::size_t(c)];
      b[i] = ref.data[i * 3 + std::size_t(c)];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, w, h, k);
    const auto mu_b = filter_valid(b, w, h, k);
    const auto s_aa = filter_valid(aa, w, h, k);
    const auto s_bb = filter_valid(bb, w, h, k);
    const auto s_ab = filter_valid(ab, w, h, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = s_aa[i] - mu_a[i] * mu_a[i];
      const double vb = s_bb[i] - mu_b[i] * mu_b[i];
      const double cov = s_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      sum += num / den;
    }
    total += sum / double(mu_a.size());
  }
  return total / 3.0;
}

template <class Real>
ImageField render_image(const FieldModel<Real>& model, int width, int height) {
  if (width < 1 || height < 1) throw DomainError("render_image: empty raster");
  if (model.input_dims() != 2 || model.outputs() != 3) {
    throw ShapeError("render_image: model is not a 2D RGB field");
  }
  ImageField img(width, height);
  const std::size_t n = img.pixel_count();
  std::vector<Real> coords(n * 2);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = std::size_t(y) * std::size_t(width) + std::size_t(x);
      coords[2 * i] = Real((double(x) + 0.5) / double(width));
      coords[2 * i + 1] = Real((double(y) + 0.5) / double(height));
    }
  std::vector<Real> out(n * 3);
  model.evaluate(coords, n, out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    img.data[i] = float(std::clamp(double(out[i]), 0.0, 1.0));
  }
  return img;
}

template <class Real>
ScalarField as_scalar_field(const FieldModel<Real>& model) {
  if (model.input_dims() != 3 || model.outputs() != 1) {
    throw ShapeError("as_scalar_field: model is not a 3D scalar field");
  }
  return [&model](std::span<const double> xyz, std::span<double> out) {
    std::vector<Real> c(xyz.begin(), xyz.end());
    std::vector<Real> v(out.size());
    model.evaluate(c, out.size(), v);
    std::copy(v.begin(), v.end(), out.begin());
  };
}

template ImageField render_image<float>(const FieldModel<float>&, int, int);
template ImageField render_image<double>(const FieldModel<double>&, int, int);
template ScalarField as_scalar_field<float>(const FieldModel<float>&);
template ScalarField as_scalar_field<double>(const FieldModel<double>&);

double normal_fd_step(const GridStructure& grid) {
  return 0.5 / double(std::max(grid.max_res - 1, 1));
}

double iou_occupancy(const ScalarField& predicted, const AnalyticSdf& sdf,
                     int resolution) {
  if (resolution < 8) throw DomainError("iou_occupancy: resolution must be >= 8");
  const auto r = std::size_t(resolution);
  std::vector<double> xyz(r * r * 3);
  std::vector<double> values(r * r);
  std::size_t inter = 0;
  std::size_t uni = 0;
  // One z slab at a time keeps memory at O(resolution^2).
  for (std::size_t z = 0; z < r; ++z) {
    std::size_t k = 0;
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        xyz[k++] = (double(x) + 0.5) / double(r);
        xyz[k++] = (double(y) + 0.5) / double(r);
        xyz[k++] = (double(z) + 0.5) / double(r);
      }
    predicted(xyz, values);
    for (std::size_t i = 0; i < r * r; ++i) {
      const bool a = values[i] <= 0.0;
      const bool b = sdf_eval(sdf, {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]}) <= 0.0;
      inter += (a && b) ? 1 : 0;
      uni += (a || b) ? 1 : 0;
    }
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

double mean_angle_degrees(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() % 3 != 0 || a.empty()) {
    throw ShapeError("mean_angle_degrees: expected matching n x 3 arrays");
  }
  double sum = 0.0;
  const std::size_t n = a.size() / 3;
  for (std::size_t i = 0; i < n; ++i) {
    const double dot =
        a[3 * i] * b[3 * i] + a[3 * i + 1] * b[3 * i + 1] + a[3 * i + 2] * b[3 * i + 2];
    sum += std::acos(std::clamp(dot, -1.0, 1.0));
  }
  return sum / double(n) * 180.0 / std::numbers::pi;
}

NaeResult normal_angular_error(const ScalarField& predicted, const AnalyticSdf& sdf,
                               std::size_t n_points, Rng& rng, double fd_step) {
  if (n_points < 1) throw DomainError("normal_angular_error: need n_points >= 1");
  if (!(fd_step > 0.0)) throw DomainError("normal_angular_error: fd_step must be > 0");
  const SampleBatch surface = sample_sdf_batch(sdf, n_points, rng, 1.0, 0.0);
  const std::size_t n = surface.size();

  // Six probes per point, evaluated in one batch.
  std::vector<double> probes(n * 6 * 3);
  for (std::size_t i = 0; i < n; ++i)
    for (int axis = 0; axis < 3; ++axis)
      for (int side = 0; side < 2; ++side) {
        double* q = probes.data() + ((i * 3 + std::size_t(axis)) * 2 + std::size_t(side)) * 3;
        for (int j = 0; j < 3; ++j) q[j] = surface.coords[i * 3 + std::size_t(j)];
        q[axis] += side == 0 ? fd_step : -fd_step;
      }
  std::vector<double> values(n * 6);
  predicted(probes, values);

  std::vector<double> pred_normals;
  std::vector<double> true_normals;
  NaeResult result;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 g{};
    for (int axis = 0; axis < 3; ++axis) {
      const double plus = values[(i * 3 + std::size_t(axis)) * 2];
      const double minus = values[(i * 3 + std::size_t(axis)) * 2 + 1];
      g[std::size_t(axis)] = (plus - minus) / (2.0 * fd_step);
    }
    const double len = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
    if (!(len > 0.0) || !std::isfinite(len)) {
      ++result.excluded;
      continue;
    }
    const Vec3 t = sdf_gradient(sdf, {surface.coords[3 * i], surface.coords[3 * i + 1],
                                      surface.coords[3 * i + 2]});
    for (int j = 0; j < 3; ++j) {
      pred_normals.push_back(g[std::size_t(j)] / len);
      true_normals.push_back(t[std::size_t(j)]);
    }
  }
  result.evaluated = pred_normals.size() / 3;
  result.warning = double(result.excluded) > 0.01 * double(n);
  result.degrees = result.evaluated == 0
                       ? std::numeric_limits<double>::quiet_NaN()
                       : mean_angle_degrees(pred_normals, true_normals);
  return result;
}

void error_map(const ImageField& pred, const ImageField& ref,
               const std::filesystem::path& path) {
  require_same_size(pred, ref, "error_map");
  std::vector<float> err(pred.pixel_count());
  double peak = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double e = double(pred.data[i * 3 + c]) - double(ref.data[i * 3 + c]);
      s += e * e;
    }
    err[i] = float(s);
    peak = std::max(peak, s);
  }
  if (peak > 0.0) {
    for (auto& e : err) e = float(double(e) / peak);
  }
  save_gray_png(pred.width, pred.height, err, path);
}

namespace {

std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s.precision(10);
  s << *v;
  return s.str();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  auto put = [&](const char* key, std::optional<double> v) {
    if (!v) {
      j[key] = nullptr;
    } else if (std::isinf(*v)) {
      j[key] = *v > 0 ? "inf" : "-inf";
    } else {
      j[key] = *v;
    }
  };
  put("psnr", psnr);
  put("ssim", ssim);
  put("iou", iou);
  put("nae", nae);
  if (params_count) {
    j["params_count"] = *params_count;
  } else {
    j["params_count"] = nullptr;
  }
  put("wall_time", wall_time);
  return j.dump();
}

std::string MetricsReport::csv_header() {
  return "task,psnr,ssim,iou,nae,params_count,wall_time";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream s;
  s << task << ',' << csv_number(psnr) << ',' << csv_number(ssim) << ','
    << csv_number(iou) << ',' << csv_number(nae) << ','
    << (params_count ? std::to_string(*params_count) : std::string()) << ','
    << csv_number(wall_time);
  return s.str();
}

void MetricsReport::append_csv(const std::filesystem::path& path) const {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) ||
                     std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to '" + path.string() + "'");
  if (fresh) out << csv_header() << '\n';
  out << csv_row() << '\n';
}

}  // namespace metricgrids
