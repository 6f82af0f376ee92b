#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "metricgrids/errors.hpp"
#include "metricgrids/signals.hpp"

namespace mg = metricgrids;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metricgrids_signals";
  fs::create_directories(dir);
  return dir / name;
}

mg::ImageField random_image(int w, int h, std::uint64_t seed) {
  mg::ImageField img(w, h);
  mg::Rng rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : img.data) v = u(rng);
  return img;
}

double norm(const mg::Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

TEST(Image, RoundTripWithinQuantization) {
  const auto img = random_image(37, 23, 1);
  for (const char* name : {"rt.png", "rt.ppm"}) {
    const auto path = scratch(name);
    mg::save_image(img, path);
    const auto back = mg::load_image(path);
    ASSERT_EQ(back.width, 37);
    ASSERT_EQ(back.height, 23);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      ASSERT_LE(std::fabs(back.data[i] - img.data[i]), 1.0 / 510 + 1e-7) << name;
  }
}

TEST(Image, SingleWhitePixel) {
  const auto path = scratch("white.png");
  mg::save_image(mg::ImageField(1, 1, 1.f), path);
  const auto img = mg::load_image(path);
  ASSERT_EQ(img.pixel_count(), 1u);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(0, 0, c), 1.f);
}

TEST(Image, FormatErrors) {
  const auto bad = scratch("bad.png");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTAPNGFILE";
  }
  try {
    mg::load_image(bad);
    FAIL() << "expected FormatError";
  } catch (const mg::FormatError& e) {
    EXPECT_EQ(e.position(), 0);
  }
  EXPECT_THROW(mg::load_image(fs::path(METRICGRIDS_TEST_DATA) / "gray16.png"), mg::FormatError);
  EXPECT_THROW(mg::load_image(fs::path(METRICGRIDS_TEST_DATA) / "rgba.png"), mg::FormatError);
  EXPECT_THROW(mg::load_image(scratch("does_not_exist.png")), mg::IoError);

  const auto ppm = scratch("trunc.ppm");
  {
    std::ofstream out(ppm, std::ios::binary);
    out << "P6\n4 4\n255\n" << std::string(10, 'x');
  }
  EXPECT_THROW(mg::load_image(ppm), mg::FormatError);
  const auto deep = scratch("deep.ppm");
  {
    std::ofstream out(deep, std::ios::binary);
    out << "P6\n1 1\n65535\n" << std::string(6, 'x');
  }
  EXPECT_THROW(mg::load_image(deep), mg::FormatError);
}

TEST(Image, SaveRoundsHalfAwayFromZero) {
  mg::ImageField img(1, 1);
  img.at(0, 0, 0) = 0.5f / 255.f;        // 0.5 -> 1
  img.at(0, 0, 1) = 1.49f / 255.f;       // 1.49 -> 1
  img.at(0, 0, 2) = 254.5f / 255.f;      // 254.5 -> 255
  const auto path = scratch("round.ppm");
  mg::save_image(img, path);
  const auto back = mg::load_image(path);
  EXPECT_EQ(back.at(0, 0, 0), 1.f / 255.f);
  EXPECT_EQ(back.at(0, 0, 1), 1.f / 255.f);
  EXPECT_EQ(back.at(0, 0, 2), 1.f);
}

TEST(Sampling, SinglePixelImage) {
  mg::ImageField img(1, 1, 0.25f);
  mg::Rng rng(1);
  const auto b = mg::sample_image_batch(img, 16, rng);
  ASSERT_EQ(b.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(b.coords[2 * i], 0.5);
    EXPECT_EQ(b.coords[2 * i + 1], 0.5);
    EXPECT_FLOAT_EQ(float(b.targets[3 * i]), 0.25f);
  }
}

TEST(Sampling, ExhaustiveVisitsEveryPixelOnce) {
  const auto img = random_image(13, 7, 2);
  mg::ExhaustiveImageSampler sampler(img, 5);
  const auto b = sampler.next(img.pixel_count());
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto p = mg::nearest_pixel(img, b.coords[2 * i], b.coords[2 * i + 1]);
    seen.insert({p[0], p[1]});
    for (int c = 0; c < 3; ++c) EXPECT_EQ(float(b.targets[3 * i + std::size_t(c)]), img.at(p[0], p[1], c));
  }
  EXPECT_EQ(seen.size(), img.pixel_count());
}

TEST(Sampling, SeededBatchesRepeat) {
  const auto img = random_image(9, 9, 3);
  mg::Rng a(42), b(42);
  const auto x = mg::sample_image_batch(img, 100, a);
  const auto y = mg::sample_image_batch(img, 100, b);
  EXPECT_EQ(x.coords, y.coords);
  EXPECT_EQ(x.targets, y.targets);
  mg::Rng c(42), d(42);
  const auto s = mg::sample_sdf_batch(mg::AnalyticSdf::torus(), 100, c);
  const auto t = mg::sample_sdf_batch(mg::AnalyticSdf::torus(), 100, d);
  EXPECT_EQ(s.coords, t.coords);
  EXPECT_EQ(s.targets, t.targets);
}

TEST(Sampling, PixelCoordinateRoundTrip) {
  mg::ImageField img(31, 17);
  for (int j = 0; j < img.height; ++j) {
    for (int i = 0; i < img.width; ++i) {
      const auto c = mg::pixel_coord(img, i, j);
      EXPECT_DOUBLE_EQ(c[0], (i + 0.5) / 31.0);
      const auto p = mg::nearest_pixel(img, c[0], c[1]);
      EXPECT_EQ(p[0], i);
      EXPECT_EQ(p[1], j);
    }
  }
}

TEST(Sdf, Examples) {
  const auto sphere = mg::AnalyticSdf::sphere({0.5, 0.5, 0.5}, 0.3);
  EXPECT_NEAR(mg::sdf_eval(sphere, {0.5, 0.5, 0.5}), -0.3, 1e-15);
  EXPECT_NEAR(mg::sdf_eval(sphere, {0.9, 0.5, 0.5}), 0.1, 1e-15);
  const auto g = mg::sdf_gradient(sphere, {0.9, 0.5, 0.5});
  EXPECT_NEAR(g[0], 1.0, 1e-15);
  EXPECT_NEAR(g[1], 0.0, 1e-15);
  EXPECT_NEAR(g[2], 0.0, 1e-15);

  const auto box = mg::AnalyticSdf::box({0.5, 0.5, 0.5}, {0.1, 0.1, 0.1});
  EXPECT_NEAR(mg::sdf_eval(box, {0.7, 0.7, 0.7}), std::sqrt(0.03), 1e-15);
  EXPECT_NEAR(mg::sdf_eval(box, {0.5, 0.5, 0.5}), -0.1, 1e-15);

  const auto torus = mg::AnalyticSdf::torus({0.5, 0.5, 0.5}, 0.25, 0.1);
  EXPECT_NEAR(mg::sdf_eval(torus, {0.75, 0.5, 0.5}), -0.1, 1e-15);
  EXPECT_NEAR(mg::sdf_eval(torus, {0.5, 0.5, 0.5}), 0.15, 1e-15);
}

TEST(Sdf, EikonalAtRandomPoints) {
  mg::Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const char* name : {"sphere", "torus", "box", "csg"}) {
    const auto sdf = mg::AnalyticSdf::from_name(name);
    for (int i = 0; i < 10000; ++i) {
      const mg::Vec3 p{u(rng), u(rng), u(rng)};
      ASSERT_NEAR(norm(mg::sdf_gradient(sdf, p)), 1.0, 1e-9) << name;
    }
  }
}

TEST(Sdf, GradientMatchesFiniteDifferenceAwayFromKinks) {
  mg::Rng rng(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (const char* name : {"sphere", "torus"}) {
    const auto sdf = mg::AnalyticSdf::from_name(name);
    for (int i = 0; i < 200; ++i) {
      const mg::Vec3 p{u(rng), u(rng), u(rng)};
      const auto g = mg::sdf_gradient(sdf, p);
      for (int j = 0; j < 3; ++j) {
        auto a = p, b = p;
        a[std::size_t(j)] += 1e-6;
        b[std::size_t(j)] -= 1e-6;
        EXPECT_NEAR((mg::sdf_eval(sdf, a) - mg::sdf_eval(sdf, b)) / 2e-6, g[std::size_t(j)], 1e-6);
      }
    }
  }
}

TEST(Sdf, SignClassification) {
  const auto sphere = mg::AnalyticSdf::sphere();
  EXPECT_LT(mg::sdf_eval(sphere, {0.6, 0.5, 0.5}), 0.0);
  EXPECT_GT(mg::sdf_eval(sphere, {0.95, 0.95, 0.95}), 0.0);
  const auto torus = mg::AnalyticSdf::torus();
  EXPECT_LT(mg::sdf_eval(torus, {0.5, 0.5, 0.75}), 0.0);
  EXPECT_GT(mg::sdf_eval(torus, {0.5, 0.9, 0.5}), 0.0);
  const auto box = mg::AnalyticSdf::box();
  EXPECT_LT(mg::sdf_eval(box, {0.6, 0.4, 0.65}), 0.0);
  EXPECT_GT(mg::sdf_eval(box, {0.8, 0.5, 0.5}), 0.0);
  const auto csg = mg::AnalyticSdf::csg();
  EXPECT_GT(mg::sdf_eval(csg, {0.5, 0.5, 0.5}), 0.0);   // carved core
  EXPECT_LT(mg::sdf_eval(csg, {0.74, 0.74, 0.74}), 0.0); // box corner survives
  EXPECT_LT(mg::sdf_eval(csg, {0.85, 0.5, 0.5}), 0.0);   // on the ring
}

TEST(Sdf, NamesRoundTrip) {
  for (const char* name : {"sphere", "torus", "box", "csg"})
    EXPECT_EQ(mg::AnalyticSdf::from_name(name).name(), name);
  EXPECT_THROW(mg::AnalyticSdf::from_name("teapot"), mg::ConfigError);
}

TEST(Sdf, ProjectionReachesSphereSurface) {
  const auto sphere = mg::AnalyticSdf::sphere();
  mg::Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = mg::project_to_surface(sphere, {u(rng), u(rng), u(rng)});
    ASSERT_LT(std::fabs(mg::sdf_eval(sphere, p)), 1e-6);
  }
}

TEST(Sdf, BatchTargetsAndDomain) {
  const auto torus = mg::AnalyticSdf::torus();
  mg::Rng rng(10);
  const auto b = mg::sample_sdf_batch(torus, 2000, rng, 0.5, 0.01);
  ASSERT_EQ(b.size(), 2000u);
  std::size_t near = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const mg::Vec3 p{b.coords[3 * i], b.coords[3 * i + 1], b.coords[3 * i + 2]};
    for (double v : p) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    ASSERT_EQ(b.targets[i], mg::sdf_eval(torus, p));
    if (std::fabs(b.targets[i]) < 0.05) ++near;
  }
  EXPECT_GE(near, 1000u);

  mg::Rng rng2(10);
  const auto uniform = mg::sample_sdf_batch(torus, 2000, rng2, 0.0, 0.01);
  std::size_t close = 0;
  for (double t : uniform.targets) close += std::fabs(t) < 0.005 ? 1 : 0;
  // Uniform points land in the 0.005 shell at roughly its volume fraction.
  EXPECT_LT(close, 200u);
  EXPECT_THROW(mg::sample_sdf_batch(torus, 10, rng2, 1.5, 0.01), mg::DomainError);
}
