#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "metricgrids/errors.hpp"
#include "metricgrids/training.hpp"

namespace mg = metricgrids;

namespace {

mg::FieldModel<float> small_image_model(std::uint64_t seed) {
  mg::GridStructure g;
  g.dims = 2;
  g.metrics = {mg::MetricKind::linear(), mg::MetricKind::sin_warp(),
               mg::MetricKind::arcsin_warp()};
  g.levels = 4;
  g.base_res = 4;
  g.max_res = 32;
  g.log2_table = 10;
  mg::DecoderShape d;
  d.hidden = 16;
  d.layers = 3;
  d.outputs = 3;
  mg::FieldModel<float> model(g, d);
  model.init(seed);
  return model;
}

mg::TrainConfig quick_config(long steps) {
  mg::TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 512;
  cfg.log_interval = 10;
  cfg.deterministic = true;
  cfg.seed = 3;
  return cfg;
}

mg::Sampler image_sampler(const mg::ImageField& img) {
  return [&img](mg::Rng& rng, std::size_t n) { return mg::sample_image_batch(img, n, rng); };
}

}  // namespace

TEST(Loss, L2Examples) {
  const std::vector<double> a{0.3, 0.7};
  auto r = mg::loss_l2(a, a);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad) EXPECT_EQ(g, 0.0);

  r = mg::loss_l2(std::vector<double>{1.0}, std::vector<double>{0.0});
  EXPECT_EQ(r.loss, 1.0);
  EXPECT_EQ(r.grad[0], 2.0);

  r = mg::loss_l2(std::vector<double>{0.5, 0.5}, std::vector<double>{0.0, 1.0});
  EXPECT_DOUBLE_EQ(r.loss, 0.25);
  EXPECT_DOUBLE_EQ(r.grad[0], 0.5);
  EXPECT_DOUBLE_EQ(r.grad[1], -0.5);

  EXPECT_THROW(mg::loss_l2(std::vector<double>{}, std::vector<double>{}), mg::DomainError);
  EXPECT_THROW(mg::loss_l2(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
               mg::ShapeError);
}

TEST(Loss, MapeExamples) {
  auto r = mg::loss_mape(0.0, 0.0, 0.01);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad, 0.0);
  r = mg::loss_mape(0.1, 0.0, 0.01);
  EXPECT_NEAR(r.loss, 10.0, 1e-12);
  EXPECT_NEAR(r.grad, 100.0, 1e-12);
  r = mg::loss_mape(0.0, 0.5, 0.01);
  EXPECT_NEAR(r.loss, 0.5 / 0.51, 1e-15);
  EXPECT_NEAR(r.grad, -1.0 / 0.51, 1e-15);
  EXPECT_THROW(mg::loss_mape(0.0, 0.0, 0.0), mg::DomainError);
}

TEST(CosineLr, EndpointsAndMidpoint) {
  EXPECT_NEAR(mg::cosine_lr(0, 1000, 1e-2, 1e-4), 1e-2, 1e-12);
  EXPECT_NEAR(mg::cosine_lr(1000, 1000, 1e-2, 1e-4), 1e-4, 1e-12);
  EXPECT_NEAR(mg::cosine_lr(500, 1000, 1e-2, 1e-4), (1e-2 + 1e-4) / 2, 1e-12);
  double prev = 1.0;
  for (long s = 0; s <= 1000; s += 50) {
    const double lr = mg::cosine_lr(s, 1000, 1e-2, 1e-4);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{0.25, -1.5, 3.0};
  const std::vector<double> g(3, 0.0);
  mg::AdamState<double> s(3);
  mg::adam_step<double>(p, g, s, 0.01, {});
  EXPECT_EQ(p, (std::vector<double>{0.25, -1.5, 3.0}));
  EXPECT_EQ(s.step_count, 1);
}

TEST(Adam, ConstantGradientOracle) {
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  mg::AdamState<double> s(1);
  mg::adam_step<double>(p, g, s, 0.01, {0.9, 0.99, 1e-15, 0.0});
  EXPECT_DOUBLE_EQ(p[0], -0.00999999999999999);
  mg::adam_step<double>(p, g, s, 0.01, {0.9, 0.99, 1e-15, 0.0});
  EXPECT_DOUBLE_EQ(p[0], -0.019999999999999983);
}

TEST(Adam, ShapeMismatch) {
  std::vector<float> p(3, 0.f);
  const std::vector<float> g(2, 0.f);
  mg::AdamState<float> s(3);
  EXPECT_THROW(mg::adam_step<float>(p, g, s, 0.01, {}), mg::ShapeError);
}

TEST(Adam, UpdateBoundHoldsForAdversarialGradients) {
  std::vector<double> p{0.0};
  mg::AdamState<double> s(1);
  // A single spike after silence is the worst case for m_hat / sqrt(v_hat).
  for (long step = 1; step <= 50; ++step) {
    const std::vector<double> g{step == 1 ? 1.0 : (step % 7 == 0 ? -5.0 : 1e-6)};
    const double du = mg::adam_step<double>(p, g, s, 1.0, {});
    EXPECT_LE(du, mg::adam_update_bound(step, 0.9, 0.99) * (1 + 1e-12)) << step;
  }
  EXPECT_NEAR(mg::adam_update_bound(1, 0.9, 0.99), 1.0, 1e-12);
}

TEST(Train, ZeroStepsLeavesModelUnchanged) {
  auto model = small_image_model(1);
  const auto before = model;
  mg::ImageField img(8, 8, 0.5f);
  const auto r = mg::train(model, image_sampler(img), quick_config(0));
  EXPECT_TRUE(r.rows.empty());
  EXPECT_TRUE(std::equal(model.grids.params().begin(), model.grids.params().end(),
                         before.grids.params().begin()));
  EXPECT_TRUE(std::equal(model.decoder.data().begin(), model.decoder.data().end(),
                         before.decoder.data().begin()));
}

TEST(Train, ConstantImageConverges) {
  auto model = small_image_model(2);
  mg::ImageField img(64, 64, 0.5f);
  const auto r = mg::train(model, image_sampler(img), quick_config(200));
  ASSERT_EQ(r.losses.size(), 200u);
  EXPECT_LT(r.losses.back(), 1e-4);
  EXPECT_LT(r.losses[199], r.losses[19]);
  EXPECT_LT(r.losses[19], r.losses[1]);
  EXPECT_LE(r.max_update_ratio, 1.0 + 1e-5);
  ASSERT_EQ(r.rows.size(), 20u);
  EXPECT_EQ(r.rows.back().step, 200);
  EXPECT_NEAR(r.rows.front().lr, mg::cosine_lr(9, 200, 1e-2, 1e-4), 1e-15);
}

TEST(Train, DeterministicAcrossRuns) {
  mg::ImageField img(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = float((x * 7 + y * 3 + c) % 16) / 15.f;
  auto a = small_image_model(5);
  auto b = small_image_model(5);
  const auto ra = mg::train(a, image_sampler(img), quick_config(30));
  const auto rb = mg::train(b, image_sampler(img), quick_config(30));
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_TRUE(std::equal(a.grids.params().begin(), a.grids.params().end(),
                         b.grids.params().begin()));
  EXPECT_TRUE(std::equal(a.decoder.data().begin(), a.decoder.data().end(),
                         b.decoder.data().begin()));
}

TEST(Train, ShardedMatchesSingleThreadClosely) {
  mg::ImageField img(16, 16, 0.25f);
  auto a = small_image_model(6);
  auto b = small_image_model(6);
  auto cfg = quick_config(5);
  const auto ra = mg::train(a, image_sampler(img), cfg);
  cfg.deterministic = false;
  cfg.threads = 3;
  const auto rb = mg::train(b, image_sampler(img), cfg);
  for (std::size_t i = 0; i < ra.losses.size(); ++i)
    EXPECT_NEAR(ra.losses[i], rb.losses[i], 1e-5 * std::max(1.0, ra.losses[i]));
}

TEST(Train, NonFiniteLossNamesStep) {
  auto model = small_image_model(1);
  long calls = 0;
  const mg::Sampler bad = [&calls](mg::Rng& rng, std::size_t n) {
    mg::ImageField img(4, 4, 0.5f);
    auto batch = mg::sample_image_batch(img, n, rng);
    if (++calls == 3) batch.targets[0] = std::numeric_limits<double>::quiet_NaN();
    return batch;
  };
  try {
    mg::train(model, bad, quick_config(10));
    FAIL() << "expected DivergenceError";
  } catch (const mg::DivergenceError& e) {
    EXPECT_EQ(e.step(), 3);
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos);
  }
}

TEST(Train, SamplerShapeMismatch) {
  auto model = small_image_model(1);
  const mg::Sampler wrong = [](mg::Rng& rng, std::size_t n) {
    return mg::sample_sdf_batch(mg::AnalyticSdf::sphere(), n, rng);
  };
  EXPECT_THROW(mg::train(model, wrong, quick_config(1)), mg::ShapeError);
}

TEST(TrainConfig, Validation) {
  mg::TrainConfig cfg;
  cfg.validate();
  cfg.lr_min = 2 * cfg.lr_max;
  EXPECT_THROW(cfg.validate(), mg::ConfigError);
  cfg = {};
  cfg.beta2 = 1.0;
  EXPECT_THROW(cfg.validate(), mg::ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), mg::ConfigError);
}

TEST(LogCsv, Format) {
  const std::vector<mg::LogRow> rows{{100, 0.01, 0.5, 12.5}, {200, 0.001, 0.25, 30.0}};
  EXPECT_EQ(mg::format_log_csv(rows),
            "step,lr,loss,wall_ms\n100,0.01,0.5,12.500000\n200,0.001,0.25,30.000000\n");
}

TEST(Gradcheck, PassesOnSeveralSeeds) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto d = mg::gradcheck_double({seed, 1.0});
    EXPECT_TRUE(d.passed()) << "double seed " << seed << ": " << d.worst().name << " "
                            << d.worst().max_rel_error;
    EXPECT_EQ(d.threshold, 1e-6);
    const auto s = mg::gradcheck_single({seed, 1.0});
    EXPECT_TRUE(s.passed()) << "single seed " << seed << ": " << s.worst().name << " "
                            << s.worst().max_rel_error;
    EXPECT_EQ(s.threshold, 1e-3);
    for (const auto& g : d.groups) EXPECT_GT(g.checked, 0u) << g.name;
  }
}

TEST(Gradcheck, ZeroUpstreamGivesZeroGradients) {
  const auto d = mg::gradcheck_double({4, 0.0});
  EXPECT_TRUE(d.passed());
  for (const auto& g : d.groups) {
    EXPECT_EQ(g.max_rel_error, 0.0) << g.name;
    EXPECT_EQ(g.worst_analytic, 0.0) << g.name;
  }
}
