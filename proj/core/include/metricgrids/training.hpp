#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metricgrids/field_model.hpp"
#include "metricgrids/signals.hpp"

namespace metricgrids {

enum class LossKind : std::uint8_t { L2, Mape };

struct TrainConfig {
  long steps = 2000;
  std::size_t batch_size = 4096;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
  LossKind loss = LossKind::L2;
  double mape_eps = 0.01;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  bool baseline_mode = false;
  double grid_lr_scale = 1.0;
  double decoder_lr_scale = 1.0;
  int threads = 1;
  bool deterministic = false;
  long log_interval = 100;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean squared error and its gradient 2 (pred - target) / n.
LossResult loss_l2(std::span<const double> pred, std::span<const double> target);

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;
};

// |pred - target| / (|target| + eps); the gradient uses sign(0) = 0.
ScalarLoss loss_mape(double pred, double target, double eps);

double cosine_lr(long step, long steps, double lr_max, double lr_min);

template <class Real>
struct AdamState {
  std::vector<Real> first_moment;
  std::vector<Real> second_moment;
  long step_count = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : first_moment(n, Real(0)), second_moment(n, Real(0)) {}
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
  double weight_decay = 0.0;
};

// Dense bias-corrected Adam over every entry (no lazy skipping). Returns the
// largest |update| applied.
template <class Real>
double adam_step(std::span<Real> params, std::span<const Real> grads,
                 AdamState<Real>& state, double lr, const AdamHyper& hyper);

// Upper bound on |m_hat / (sqrt(v_hat) + eps)| after `step` updates for
// arbitrary gradients, valid when beta1^2 < beta2.
double adam_update_bound(long step, double beta1, double beta2);

struct LogRow {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<LogRow> rows;
  std::vector<double> losses;  // every step
  double wall_seconds = 0.0;
  double max_update_ratio = 0.0;  // max over steps of |dtheta| / (lr * bound)
};

using Sampler = std::function<SampleBatch(Rng&, std::size_t)>;

// The loop owns its own sampling stream seeded from cfg.seed.
template <class Real>
TrainResult train(FieldModel<Real>& model, const Sampler& sampler,
                  const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_log = {});

std::string format_log_csv(std::span<const LogRow> rows);
void write_log_csv(const std::filesystem::path& path, std::span<const LogRow> rows);

// Finite-difference audit of the full encode -> decode -> loss pipeline.
struct GradcheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;  // offset within the group
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  void record(std::size_t index, double analytic, double numeric, double rel);
};

struct GradcheckReport {
  std::string precision;  // "double" or "single"
  double threshold = 0.0;
  std::vector<GradcheckGroup> groups;

  const GradcheckGroup& worst() const;
  bool passed() const;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  // Scales the objective; 0 makes every upstream gradient vanish.
  double objective_scale = 1.0;
};

GradcheckReport gradcheck_double(const GradcheckOptions& opts);
GradcheckReport gradcheck_single(const GradcheckOptions& opts);

}  // namespace metricgrids
