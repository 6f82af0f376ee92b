#include "metricgrids/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "metricgrids/errors.hpp"

namespace metricgrids {

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_min > 0.0 && lr_min <= lr_max)) {
    throw ConfigError("need 0 < lr_min <= lr_max");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in (0,1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(mape_eps > 0.0)) throw ConfigError("mape_eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (grid_lr_scale <= 0.0 || decoder_lr_scale <= 0.0) {
    throw ConfigError("learning-rate multipliers must be positive");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
}

LossResult loss_l2(std::span<const double> pred, std::span<const double> target) {
  if (pred.empty()) throw DomainError("loss_l2: empty input");
  if (pred.size() != target.size()) throw ShapeError("loss_l2: length mismatch");
  const double n = double(pred.size());
  LossResult r;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    r.loss += e * e;
    r.grad[i] = 2.0 * e / n;
  }
  r.loss /= n;
  return r;
}

ScalarLoss loss_mape(double pred, double target, double eps) {
  if (!(eps > 0.0)) throw DomainError("loss_mape: eps must be positive");
  const double denom = std::abs(target) + eps;
  const double e = pred - target;
  const double sign = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
  return {std::abs(e) / denom, sign / denom};
}

double cosine_lr(long step, long steps, double lr_max, double lr_min) {
  if (steps <= 0) return lr_max;
  const double frac = double(std::clamp(step, 0L, steps)) / double(steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <class Real>
double adam_step(std::span<Real> params, std::span<const Real> grads,
                 AdamState<Real>& state, double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and state sizes differ");
  }
  ++state.step_count;
  const double t = double(state.step_count);
  const Real b1 = Real(hyper.beta1);
  const Real b2 = Real(hyper.beta2);
  const Real c1 = Real(1.0 / (1.0 - std::pow(hyper.beta1, t)));
  const Real c2 = Real(1.0 / (1.0 - std::pow(hyper.beta2, t)));
  const Real eps = Real(hyper.eps);
  const Real rate = Real(lr);
  const Real decay = Real(hyper.weight_decay);
  Real* m = state.first_moment.data();
  Real* v = state.second_moment.data();
  Real max_update = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grads[i] + decay * params[i];
    m[i] = b1 * m[i] + (Real(1) - b1) * g;
    v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
    const Real m_hat = m[i] * c1;
    const Real v_hat = v[i] * c2;
    const Real update = rate * m_hat / (std::sqrt(v_hat) + eps);
    params[i] -= update;
    max_update = std::max(max_update, std::abs(update));
  }
  return double(max_update);
}

double adam_update_bound(long step, double beta1, double beta2) {
  if (step < 1) return 0.0;
  const double r = beta1 * beta1 / beta2;
  double series = 0.0;
  double term = 1.0;
  for (long k = 0; k < step; ++k) {
    series += term;
    term *= r;
  }
  const double t = double(step);
  return (1.0 - beta1) / std::sqrt(1.0 - beta2) * std::sqrt(series) *
         std::sqrt(1.0 - std::pow(beta2, t)) / (1.0 - std::pow(beta1, t));
}

namespace {

template <class Real>
struct Shard {
  using Matrix = typename FieldModel<Real>::Matrix;
  FieldWorkspace<Real> ws;
  std::vector<Real> coords;
  Matrix upstream;
  std::vector<Real> grid_grad;
  std::vector<Real> decoder_grad;
  double loss_sum = 0.0;
};

template <class Real>
void run_shard(const FieldModel<Real>& model, const SampleBatch& batch,
               std::size_t begin, std::size_t count, double normaliser,
               const TrainConfig& cfg, Shard<Real>& shard) {
  const auto d = static_cast<std::size_t>(batch.dims);
  const auto k = static_cast<std::size_t>(batch.outputs);
  shard.coords.resize(count * d);
  for (std::size_t i = 0; i < count * d; ++i) {
    shard.coords[i] = static_cast<Real>(batch.coords[begin * d + i]);
  }
  std::fill(shard.grid_grad.begin(), shard.grid_grad.end(), Real(0));
  std::fill(shard.decoder_grad.begin(), shard.decoder_grad.end(), Real(0));
  shard.loss_sum = 0.0;
  if (count == 0) return;

  field_forward(model, shard.coords, count, shard.ws);
  shard.upstream.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(count));
  const Real* pred = shard.ws.output.data();
  Real* up = shard.upstream.data();
  const double* target = batch.targets.data() + begin * k;
  for (std::size_t i = 0; i < count * k; ++i) {
    const double p = double(pred[i]);
    if (cfg.loss == LossKind::L2) {
      const double e = p - target[i];
      shard.loss_sum += e * e;
      up[i] = Real(2.0 * e / normaliser);
    } else {
      const ScalarLoss l = loss_mape(p, target[i], cfg.mape_eps);
      shard.loss_sum += l.loss;
      up[i] = Real(l.grad / normaliser);
    }
  }
  field_backward(model, shard.ws, shard.upstream, shard.grid_grad,
                 shard.decoder_grad);
}

}  // namespace

template <class Real>
TrainResult train(FieldModel<Real>& model, const Sampler& sampler,
                  const TrainConfig& cfg,
                  const std::function<void(const LogRow&)>& on_log) {
  cfg.validate();
  TrainResult result;
  if (cfg.steps == 0) return result;

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start)
        .count();
  };

  Rng rng(cfg.seed);
  AdamState<Real> grid_state(model.grids.params().size());
  AdamState<Real> decoder_state(model.decoder.size());
  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};

  const int shard_count = cfg.deterministic ? 1 : cfg.threads;
  std::vector<Shard<Real>> shards(static_cast<std::size_t>(shard_count));
  for (auto& s : shards) {
    s.grid_grad.assign(model.grids.params().size(), Real(0));
    s.decoder_grad.assign(model.decoder.size(), Real(0));
  }

  for (long step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min);
    const SampleBatch batch = sampler(rng, cfg.batch_size);
    if (batch.dims != model.input_dims() || batch.outputs != model.outputs()) {
      throw ShapeError("sampler produced batches that do not match the model");
    }
    const std::size_t n = batch.size();
    if (n == 0) throw ShapeError("sampler produced an empty batch");
    const double normaliser =
        cfg.loss == LossKind::L2 ? double(n) * double(batch.outputs) : double(n);

    // Contiguous shards; reduction below runs in shard order.
    const std::size_t per = (n + shards.size() - 1) / shards.size();
    std::vector<std::thread> workers;
    for (std::size_t s = 1; s < shards.size(); ++s) {
      const std::size_t b = std::min(n, s * per);
      const std::size_t c = std::min(n, b + per) - b;
      workers.emplace_back([&, b, c, s] {
        run_shard(model, batch, b, c, normaliser, cfg, shards[s]);
      });
    }
    run_shard(model, batch, 0, std::min(n, per), normaliser, cfg, shards[0]);
    for (auto& w : workers) w.join();

    double loss = shards[0].loss_sum;
    for (std::size_t s = 1; s < shards.size(); ++s) {
      loss += shards[s].loss_sum;
      for (std::size_t i = 0; i < shards[0].grid_grad.size(); ++i)
        shards[0].grid_grad[i] += shards[s].grid_grad[i];
      for (std::size_t i = 0; i < shards[0].decoder_grad.size(); ++i)
        shards[0].decoder_grad[i] += shards[s].decoder_grad[i];
    }
    loss /= normaliser;
    if (!std::isfinite(loss)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step + 1),
                            step + 1);
    }

    const double grid_lr = lr * cfg.grid_lr_scale;
    const double decoder_lr = lr * cfg.decoder_lr_scale;
    const double du_grid =
        adam_step(model.grids.params(), std::span<const Real>(shards[0].grid_grad),
                  grid_state, grid_lr, hyper);
    const double du_dec =
        adam_step(model.decoder.data(), std::span<const Real>(shards[0].decoder_grad),
                  decoder_state, decoder_lr, hyper);
    const double bound = adam_update_bound(step + 1, cfg.beta1, cfg.beta2);
    result.max_update_ratio =
        std::max({result.max_update_ratio, du_grid / (grid_lr * bound),
                  du_dec / (decoder_lr * bound)});

    result.losses.push_back(loss);
    if ((step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps) {
      LogRow row{step + 1, lr, loss, elapsed_ms()};
      result.rows.push_back(row);
      if (on_log) on_log(row);
    }
  }
  result.wall_seconds = elapsed_ms() / 1000.0;
  return result;
}

std::string format_log_csv(std::span<const LogRow> rows) {
  std::ostringstream out;
  out.precision(17);
  out << "step,lr,loss,wall_ms\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.lr << ',' << r.loss << ',';
    out.precision(6);
    out << std::fixed << r.wall_ms << '\n';
    out.unsetf(std::ios::floatfield);
    out.precision(17);
  }
  return out.str();
}

void write_log_csv(const std::filesystem::path& path, std::span<const LogRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write log '" + path.string() + "'");
  out << format_log_csv(rows);
}

template double adam_step<float>(std::span<float>, std::span<const float>,
                                 AdamState<float>&, double, const AdamHyper&);
template double adam_step<double>(std::span<double>, std::span<const double>,
                                  AdamState<double>&, double, const AdamHyper&);
template TrainResult train<float>(FieldModel<float>&, const Sampler&,
                                  const TrainConfig&,
                                  const std::function<void(const LogRow&)>&);
template TrainResult train<double>(FieldModel<double>&, const Sampler&,
                                   const TrainConfig&,
                                   const std::function<void(const LogRow&)>&);

}  // namespace metricgrids
