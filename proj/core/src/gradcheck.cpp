#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "metricgrids/errors.hpp"
#include "metricgrids/training.hpp"

namespace metricgrids {

const GradcheckGroup& GradcheckReport::worst() const {
  if (groups.empty()) throw Error("gradcheck report has no groups");
  return *std::max_element(groups.begin(), groups.end(),
                           [](const auto& a, const auto& b) {
                             return a.max_rel_error < b.max_rel_error;
                           });
}

void GradcheckGroup::record(std::size_t index, double analytic, double numeric,
                            double rel) {
  if (checked == 0 || rel > max_rel_error) {
    max_rel_error = rel;
    worst_index = index;
    worst_analytic = analytic;
    worst_numeric = numeric;
  }
  ++checked;
}

bool GradcheckReport::passed() const {
  return !groups.empty() && worst().max_rel_error < threshold;
}

namespace {

constexpr std::size_t kSamples = 6;
// Central differences run in extended precision, where the round-off floor
// sits far below the tolerances.
using Wide = long double;
constexpr Wide kStep = 1e-6L;
constexpr double kDoubleThreshold = 1e-6;
constexpr double kSingleThreshold = 1e-3;
constexpr double kAbsFloor = 1e-9;
// Entries far below the group's largest gradient are sums of cancelling
// terms; they are compared against this fraction of the group maximum.
constexpr double kGroupFloor = 1e-3;

// Tiny configuration covering dense and hashed slabs, a colliding table
// (the third grid's 16 entries hold 4x4 and 9x9 lattices) and L_dec > M
// so the highest-order grid is reused by the deepest layer.
FieldModel<double> tiny_model(std::uint64_t seed) {
  GridStructure g;
  g.dims = 2;
  g.metrics = {MetricKind::linear(), MetricKind::sin_warp(), MetricKind::arcsin_warp()};
  g.levels = 2;
  g.features = 2;
  g.base_res = 4;
  g.max_res = 9;
  g.log2_table = 6;
  DecoderShape d;
  d.hidden = 8;
  d.layers = 4;
  d.outputs = 3;
  FieldModel<double> model(g, d);
  model.init(seed);
  // Larger magnitudes than training init so every branch is exercised away
  // from the near-linear regime.
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (auto& p : model.grids.params()) p = u(rng);
  for (auto& p : model.decoder.data()) p = u(rng);
  return model;
}

struct Problem {
  std::vector<double> coords;
  std::vector<double> targets;
  double scale = 1.0;
};

Problem tiny_problem(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed * 104729 + 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Problem p;
  p.scale = scale;
  for (std::size_t i = 0; i < kSamples * 2; ++i) p.coords.push_back(u(rng));
  for (std::size_t i = 0; i < kSamples * 3; ++i) p.targets.push_back(u(rng));
  return p;
}

Wide objective_from_output(const FieldModel<Wide>::Matrix& out, const Problem& p) {
  Wide s = 0.0L;
  for (std::size_t i = 0; i < p.targets.size(); ++i) {
    const Wide e = out.data()[i] - Wide(p.targets[i]);
    s += e * e;
  }
  return Wide(p.scale) * s / Wide(p.targets.size());
}

Wide objective(const FieldModel<Wide>& model, const std::vector<Wide>& coords,
               const Problem& p) {
  FieldWorkspace<Wide> ws;
  field_forward(model, coords, kSamples, ws);
  return objective_from_output(ws.output, p);
}

Wide decoder_objective(const DecoderParams<Wide>& dec,
                       const DecoderParams<Wide>::Matrix& features, const Problem& p) {
  DecoderCache<Wide> cache;
  DecoderParams<Wide>::Matrix out;
  decode_forward_batch(dec, features, out, cache);
  return objective_from_output(out, p);
}

template <class Real>
struct Analytic {
  std::vector<Real> grid_grad;
  std::vector<Real> decoder_grad;
  typename FieldModel<Real>::Matrix feature_grads;
};

template <class Real>
Analytic<Real> analytic_gradients(const FieldModel<Real>& model, const Problem& p) {
  FieldWorkspace<Real> ws;
  std::vector<Real> coords(p.coords.begin(), p.coords.end());
  field_forward(model, coords, kSamples, ws);
  typename FieldModel<Real>::Matrix up(ws.output.rows(), ws.output.cols());
  for (std::size_t i = 0; i < p.targets.size(); ++i) {
    up.data()[i] = Real(p.scale * 2.0 * (double(ws.output.data()[i]) - p.targets[i]) /
                        double(p.targets.size()));
  }
  Analytic<Real> a;
  a.grid_grad.assign(model.grids.params().size(), Real(0));
  a.decoder_grad.assign(model.decoder.size(), Real(0));
  field_backward(model, ws, up, a.grid_grad, a.decoder_grad);
  a.feature_grads = ws.feature_grads;
  return a;
}

struct Pairs {
  std::vector<double> analytic;
  std::vector<double> numeric;

  void add(double a, double n) {
    analytic.push_back(a);
    numeric.push_back(n);
  }
};

GradcheckGroup score(std::string name, const Pairs& p) {
  double peak = 0.0;
  for (double n : p.numeric) peak = std::max(peak, std::abs(n));
  const double floor = std::max(kAbsFloor, kGroupFloor * peak);
  GradcheckGroup g;
  g.name = std::move(name);
  for (std::size_t i = 0; i < p.numeric.size(); ++i) {
    const double a = p.analytic[i];
    const double n = p.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    g.record(i, a, n, std::abs(a - n) / denom);
  }
  return g;
}

template <class Real>
GradcheckReport run(const GradcheckOptions& opts, const char* precision,
                    double threshold) {
  const FieldModel<double> seeded = tiny_model(opts.seed);
  FieldModel<Real> model(seeded.grids.structure(), seeded.decoder.shape());
  std::transform(seeded.grids.params().begin(), seeded.grids.params().end(),
                 model.grids.params().begin(), [](double v) { return Real(v); });
  std::transform(seeded.decoder.data().begin(), seeded.decoder.data().end(),
                 model.decoder.data().begin(), [](double v) { return Real(v); });
  // The reference sits at the (possibly rounded) parameters of the model
  // under test.
  FieldModel<Wide> reference(seeded.grids.structure(), seeded.decoder.shape());
  std::transform(model.grids.params().begin(), model.grids.params().end(),
                 reference.grids.params().begin(), [](Real v) { return Wide(v); });
  std::transform(model.decoder.data().begin(), model.decoder.data().end(),
                 reference.decoder.data().begin(), [](Real v) { return Wide(v); });

  const Problem problem = tiny_problem(opts.seed, opts.objective_scale);
  const Analytic<Real> a = analytic_gradients(model, problem);

  GradcheckReport report;
  report.precision = precision;
  report.threshold = threshold;

  std::vector<Wide> coords(problem.coords.begin(), problem.coords.end());
  // Coordinates as the model under test sees them.
  std::transform(problem.coords.begin(), problem.coords.end(), coords.begin(),
                 [](double v) { return Wide(Real(v)); });
  auto probe = [&](std::span<Wide> params, std::size_t i, auto&& eval) {
    const Wide saved = params[i];
    params[i] = saved + kStep;
    const Wide up = eval();
    params[i] = saved - kStep;
    const Wide down = eval();
    params[i] = saved;
    return double((up - down) / (2.0L * kStep));
  };
  auto full = [&] { return objective(reference, coords, problem); };

  const auto& gs = reference.grids.structure();
  for (int m = 0; m < gs.grid_count(); ++m) {
    Pairs pairs;
    for (int l = 0; l < gs.levels; ++l) {
      const auto& spec = reference.grids.level(m, l);
      const std::size_t len = std::size_t(spec.entries) * std::size_t(spec.features);
      for (std::size_t i = spec.offset; i < spec.offset + len; ++i) {
        pairs.add(double(a.grid_grad[i]), probe(reference.grids.params(), i, full));
      }
    }
    report.groups.push_back(score(
        "grid[" + std::to_string(m) + "] " + gs.metrics[std::size_t(m)].name(), pairs));
  }

  for (const auto& g : reference.decoder.groups()) {
    Pairs pairs;
    for (const auto& b : g.blocks) {
      const std::size_t len = std::size_t(b.rows) * std::size_t(b.cols);
      for (std::size_t i = b.offset; i < b.offset + len; ++i) {
        pairs.add(double(a.decoder_grad[i]), probe(reference.decoder.data(), i, full));
      }
    }
    report.groups.push_back(score(std::string("decoder ") + g.name, pairs));
  }

  // Decoder input features, perturbed directly.
  {
    FieldWorkspace<Wide> ws;
    field_forward(reference, coords, kSamples, ws);
    DecoderParams<Wide>::Matrix features = ws.features;
    std::span<Wide> flat(features.data(), std::size_t(features.size()));
    Pairs pairs;
    auto dec = [&] { return decoder_objective(reference.decoder, features, problem); };
    for (std::size_t i = 0; i < flat.size(); ++i) {
      pairs.add(double(a.feature_grads.data()[i]), probe(flat, i, dec));
    }
    report.groups.push_back(score("features", pairs));
  }
  return report;
}

}  // namespace

GradcheckReport gradcheck_double(const GradcheckOptions& opts) {
  return run<double>(opts, "double", kDoubleThreshold);
}

GradcheckReport gradcheck_single(const GradcheckOptions& opts) {
  return run<float>(opts, "single", kSingleThreshold);
}

}  // namespace metricgrids
