// Acceptance suite: one PASS/FAIL line per criterion. Training criteria run
// the CLI in process so they exercise the same code path as users.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "degree_probe.hpp"
#include "json.hpp"
#include "metricgrids/checkpoint.hpp"
#include "metricgrids/metric_encoding.hpp"
#include "metricgrids/training.hpp"

namespace mg = metricgrids;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  fs::path work = "acceptance_work";
  fs::path fixture = fs::path(METRICGRIDS_TEST_DATA) / "fixture_256.png";
  std::vector<int> only;
  long image_batch = 4096;
  long sdf_batch = 4096;
  long image_steps = 2000;
  long sdf_steps = 5000;
  std::uint64_t seed = 0;
};

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

struct CliRun {
  int code = 0;
  json summary;
  std::string err;
  double seconds = 0.0;
};

CliRun run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full{"metricgrids"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  CliRun r;
  r.code = mg::cli::run_cli(int(argv.size()), argv.data(), out, err);
  r.seconds = seconds_since(t0);
  r.err = err.str();
  if (r.code == 0) {
    const std::string text = out.str();
    r.summary = json::parse(text.substr(0, text.find('\n')));
  }
  return r;
}

double psnr_of(const json& j) {
  const auto& v = j.at("psnr");
  return v.is_string() ? std::numeric_limits<double>::infinity() : v.get<double>();
}

// Training runs shared between criteria, run at most once each.
class Runs {
 public:
  explicit Runs(const Options& o) : opt_(o) {}

  const CliRun& image(const std::string& name, const std::vector<std::string>& extra) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    std::vector<std::string> args{"fit-image",
                                  "--image", opt_.fixture.string(),
                                  "--steps", std::to_string(opt_.image_steps),
                                  "--batch", std::to_string(opt_.image_batch),
                                  "--seed", std::to_string(opt_.seed),
                                  "--deterministic",
                                  "--out", (opt_.work / (name + ".mgrd")).string(),
                                  "--log", (opt_.work / (name + ".csv")).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    CliRun r = run_cli(args);
    std::cout << "  run " << name << ": ";
    if (r.code == 0) {
      std::cout << "psnr " << fmt(psnr_of(r.summary)) << " dB, params "
                << r.summary.at("params_count") << ", L " << r.summary.at("levels")
                << ", log2 T " << r.summary.at("log2_table") << ", " << fmt(r.seconds, 1)
                << " s\n";
    } else {
      std::cout << "exit " << r.code << ": " << r.err;
    }
    return cache_.emplace(name, std::move(r)).first->second;
  }

  const CliRun& m3() { return image("m3", {"--metrics", "linear,sin,arcsin"}); }
  const CliRun& baseline() { return image("baseline", {"--baseline"}); }

 private:
  const Options& opt_;
  std::map<std::string, CliRun> cache_;
};

std::string failure(const CliRun& r) {
  return "run failed with exit " + std::to_string(r.code) + ": " + r.err;
}

// 1. Gradient correctness.
Verdict gradients(const Options&, Runs&) {
  const auto t0 = Clock::now();
  double worst_double = 0.0, worst_single = 0.0;
  bool ok = true;
  std::string names;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto d = mg::gradcheck_double({seed, 1.0});
    const auto s = mg::gradcheck_single({seed, 1.0});
    worst_double = std::max(worst_double, d.worst().max_rel_error);
    worst_single = std::max(worst_single, s.worst().max_rel_error);
    ok = ok && d.passed() && s.passed();
    if (seed == 0) {
      for (const auto& g : d.groups) names += (names.empty() ? "" : ",") + g.name;
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, "worst double " + sci(worst_double) + " (<1e-6), single " + sci(worst_single) +
                  " (<1e-3), " + fmt(secs, 1) + " s; groups " + names};
}

// 2. Encoding invariants at 1e4 random points per kind.
Verdict encoding(const Options&, Runs&) {
  const std::vector<mg::MetricKind> kinds{mg::MetricKind::linear(), mg::MetricKind::pow(2),
                                          mg::MetricKind::pow(3), mg::MetricKind::sin_warp(),
                                          mg::MetricKind::arcsin_warp(),
                                          mg::MetricKind::cos_warp()};
  constexpr int kPoints = 10000;
  constexpr double kEps = 1e-7;
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> upm(-1.0, 1.0);
  bool ok = true;
  std::ostringstream detail;
  for (const auto& k : kinds) {
    double partition = 0.0, endpoint = 0.0, linearity = 0.0, continuity = 0.0;
    bool monotone = true;
    endpoint = std::max(std::abs(mg::metric_warp(k, 0.0)), std::abs(mg::metric_warp(k, 1.0) - 1.0));

    std::vector<double> ts(kPoints);
    for (auto& t : ts) t = u01(rng);
    std::sort(ts.begin(), ts.end());
    for (int i = 1; i < kPoints; ++i)
      monotone = monotone && mg::metric_warp(k, ts[std::size_t(i)]) >= mg::metric_warp(k, ts[std::size_t(i - 1)]);

    for (int i = 0; i < kPoints; ++i) {
      const std::vector<double> t{u01(rng), u01(rng), u01(rng)};
      double s = 0.0;
      for (double w : mg::corner_weights(k, t)) s += w;
      partition = std::max(partition, std::abs(s - 1.0));
    }

    mg::GridStructure gs;
    gs.dims = 2;
    // Grid 0 must be linear; the kind under test sits in grid 1.
    gs.metrics = {mg::MetricKind::linear(), k};
    gs.levels = 4;
    gs.features = 2;
    gs.base_res = 4;
    gs.max_res = 64;
    gs.log2_table = 10;
    mg::MetricGridSet<double> a(gs), b(gs), mix(gs);
    for (auto& v : a.params()) v = upm(rng);
    for (auto& v : b.params()) v = upm(rng);
    const double alpha = 0.7, beta = -1.3;
    for (std::size_t i = 0; i < mix.params().size(); ++i)
      mix.params()[i] = alpha * a.params()[i] + beta * b.params()[i];
    double scale = 0.0;
    for (double v : a.params()) scale = std::max(scale, std::abs(v));
    const auto res = mg::level_resolutions(gs.base_res, gs.max_res, gs.levels);

    for (int i = 0; i < kPoints; ++i) {
      const std::vector<double> x{u01(rng), u01(rng)};
      const auto fa = a.encode(x).per_grid_features[1];
      const auto fb = b.encode(x).per_grid_features[1];
      const auto fm = mix.encode(x).per_grid_features[1];
      for (std::size_t j = 0; j < fa.size(); ++j)
        linearity = std::max(linearity, std::abs(fm[j] - (alpha * fa[j] + beta * fb[j])));

      const int r = res[std::size_t(rng() % res.size())];
      const int vertex = 1 + int(rng() % std::uint64_t(r - 2));
      const double xb = double(vertex) / double(r - 1);
      const auto lo = a.encode(std::vector<double>{xb - kEps, x[1]}).per_grid_features[1];
      const auto hi = a.encode(std::vector<double>{xb + kEps, x[1]}).per_grid_features[1];
      for (std::size_t j = 0; j < lo.size(); ++j)
        continuity = std::max(continuity, std::abs(lo[j] - hi[j]) / scale);
    }
    const bool kind_ok = partition <= 1e-12 && endpoint <= 1e-15 && monotone &&
                         continuity <= 1e-4 && linearity <= 1e-12;
    ok = ok && kind_ok;
    detail << k.name() << (kind_ok ? "" : "(FAIL)") << " pou " << sci(partition)
           << " cont " << sci(continuity) << " lin " << sci(linearity)
           << (monotone ? "" : " non-monotone") << "; ";
  }
  return {ok, detail.str()};
}

// 3. M=3 beats the baseline by >= 0.5 dB.
Verdict ablation(const Options&, Runs& runs) {
  const auto& m3 = runs.m3();
  const auto& base = runs.baseline();
  if (m3.code != 0) return {false, failure(m3)};
  if (base.code != 0) return {false, failure(base)};
  const double a = psnr_of(m3.summary), b = psnr_of(base.summary);
  const double minutes = std::max(m3.seconds, base.seconds) / 60.0;
  const bool ok = a - b >= 0.5 && minutes <= 15.0;
  return {ok, "M=3 " + fmt(a) + " dB vs baseline " + fmt(b) + " dB, margin " + fmt(a - b) +
                  " (need >= 0.5); params " + to_string(m3.summary.at("params_count")) +
                  " vs " + to_string(base.summary.at("params_count")) +
                  "; longest run " + fmt(minutes, 2) + " min"};
}

// 4. [linear,pow2,pow3] beats the baseline.
Verdict pnorm(const Options&, Runs& runs) {
  const auto& p = runs.image("pnorm", {"--metrics", "linear,pow2,pow3"});
  const auto& base = runs.baseline();
  if (p.code != 0) return {false, failure(p)};
  if (base.code != 0) return {false, failure(base)};
  const double a = psnr_of(p.summary), b = psnr_of(base.summary);
  return {a > b, "p-norm " + fmt(a) + " dB vs baseline " + fmt(b) + " dB"};
}

// 5. Identity-activation degree growth.
Verdict degree(const Options&, Runs&) {
  bool ok = true;
  std::ostringstream detail;
  for (int m = 1; m <= 3; ++m) {
    const auto fit = mg::testing::fit_decoder_degree(m, 100 + std::uint64_t(m));
    const int expected = m * (m + 3) / 2;
    const bool m_ok = fit.predicted == expected && fit.residual_at < 1e-8 &&
                      fit.residual_below > 1e-6;
    ok = ok && m_ok;
    detail << "m=" << m << " degree " << fit.predicted << " residual " << sci(fit.residual_at)
           << " (below: " << sci(fit.residual_below) << "); ";
  }
  return {ok, detail.str()};
}

// 6. Full model >= no-hierarchy variant.
Verdict hierarchy(const Options&, Runs& runs) {
  const auto& full = runs.m3();
  const auto& flat = runs.image("no_hierarchy", {"--metrics", "linear,sin,arcsin",
                                                 "--no-hierarchy"});
  if (full.code != 0) return {false, failure(full)};
  if (flat.code != 0) return {false, failure(flat)};
  const double a = psnr_of(full.summary), b = psnr_of(flat.summary);
  return {a >= b, "full " + fmt(a) + " dB vs no-hierarchy " + fmt(b) + " dB (params " +
                      to_string(full.summary.at("params_count")) + " vs " +
                      to_string(flat.summary.at("params_count")) + ")"};
}

// 7. Sphere and torus SDF fits.
Verdict sdf(const Options& o, Runs&) {
  const auto t0 = Clock::now();
  auto fit = [&](const std::string& shape) {
    return run_cli({"fit-sdf", "--shape", shape, "--steps", std::to_string(o.sdf_steps),
                    "--batch", std::to_string(o.sdf_batch), "--seed", std::to_string(o.seed),
                    "--out", (o.work / (shape + ".mgrd")).string(),
                    "--log", (o.work / (shape + ".csv")).string()});
  };
  const CliRun sphere = fit("sphere");
  if (sphere.code != 0) return {false, failure(sphere)};
  const CliRun torus = fit("torus");
  if (torus.code != 0) return {false, failure(torus)};
  const double s_iou = sphere.summary.at("iou").get<double>();
  const double s_nae = sphere.summary.at("nae").get<double>();
  const double t_iou = torus.summary.at("iou").get<double>();
  const double minutes = seconds_since(t0) / 60.0;
  const bool ok = s_iou >= 0.999 && s_nae <= 5.0 && t_iou >= 0.995 && minutes <= 20.0;
  return {ok, "sphere IoU " + fmt(s_iou, 5) + " (>=0.999), NAE " + fmt(s_nae, 2) +
                  " deg (<=5); torus IoU " + fmt(t_iou, 5) + " (>=0.995); " +
                  fmt(minutes, 2) + " min"};
}

// step,lr,loss columns; wall_ms is a timing measurement.
std::vector<std::string> deterministic_columns(const fs::path& csv) {
  std::istringstream in(mg::read_file_bytes(csv));
  std::vector<std::string> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(line.substr(0, line.rfind(',')));
  return rows;
}

// 8. Bit-identical reruns.
Verdict determinism(const Options& o, Runs& runs) {
  const auto& first = runs.m3();
  const auto& second = runs.image("m3_repeat", {"--metrics", "linear,sin,arcsin"});
  if (first.code != 0) return {false, failure(first)};
  if (second.code != 0) return {false, failure(second)};
  const bool same_ckpt = mg::read_file_bytes(o.work / "m3.mgrd") ==
                         mg::read_file_bytes(o.work / "m3_repeat.mgrd");
  const auto a = deterministic_columns(o.work / "m3.csv");
  const auto b = deterministic_columns(o.work / "m3_repeat.csv");
  const bool same_log = a == b && a.size() > 1;
  return {same_ckpt && same_log,
          std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") + ", logs " +
              (same_log ? "identical" : "DIFFER") + " over " + std::to_string(a.size() - 1) +
              " rows (step,lr,loss)"};
}

// 9. Checkpoint and reconstruction round trips.
Verdict round_trips(const Options& o, Runs& runs) {
  const auto& m3 = runs.m3();
  if (m3.code != 0) return {false, failure(m3)};
  const fs::path ckpt = o.work / "m3.mgrd";
  const std::string bytes = mg::read_file_bytes(ckpt);
  const mg::Checkpoint ck = mg::read_checkpoint(ckpt);
  mg::write_checkpoint(o.work / "m3_rewritten.mgrd", ck);
  const bool exact = mg::read_file_bytes(o.work / "m3_rewritten.mgrd") == bytes;

  const fs::path png = o.work / "m3_reconstruction.png";
  const CliRun rec = run_cli({"reconstruct", "--ckpt", ckpt.string(), "--out", png.string()});
  if (rec.code != 0) return {false, failure(rec)};
  const CliRun ev = run_cli({"eval-image", "--pred", png.string(), "--ref", o.fixture.string()});
  if (ev.code != 0) return {false, failure(ev)};
  const double trained = psnr_of(m3.summary), evaluated = psnr_of(ev.summary);
  const double diff = std::abs(trained - evaluated);
  // Uniform u8 rounding adds (1/255)^2/12 to the MSE.
  const double mse = std::pow(10.0, -trained / 10.0);
  const double rounding_db = 10.0 * std::log10(1.0 + 1.0 / (255.0 * 255.0 * 12.0) / mse);
  return {exact && diff <= 0.05,
          std::string("checkpoint rewrite ") + (exact ? "bit-exact" : "DIFFERS") +
              "; summary " + fmt(trained, 4) + " dB vs reconstructed " + fmt(evaluated, 4) +
              " dB (|diff| " + fmt(diff, 4) + " <= 0.05; 8-bit rounding alone predicts " +
              fmt(rounding_db, 4) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Acceptance criteria"};
  app.add_option("--work-dir", opt.work, "Scratch directory for runs")->capture_default_str();
  app.add_option("--fixture", opt.fixture, "256x256 training crop")->capture_default_str();
  app.add_option("--only", opt.only, "Run only these criteria, e.g. 3,4")->delimiter(',');
  app.add_option("--image-batch", opt.image_batch, "Pixels per step")->capture_default_str();
  app.add_option("--image-steps", opt.image_steps, "Image training steps")->capture_default_str();
  app.add_option("--sdf-batch", opt.sdf_batch, "Points per step")->capture_default_str();
  app.add_option("--sdf-steps", opt.sdf_steps, "SDF training steps")->capture_default_str();
  app.add_option("--seed", opt.seed, "Seed shared by paired runs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(opt.work);

  Runs runs(opt);
  const std::vector<std::pair<std::string, std::function<Verdict(const Options&, Runs&)>>>
      criteria{{"gradient correctness", gradients},
               {"encoding invariants", encoding},
               {"ablation direction (M=3 vs baseline)", ablation},
               {"p-norm variant beats baseline", pnorm},
               {"decoder degree property", degree},
               {"hierarchy ablation", hierarchy},
               {"SDF convergence", sdf},
               {"determinism", determinism},
               {"round trips", round_trips}};

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), id) == opt.only.end())
      continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second(opt, runs);
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << v.detail << " [" << fmt(seconds_since(t0), 1)
              << " s]" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
