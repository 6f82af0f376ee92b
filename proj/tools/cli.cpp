#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "metricgrids/checkpoint.hpp"
#include "metricgrids/errors.hpp"
#include "metricgrids/evaluation.hpp"
#include "metricgrids/run_config.hpp"
#include "metricgrids/training.hpp"

namespace metricgrids::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

struct FitFlags {
  std::string config;
  std::string out = "model.mgrd";
  std::string log;
  std::string results;
  std::string input;  // image path or shape name
  std::string metrics;
  std::uint64_t seed = 0;
  long steps = 0;
  long param_budget = 0;
  std::size_t batch = 0;
  int threads = 1;
  bool baseline = false;
  bool no_hierarchy = false;
  bool unrestricted = false;
  bool deterministic = false;
  bool dump_config = false;
  bool verbose = false;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* budget_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--config", f.config, "Key-value config file");
  cmd->add_option("--out", f.out, "Checkpoint path")->capture_default_str();
  cmd->add_option("--log", f.log, "Loss log CSV (default: checkpoint path with .csv)");
  cmd->add_option("--results", f.results, "Append the metrics row to this CSV");
  cmd->add_option("--metrics", f.metrics, "Comma-separated metric list, e.g. linear,sin,arcsin");
  f.seed_opt = cmd->add_option("--seed", f.seed, "Random seed");
  f.steps_opt = cmd->add_option("--steps", f.steps, "Training steps");
  f.budget_opt = cmd->add_option("--param-budget", f.param_budget,
                                 "Total parameter budget (solves the table size)");
  f.batch_opt = cmd->add_option("--batch", f.batch, "Samples per step");
  f.threads_opt = cmd->add_option("--threads", f.threads, "Worker threads for batch sharding");
  cmd->add_flag("--baseline", f.baseline, "Single linear grid at native resolution");
  cmd->add_flag("--no-hierarchy", f.no_hierarchy, "Every modulation layer sees all grids");
  cmd->add_flag("--unrestricted", f.unrestricted, "Ignore the parameter budget");
  cmd->add_flag("--deterministic", f.deterministic, "Single-threaded fixed-order reductions");
  cmd->add_flag("--dump-config", f.dump_config, "Print the effective config and exit");
  cmd->add_flag("-v,--verbose", f.verbose, "Print log rows to stderr while training");
}

RunConfig build_config(TaskKind kind, const FitFlags& f) {
  RunConfig cfg = RunConfig::defaults(kind);
  if (!f.config.empty()) {
    const std::string text = read_file_bytes(f.config);
    cfg.apply_kv(text);
    if (cfg.task.kind != kind) throw ConfigError("config file is for a different task");
  }
  if (!f.metrics.empty()) cfg.model.metrics = parse_metric_list(f.metrics);
  if (f.seed_opt->count() > 0) cfg.train.seed = f.seed;
  if (f.steps_opt->count() > 0) cfg.train.steps = f.steps;
  if (f.budget_opt->count() > 0) {
    cfg.model.param_budget = f.param_budget;
    cfg.model.log2_table = 0;
  }
  if (f.batch_opt->count() > 0) cfg.train.batch_size = f.batch;
  if (f.threads_opt->count() > 0) cfg.train.threads = f.threads;
  if (f.baseline) cfg.ablation.baseline_mode = true;
  if (f.no_hierarchy) cfg.ablation.no_hierarchy = true;
  if (f.unrestricted) cfg.ablation.unrestricted_params = true;
  if (f.deterministic) cfg.train.deterministic = true;
  cfg.validate();
  return cfg;
}

fs::path log_path(const FitFlags& f) {
  if (!f.log.empty()) return f.log;
  fs::path p = f.out;
  p.replace_extension(".csv");
  return p;
}

TrainResult run_training(FieldModel<float>& model, const Sampler& sampler,
                         const RunConfig& cfg, bool verbose, std::ostream& err) {
  std::function<void(const LogRow&)> on_log;
  if (verbose) {
    on_log = [&err](const LogRow& r) {
      err << "step " << r.step << " lr " << r.lr << " loss " << r.loss << " ("
          << r.wall_ms << " ms)\n";
    };
  }
  return train(model, sampler, cfg.train, on_log);
}

int cmd_fit_image(const FitFlags& f, std::ostream& out, std::ostream& err) {
  RunConfig cfg = build_config(TaskKind::Image, f);
  if (!f.input.empty()) cfg.task.image_path = f.input;
  if (f.dump_config) {
    out << cfg.to_kv();
    return 0;
  }
  if (cfg.task.image_path.empty()) throw ConfigError("no image given (--image)");
  const ImageField image = load_image(cfg.task.image_path);
  cfg.task.image_width = image.width;
  cfg.task.image_height = image.height;
  const ResolvedModel shapes = resolve_model(cfg);

  FieldModel<float> model(shapes.grid, shapes.decoder);
  model.init(cfg.train.seed);
  const Sampler sampler = [&image](Rng& rng, std::size_t n) {
    return sample_image_batch(image, n, rng);
  };
  const TrainResult result = run_training(model, sampler, cfg, f.verbose, err);

  write_checkpoint(f.out, cfg, model);
  write_log_csv(log_path(f), result.rows);

  const ImageField pred = render_image(model, image.width, image.height);
  MetricsReport report;
  report.task = "image";
  report.psnr = psnr(pred, image);
  report.ssim = ssim(pred, image);
  report.params_count = shapes.parameter_count;
  report.wall_time = result.wall_seconds;
  if (!f.results.empty()) report.append_csv(f.results);

  ordered_json j = ordered_json::parse(report.to_json());
  j["final_loss"] = result.losses.empty() ? 0.0 : result.losses.back();
  j["steps"] = cfg.train.steps;
  j["levels"] = shapes.grid.levels;
  j["log2_table"] = shapes.grid.log2_table;
  j["checkpoint"] = f.out;
  out << j.dump() << '\n';
  return 0;
}

struct SdfEval {
  double iou = 0.0;
  NaeResult nae;
};

SdfEval evaluate_sdf(const FieldModel<float>& model, const GridStructure& grid,
                     const AnalyticSdf& sdf, int resolution, std::size_t nae_points,
                     std::uint64_t seed) {
  const ScalarField field = as_scalar_field(model);
  SdfEval e;
  e.iou = iou_occupancy(field, sdf, resolution);
  Rng rng(seed);
  e.nae = normal_angular_error(field, sdf, nae_points, rng, normal_fd_step(grid));
  return e;
}

ordered_json sdf_summary(MetricsReport& report, const SdfEval& e) {
  report.iou = e.iou;
  report.nae = e.nae.degrees;
  ordered_json j = ordered_json::parse(report.to_json());
  j["nae_excluded"] = e.nae.excluded;
  if (e.nae.warning) j["warning"] = "more than 1% of normals had zero magnitude";
  return j;
}

int cmd_fit_sdf(const FitFlags& f, std::ostream& out, std::ostream& err) {
  RunConfig cfg = build_config(TaskKind::Sdf, f);
  if (!f.input.empty()) cfg.task.sdf = AnalyticSdf::from_name(f.input);
  if (f.dump_config) {
    out << cfg.to_kv();
    return 0;
  }
  const ResolvedModel shapes = resolve_model(cfg);
  FieldModel<float> model(shapes.grid, shapes.decoder);
  model.init(cfg.train.seed);
  const AnalyticSdf sdf = cfg.task.sdf;
  const double near = cfg.task.near_fraction;
  const double sigma = cfg.task.sigma_near;
  const Sampler sampler = [sdf, near, sigma](Rng& rng, std::size_t n) {
    return sample_sdf_batch(sdf, n, rng, near, sigma);
  };
  const TrainResult result = run_training(model, sampler, cfg, f.verbose, err);

  write_checkpoint(f.out, cfg, model);
  write_log_csv(log_path(f), result.rows);

  MetricsReport report;
  report.task = "sdf";
  report.params_count = shapes.parameter_count;
  report.wall_time = result.wall_seconds;
  const SdfEval e = evaluate_sdf(model, shapes.grid, sdf, 128, 10000, cfg.train.seed + 1);
  ordered_json j = sdf_summary(report, e);
  if (!f.results.empty()) report.append_csv(f.results);
  j["final_loss"] = result.losses.empty() ? 0.0 : result.losses.back();
  j["steps"] = cfg.train.steps;
  j["shape"] = sdf.name();
  j["checkpoint"] = f.out;
  out << j.dump() << '\n';
  return 0;
}

struct ReconstructFlags {
  std::string ckpt;
  std::string out = "reconstruction.png";
  int width = 0;
  int height = 0;
};

int cmd_reconstruct(const ReconstructFlags& f, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(f.ckpt);
  if (ck.config.task.kind != TaskKind::Image) {
    throw ConfigError("reconstruct needs an image checkpoint; '" + f.ckpt +
                      "' holds an sdf model");
  }
  const int w = f.width > 0 ? f.width : ck.config.task.image_width;
  const int h = f.height > 0 ? f.height : ck.config.task.image_height;
  if (w < 1 || h < 1) throw ConfigError("output size unknown; pass --width and --height");
  const ImageField img = render_image(ck.model, w, h);
  save_image(img, f.out);
  ordered_json j;
  j["output"] = f.out;
  j["width"] = w;
  j["height"] = h;
  out << j.dump() << '\n';
  return 0;
}

struct EvalImageFlags {
  std::string ckpt;
  std::string pred;
  std::string ref;
  std::string results;
  std::string error_map;
};

int cmd_eval_image(const EvalImageFlags& f, std::ostream& out) {
  if (f.ckpt.empty() == f.pred.empty()) {
    throw ConfigError("eval-image needs exactly one of --ckpt or --pred");
  }
  MetricsReport report;
  report.task = "image";
  ImageField pred;
  std::string ref_path = f.ref;
  if (!f.ckpt.empty()) {
    const Checkpoint ck = read_checkpoint(f.ckpt);
    if (ck.config.task.kind != TaskKind::Image) {
      throw ConfigError("'" + f.ckpt + "' is not an image checkpoint");
    }
    if (ref_path.empty()) ref_path = ck.config.task.image_path;
    report.params_count = ck.model.parameter_count();
    pred = render_image(ck.model, ck.config.task.image_width, ck.config.task.image_height);
  } else {
    pred = load_image(f.pred);
  }
  if (ref_path.empty()) throw ConfigError("no reference image (--ref)");
  const ImageField ref = load_image(ref_path);
  report.psnr = psnr(pred, ref);
  report.ssim = ssim(pred, ref);
  if (!f.error_map.empty()) error_map(pred, ref, f.error_map);
  if (!f.results.empty()) report.append_csv(f.results);
  out << report.to_json() << '\n';
  return 0;
}

struct EvalSdfFlags {
  std::string ckpt;
  std::string shape;
  std::string results;
  int resolution = 128;
  std::size_t nae_points = 10000;
  std::uint64_t seed = 1;
};

int cmd_eval_sdf(const EvalSdfFlags& f, std::ostream& out) {
  const Checkpoint ck = read_checkpoint(f.ckpt);
  if (ck.config.task.kind != TaskKind::Sdf) {
    throw ConfigError("'" + f.ckpt + "' is not an sdf checkpoint");
  }
  const AnalyticSdf sdf = f.shape.empty() ? ck.config.task.sdf : AnalyticSdf::from_name(f.shape);
  MetricsReport report;
  report.task = "sdf";
  report.params_count = ck.model.parameter_count();
  const SdfEval e = evaluate_sdf(ck.model, ck.shapes.grid, sdf, f.resolution, f.nae_points, f.seed);
  const ordered_json j = sdf_summary(report, e);
  if (!f.results.empty()) report.append_csv(f.results);
  out << j.dump() << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  GradcheckOptions opts;
  opts.seed = seed;
  const GradcheckReport reports[] = {gradcheck_double(opts), gradcheck_single(opts)};
  bool ok = true;
  for (const auto& r : reports) {
    for (const auto& g : r.groups) {
      out << r.precision << ' ' << g.name << ": max rel error " << g.max_rel_error << " over "
          << g.checked << " entries (worst #" << g.worst_index << ": analytic "
          << g.worst_analytic << ", numeric " << g.worst_numeric << ")\n";
    }
    if (!r.passed()) {
      ok = false;
      err << "gradcheck failed (" << r.precision << "): worst group '" << r.worst().name
          << "' max rel error " << r.worst().max_rel_error << " >= " << r.threshold << '\n';
    }
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (seed " << seed << ")\n";
  return ok ? 0 : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Metric grid neural fields: fit, reconstruct and evaluate", "metricgrids"};
  app.require_subcommand(1);

  FitFlags fit_image;
  auto* fi = app.add_subcommand("fit-image", "Fit an RGB image");
  add_fit_flags(fi, fit_image);
  fi->add_option("--image", fit_image.input, "Training image (PNG or PPM)");

  FitFlags fit_sdf;
  auto* fs_cmd = app.add_subcommand("fit-sdf", "Fit an analytic signed distance field");
  add_fit_flags(fs_cmd, fit_sdf);
  fs_cmd->add_option("--shape", fit_sdf.input, "sphere, torus, box or csg");

  ReconstructFlags rec;
  auto* rc = app.add_subcommand("reconstruct", "Render an image checkpoint to PNG");
  rc->add_option("--ckpt", rec.ckpt, "Checkpoint")->required();
  rc->add_option("--out", rec.out, "Output image")->capture_default_str();
  rc->add_option("--width", rec.width, "Output width (default: training width)");
  rc->add_option("--height", rec.height, "Output height (default: training height)");

  EvalImageFlags ei;
  auto* ei_cmd = app.add_subcommand("eval-image", "PSNR and SSIM against a reference");
  ei_cmd->add_option("--ckpt", ei.ckpt, "Image checkpoint");
  ei_cmd->add_option("--pred", ei.pred, "Predicted image file");
  ei_cmd->add_option("--ref", ei.ref, "Reference image (default: the training image)");
  ei_cmd->add_option("--results", ei.results, "Append the metrics row to this CSV");
  ei_cmd->add_option("--error-map", ei.error_map, "Write a grayscale error map PNG");

  EvalSdfFlags es;
  auto* es_cmd = app.add_subcommand("eval-sdf", "IoU and normal angular error");
  es_cmd->add_option("--ckpt", es.ckpt, "SDF checkpoint")->required();
  es_cmd->add_option("--shape", es.shape, "Reference shape (default: the training shape)");
  es_cmd->add_option("--resolution", es.resolution, "IoU lattice resolution")->capture_default_str();
  es_cmd->add_option("--nae-points", es.nae_points, "Surface points for NAE")->capture_default_str();
  es_cmd->add_option("--seed", es.seed, "Seed for NAE surface sampling")->capture_default_str();
  es_cmd->add_option("--results", es.results, "Append the metrics row to this CSV");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
  gc->add_option("--seed", gc_seed, "Seed for the tiny model")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (fi->parsed()) return cmd_fit_image(fit_image, out, err);
    if (fs_cmd->parsed()) return cmd_fit_sdf(fit_sdf, out, err);
    if (rc->parsed()) return cmd_reconstruct(rec, out);
    if (ei_cmd->parsed()) return cmd_eval_image(ei, out);
    if (es_cmd->parsed()) return cmd_eval_sdf(es, out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace metricgrids::cli
