#include "metricgrids/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "metricgrids/errors.hpp"

namespace metricgrids {

RunConfig RunConfig::defaults(TaskKind kind) {
  RunConfig c;
  c.task.kind = kind;
  if (kind == TaskKind::Image) {
    c.model.param_budget = 207000;
    c.train.steps = 2000;
    c.train.batch_size = std::size_t{1} << 16;
    c.train.loss = LossKind::L2;
  } else {
    c.model.param_budget = 0;
    c.train.steps = 5000;
    c.train.batch_size = std::size_t{1} << 14;
    c.train.loss = LossKind::Mape;
    c.task.sdf = AnalyticSdf::sphere();
  }
  return c;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') ||
                        (v.front() == '\'' && v.back() == '\''))) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

struct KvContext {
  int line = 0;
  std::string key;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("config line " + std::to_string(line) + " (" + key + "): " + why);
  }
};

long parse_long(const std::string& v, const KvContext& ctx) {
  long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) ctx.fail("expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const KvContext& ctx) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) ctx.fail("expected a number, got '" + v + "'");
    return d;
  } catch (const std::logic_error&) {
    ctx.fail("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const KvContext& ctx) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  ctx.fail("expected a boolean, got '" + v + "'");
}

Vec3 parse_vec3(const std::string& v, const KvContext& ctx) {
  std::string s;
  for (char c : v) {
    if (c != '[' && c != ']' && c != '(' && c != ')') s.push_back(c == ',' ? ' ' : c);
  }
  std::istringstream in(s);
  Vec3 out{};
  for (auto& x : out) {
    if (!(in >> x)) ctx.fail("expected three numbers, got '" + v + "'");
  }
  std::string rest;
  if (in >> rest) ctx.fail("expected three numbers, got '" + v + "'");
  return out;
}

std::string format_double(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string format_vec3(const Vec3& v) {
  return format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]);
}

const char* loss_name(LossKind k) { return k == LossKind::L2 ? "l2" : "mape"; }

LossKind parse_loss(const std::string& v) {
  if (v == "l2") return LossKind::L2;
  if (v == "mape") return LossKind::Mape;
  throw ConfigError("unknown loss '" + v + "' (expected l2 or mape)");
}

const char* task_name(TaskKind k) { return k == TaskKind::Image ? "image" : "sdf"; }

TaskKind parse_task(const std::string& v) {
  if (v == "image") return TaskKind::Image;
  if (v == "sdf") return TaskKind::Sdf;
  throw ConfigError("unknown task kind '" + v + "' (expected image or sdf)");
}

SdfShape parse_shape(const std::string& v) {
  return AnalyticSdf::from_name(v).shape;
}

void set_key(RunConfig& c, const std::string& section, const std::string& key,
             const std::string& value, const KvContext& ctx) {
  auto& m = c.model;
  auto& t = c.train;
  auto& k = c.task;
  auto& a = c.ablation;
  const std::string full = section.empty() ? key : section + "." + key;
  auto as_int = [&] { return static_cast<int>(parse_long(value, ctx)); };
  try {
    if (full == "model.metrics") m.metrics = parse_metric_list(value);
    else if (full == "model.levels") m.levels = as_int();
    else if (full == "model.features") m.features = as_int();
    else if (full == "model.base_res") m.base_res = as_int();
    else if (full == "model.max_res") m.max_res = as_int();
    else if (full == "model.log2_table") m.log2_table = as_int();
    else if (full == "model.decoder_layers") m.decoder_layers = as_int();
    else if (full == "model.decoder_hidden") m.decoder_hidden = as_int();
    else if (full == "model.param_budget") m.param_budget = parse_long(value, ctx);
    else if (full == "train.steps") t.steps = parse_long(value, ctx);
    else if (full == "train.batch_size") {
      const long b = parse_long(value, ctx);
      if (b < 1) ctx.fail("batch_size must be >= 1");
      t.batch_size = static_cast<std::size_t>(b);
    }
    else if (full == "train.lr_max") t.lr_max = parse_double(value, ctx);
    else if (full == "train.lr_min") t.lr_min = parse_double(value, ctx);
    else if (full == "train.beta1") t.beta1 = parse_double(value, ctx);
    else if (full == "train.beta2") t.beta2 = parse_double(value, ctx);
    else if (full == "train.eps") t.eps = parse_double(value, ctx);
    else if (full == "train.loss") t.loss = parse_loss(value);
    else if (full == "train.mape_eps") t.mape_eps = parse_double(value, ctx);
    else if (full == "train.seed") t.seed = static_cast<std::uint64_t>(parse_long(value, ctx));
    else if (full == "train.weight_decay") t.weight_decay = parse_double(value, ctx);
    else if (full == "train.grid_lr_scale") t.grid_lr_scale = parse_double(value, ctx);
    else if (full == "train.decoder_lr_scale") t.decoder_lr_scale = parse_double(value, ctx);
    else if (full == "train.threads") t.threads = as_int();
    else if (full == "train.deterministic") t.deterministic = parse_bool(value, ctx);
    else if (full == "train.log_interval") t.log_interval = parse_long(value, ctx);
    else if (full == "task.kind") k.kind = parse_task(value);
    else if (full == "task.image") k.image_path = value;
    else if (full == "task.image_width") k.image_width = as_int();
    else if (full == "task.image_height") k.image_height = as_int();
    else if (full == "task.shape") k.sdf.shape = parse_shape(value);
    else if (full == "task.center") k.sdf.center = parse_vec3(value, ctx);
    else if (full == "task.radius") k.sdf.radius = parse_double(value, ctx);
    else if (full == "task.major_radius") k.sdf.major_radius = parse_double(value, ctx);
    else if (full == "task.minor_radius") k.sdf.minor_radius = parse_double(value, ctx);
    else if (full == "task.half_extents") k.sdf.half_extents = parse_vec3(value, ctx);
    else if (full == "task.near_fraction") k.near_fraction = parse_double(value, ctx);
    else if (full == "task.sigma_near") k.sigma_near = parse_double(value, ctx);
    else if (full == "ablation.baseline") a.baseline_mode = parse_bool(value, ctx);
    else if (full == "ablation.no_hierarchy") a.no_hierarchy = parse_bool(value, ctx);
    else if (full == "ablation.unrestricted_params") a.unrestricted_params = parse_bool(value, ctx);
    else ctx.fail("unknown key");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.starts_with("config line")) throw;
    ctx.fail(msg);
  }
}

}  // namespace

void RunConfig::apply_kv(std::string_view text) {
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  KvContext ctx;
  while (std::getline(in, raw)) {
    ++ctx.line;
    ctx.key.clear();
    std::string line = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') ctx.fail("unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "task" &&
          section != "ablation") {
        ctx.key = section;
        ctx.fail("unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) ctx.fail("expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = unquote(trim(std::string_view(line).substr(eq + 1)));
    // Dotted keys are accepted outside sections: "train.steps = 10".
    std::string sec = section;
    if (const auto dot = key.find('.'); dot != std::string::npos && section.empty()) {
      sec = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    ctx.key = sec.empty() ? key : sec + "." + key;
    set_key(*this, sec, key, value, ctx);
  }
}

std::string RunConfig::to_kv() const {
  std::ostringstream o;
  o << "[model]\n"
    << "metrics = " << format_metric_list(model.metrics) << "\n"
    << "levels = " << model.levels << "\n"
    << "features = " << model.features << "\n"
    << "base_res = " << model.base_res << "\n"
    << "max_res = " << model.max_res << "  # 0 = derive from task\n"
    << "log2_table = " << model.log2_table << "  # 0 = solve from param_budget\n"
    << "decoder_layers = " << model.decoder_layers << "\n"
    << "decoder_hidden = " << model.decoder_hidden << "\n"
    << "param_budget = " << model.param_budget << "  # 0 = no budget\n"
    << "\n[train]\n"
    << "steps = " << train.steps << "\n"
    << "batch_size = " << train.batch_size << "\n"
    << "lr_max = " << format_double(train.lr_max) << "\n"
    << "lr_min = " << format_double(train.lr_min) << "\n"
    << "beta1 = " << format_double(train.beta1) << "\n"
    << "beta2 = " << format_double(train.beta2) << "\n"
    << "eps = " << format_double(train.eps) << "\n"
    << "loss = " << loss_name(train.loss) << "\n"
    << "mape_eps = " << format_double(train.mape_eps) << "\n"
    << "seed = " << train.seed << "\n"
    << "weight_decay = " << format_double(train.weight_decay) << "\n"
    << "grid_lr_scale = " << format_double(train.grid_lr_scale) << "\n"
    << "decoder_lr_scale = " << format_double(train.decoder_lr_scale) << "\n"
    << "threads = " << train.threads << "\n"
    << "deterministic = " << (train.deterministic ? "true" : "false") << "\n"
    << "log_interval = " << train.log_interval << "\n"
    << "\n[task]\n"
    << "kind = " << task_name(task.kind) << "\n"
    << "image = \"" << task.image_path << "\"\n"
    << "image_width = " << task.image_width << "\n"
    << "image_height = " << task.image_height << "\n"
    << "shape = " << task.sdf.name() << "\n"
    << "center = " << format_vec3(task.sdf.center) << "\n"
    << "radius = " << format_double(task.sdf.radius) << "\n"
    << "major_radius = " << format_double(task.sdf.major_radius) << "\n"
    << "minor_radius = " << format_double(task.sdf.minor_radius) << "\n"
    << "half_extents = " << format_vec3(task.sdf.half_extents) << "\n"
    << "near_fraction = " << format_double(task.near_fraction) << "\n"
    << "sigma_near = " << format_double(task.sigma_near) << "\n"
    << "\n[ablation]\n"
    << "baseline = " << (ablation.baseline_mode ? "true" : "false") << "\n"
    << "no_hierarchy = " << (ablation.no_hierarchy ? "true" : "false") << "\n"
    << "unrestricted_params = " << (ablation.unrestricted_params ? "true" : "false")
    << "\n";
  return o.str();
}

std::string RunConfig::to_json() const {
  nlohmann::json j;
  j["model"] = {
      {"metrics", format_metric_list(model.metrics)},
      {"levels", model.levels},
      {"features", model.features},
      {"base_res", model.base_res},
      {"max_res", model.max_res},
      {"log2_table", model.log2_table},
      {"decoder_layers", model.decoder_layers},
      {"decoder_hidden", model.decoder_hidden},
      {"param_budget", model.param_budget},
  };
  j["train"] = {
      {"steps", train.steps},
      {"batch_size", train.batch_size},
      {"lr_max", train.lr_max},
      {"lr_min", train.lr_min},
      {"beta1", train.beta1},
      {"beta2", train.beta2},
      {"eps", train.eps},
      {"loss", loss_name(train.loss)},
      {"mape_eps", train.mape_eps},
      {"seed", train.seed},
      {"weight_decay", train.weight_decay},
      {"grid_lr_scale", train.grid_lr_scale},
      {"decoder_lr_scale", train.decoder_lr_scale},
      {"threads", train.threads},
      {"deterministic", train.deterministic},
      {"log_interval", train.log_interval},
  };
  j["task"] = {
      {"kind", task_name(task.kind)},
      {"image", task.image_path},
      {"image_width", task.image_width},
      {"image_height", task.image_height},
      {"shape", task.sdf.name()},
      {"center", task.sdf.center},
      {"radius", task.sdf.radius},
      {"major_radius", task.sdf.major_radius},
      {"minor_radius", task.sdf.minor_radius},
      {"half_extents", task.sdf.half_extents},
      {"near_fraction", task.near_fraction},
      {"sigma_near", task.sigma_near},
  };
  j["ablation"] = {
      {"baseline", ablation.baseline_mode},
      {"no_hierarchy", ablation.no_hierarchy},
      {"unrestricted_params", ablation.unrestricted_params},
  };
  return j.dump();
}

RunConfig RunConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("embedded config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    const auto& m = j.at("model");
    c.model.metrics = parse_metric_list(m.at("metrics").get<std::string>());
    c.model.levels = m.at("levels").get<int>();
    c.model.features = m.at("features").get<int>();
    c.model.base_res = m.at("base_res").get<int>();
    c.model.max_res = m.at("max_res").get<int>();
    c.model.log2_table = m.at("log2_table").get<int>();
    c.model.decoder_layers = m.at("decoder_layers").get<int>();
    c.model.decoder_hidden = m.at("decoder_hidden").get<int>();
    c.model.param_budget = m.at("param_budget").get<long>();
    const auto& t = j.at("train");
    c.train.steps = t.at("steps").get<long>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.lr_max = t.at("lr_max").get<double>();
    c.train.lr_min = t.at("lr_min").get<double>();
    c.train.beta1 = t.at("beta1").get<double>();
    c.train.beta2 = t.at("beta2").get<double>();
    c.train.eps = t.at("eps").get<double>();
    c.train.loss = parse_loss(t.at("loss").get<std::string>());
    c.train.mape_eps = t.at("mape_eps").get<double>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.grid_lr_scale = t.at("grid_lr_scale").get<double>();
    c.train.decoder_lr_scale = t.at("decoder_lr_scale").get<double>();
    c.train.threads = t.at("threads").get<int>();
    c.train.deterministic = t.at("deterministic").get<bool>();
    c.train.log_interval = t.at("log_interval").get<long>();
    const auto& k = j.at("task");
    c.task.kind = parse_task(k.at("kind").get<std::string>());
    c.task.image_path = k.at("image").get<std::string>();
    c.task.image_width = k.at("image_width").get<int>();
    c.task.image_height = k.at("image_height").get<int>();
    c.task.sdf.shape = parse_shape(k.at("shape").get<std::string>());
    c.task.sdf.center = k.at("center").get<Vec3>();
    c.task.sdf.radius = k.at("radius").get<double>();
    c.task.sdf.major_radius = k.at("major_radius").get<double>();
    c.task.sdf.minor_radius = k.at("minor_radius").get<double>();
    c.task.sdf.half_extents = k.at("half_extents").get<Vec3>();
    c.task.near_fraction = k.at("near_fraction").get<double>();
    c.task.sigma_near = k.at("sigma_near").get<double>();
    const auto& a = j.at("ablation");
    c.ablation.baseline_mode = a.at("baseline").get<bool>();
    c.ablation.no_hierarchy = a.at("no_hierarchy").get<bool>();
    c.ablation.unrestricted_params = a.at("unrestricted_params").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("embedded config is incomplete: ") + e.what());
  }
  c.train.baseline_mode = c.ablation.baseline_mode;
  return c;
}

void RunConfig::validate() const {
  train.validate();
  if (train.steps < 1) throw ConfigError("train.steps must be >= 1");
  if (model.metrics.empty()) throw ConfigError("model.metrics is empty");
  if (model.metrics.front().tag != MetricTag::Linear) {
    throw ConfigError("model.metrics must start with linear");
  }
  if (model.levels < 1 || model.features < 1) {
    throw ConfigError("model.levels and model.features must be >= 1");
  }
  if (model.base_res < 2) throw ConfigError("model.base_res must be >= 2");
  if (model.max_res != 0 && model.max_res < model.base_res) {
    throw ConfigError("model.max_res must be >= base_res");
  }
  if (model.log2_table != 0 &&
      (model.log2_table < GridStructure::kMinLog2Table || model.log2_table > 30)) {
    throw ConfigError("model.log2_table must be 0 or in [4, 30]");
  }
  if (model.decoder_layers < 0 || model.decoder_hidden < 1) {
    throw ConfigError("decoder_layers must be >= 0 and decoder_hidden >= 1");
  }
  if (model.param_budget < 0) throw ConfigError("model.param_budget must be >= 0");
  if (!(task.near_fraction >= 0.0 && task.near_fraction <= 1.0)) {
    throw ConfigError("task.near_fraction must lie in [0,1]");
  }
  if (task.sigma_near < 0.0) throw ConfigError("task.sigma_near must be >= 0");
}

std::size_t count_parameters(const GridStructure& grid, const DecoderShape& decoder) {
  DecoderShape d = decoder;
  d.grids = grid.grid_count();
  d.grid_width = grid.grid_width();
  return grid.parameter_count() + d.parameter_count();
}

ResolvedModel solve_param_budget(GridStructure grid, DecoderShape decoder,
                                 std::size_t budget) {
  if (budget == 0) throw ConfigError("parameter budget must be positive");
  const double lo = 0.95 * double(budget);
  const double hi = 1.05 * double(budget);
  const int max_levels = grid.levels;
  for (int levels = max_levels; levels >= 1; --levels) {
    grid.levels = levels;
    int chosen = 0;
    std::size_t chosen_total = 0;
    for (int lt = GridStructure::kMinLog2Table; lt <= 30; ++lt) {
      grid.log2_table = lt;
      const std::size_t total = count_parameters(grid, decoder);
      if (double(total) <= hi) {
        chosen = lt;
        chosen_total = total;
      } else {
        break;
      }
    }
    if (chosen != 0 && double(chosen_total) >= lo) {
      grid.log2_table = chosen;
      decoder.grids = grid.grid_count();
      decoder.grid_width = grid.grid_width();
      return {grid, decoder, chosen_total};
    }
  }
  throw ConfigError("no table size and level count fit the parameter budget of " +
                    std::to_string(budget) + " within +-5%");
}

ResolvedModel resolve_model(RunConfig& cfg) {
  cfg.validate();
  auto& m = cfg.model;
  if (cfg.ablation.baseline_mode) m.metrics = {MetricKind::linear()};
  cfg.train.baseline_mode = cfg.ablation.baseline_mode;

  if (m.max_res == 0) {
    int native = 256;
    if (cfg.task.kind == TaskKind::Image) {
      if (cfg.task.image_width <= 0 || cfg.task.image_height <= 0) {
        throw ConfigError("image dimensions unknown; cannot derive max_res");
      }
      native = std::max(cfg.task.image_width, cfg.task.image_height);
    }
    // Metric grids run at half the resolution of the single linear grid.
    m.max_res = cfg.ablation.baseline_mode ? native : native / 2;
    m.max_res = std::max(m.max_res, m.base_res);
  }

  GridStructure grid;
  grid.dims = cfg.task.kind == TaskKind::Image ? 2 : 3;
  grid.metrics = m.metrics;
  grid.levels = m.levels;
  grid.features = m.features;
  grid.base_res = m.base_res;
  grid.max_res = m.max_res;
  grid.log2_table = m.log2_table == 0 ? ModelConfig::kDefaultLog2Table : m.log2_table;

  DecoderShape dec;
  dec.hidden = m.decoder_hidden;
  dec.layers = m.decoder_layers;
  dec.outputs = cfg.task.kind == TaskKind::Image ? 3 : 1;
  dec.hierarchy = !cfg.ablation.no_hierarchy;
  dec.grids = grid.grid_count();
  dec.grid_width = grid.grid_width();

  ResolvedModel r;
  if (m.log2_table == 0 && m.param_budget > 0 && !cfg.ablation.unrestricted_params) {
    r = solve_param_budget(grid, dec, static_cast<std::size_t>(m.param_budget));
  } else {
    grid.validate();
    r = {grid, dec, count_parameters(grid, dec)};
  }
  m.levels = r.grid.levels;
  m.log2_table = r.grid.log2_table;
  return r;
}

}  // namespace metricgrids
