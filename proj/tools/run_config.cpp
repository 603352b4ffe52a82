#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dap::cli {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"task.name", "rings-and-blobs"},
      {"task.train_per_class", "2000"},
      {"task.test_per_class", "1000"},
      {"task.data_seed", "7"},
      {"task.digits_csv", "data/digits.csv"},
      {"task.pca_components", "16"},
      {"task.train_path", ""},
      {"task.test_path", ""},
      {"score.backend", "analytic"},
      {"score.checkpoint", ""},
      {"denoiser.steps", "10000"},
      {"denoiser.batch", "512"},
      {"denoiser.lr", "0.05"},
      {"denoiser.momentum", "0.9"},
      {"denoiser.lr_final_fraction", "0.01"},
      {"denoiser.clip_norm", "5"},
      {"denoiser.seed", "1"},
      {"denoiser.val_size", "4096"},
      {"denoiser.hidden", "128,128,128"},
      {"denoiser.time_dim", "32"},
      {"denoiser.activation", "tanh"},
      {"schedule.steps", "1000"},
      {"schedule.beta_start", "1e-4"},
      {"schedule.beta_end", "0.02"},
      {"schedule.rule", "algorithm1"},
      {"guidance.gamma", "0.005"},
      {"guidance.t_stop", "auto"},
      {"guidance.kernel", "linear"},
      {"guidance.feature_map", "identity"},
      {"guidance.projection_seed", "0"},
      {"guidance.reference_batch", "256"},
      {"guidance.frozen_ref_noise", "false"},
      {"guidance.target", "noisy"},
      {"run.ipc", "10"},
      {"run.methods", "dap,unguided,random"},
      {"run.gamma_grid", "0,0.001,0.002,0.005,0.01,0.02,0.05,0.1,0.2"},
      {"run.t_stop_grid", "auto"},
      {"run.seeds", "1,2,3,4,5"},
      {"run.output_dir", ""},
      {"run.threads", "0"},
      {"eval.classifiers", "knn,softmax,mlp"},
      {"eval.seeds", "1,2,3"},
      {"eval.rep_kernel", "linear"},
      {"eval.mmd_kernel", "rbf:1"},
  };
  return table;
}

// Keys that only affect where or how fast things run, not what is produced.
bool excluded_from_hash(const std::string& key) { return key == "run.output_dir" || key == "run.threads"; }

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ValidationError("config " + key + ": expected an integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ValidationError("config " + key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config " + key + ": expected a boolean, got '" + v + "'");
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split(text, ',')) out.push_back(static_cast<int>(to_int(what, item)));
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split(text, ',')) out.push_back(to_double(what, item));
  return out;
}

ConfigTable::ConfigTable() : values_(defaults()) {}

void ConfigTable::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ValidationError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

void ConfigTable::merge_ini(const std::string& text, const std::string& origin) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ValidationError(origin + ": key '" + section + "' outside any [section]");
    for (const auto& [key, value] : body) set(section + "." + key, value.get_value<std::string>());
  }
}

void ConfigTable::merge_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  merge_ini(buf.str(), path);
}

void ConfigTable::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects section.key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& ConfigTable::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

bool ConfigTable::is_default(const std::string& key) const { return !explicit_.count(key); }

std::string ConfigTable::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    if (!excluded_from_hash(k)) out += k + "=" + v + "\n";
  }
  return out;
}

RunConfig RunConfig::from_table(const ConfigTable& t) {
  RunConfig c;
  auto s = [&](const char* k) { return t.get(k); };
  auto i = [&](const char* k) { return to_int(k, t.get(k)); };
  auto d = [&](const char* k) { return to_double(k, t.get(k)); };
  auto positive = [](long long v, const char* k) {
    require(v >= 1, std::string("config ") + k + " must be >= 1");
    return v;
  };

  c.task = s("task.name");
  require(c.task == "rings-and-blobs" || c.task == "digits-pca" || c.task == "csv",
          "config task.name must be rings-and-blobs, digits-pca or csv");
  c.train_per_class = static_cast<std::size_t>(positive(i("task.train_per_class"), "task.train_per_class"));
  c.test_per_class = static_cast<std::size_t>(positive(i("task.test_per_class"), "task.test_per_class"));
  c.data_seed = static_cast<std::uint64_t>(i("task.data_seed"));
  c.digits_csv = s("task.digits_csv");
  c.pca_components = static_cast<int>(positive(i("task.pca_components"), "task.pca_components"));
  c.train_path = s("task.train_path");
  c.test_path = s("task.test_path");
  if (c.task == "csv") require(!c.train_path.empty() && !c.test_path.empty(), "task csv needs task.train_path and task.test_path");

  c.backend = s("score.backend");
  require(c.backend == "analytic" || c.backend == "denoiser", "config score.backend must be analytic or denoiser");
  c.checkpoint = s("score.checkpoint");
  require(c.backend != "analytic" || c.task == "rings-and-blobs",
          "the analytic score backend needs an analytic task (rings-and-blobs)");

  c.train.steps = static_cast<int>(i("denoiser.steps"));
  c.train.batch = static_cast<int>(positive(i("denoiser.batch"), "denoiser.batch"));
  c.train.lr = d("denoiser.lr");
  c.train.momentum = d("denoiser.momentum");
  c.train.lr_final_fraction = d("denoiser.lr_final_fraction");
  c.train.clip_norm = d("denoiser.clip_norm");
  c.train.seed = static_cast<std::uint64_t>(i("denoiser.seed"));
  c.train.val_size = static_cast<int>(positive(i("denoiser.val_size"), "denoiser.val_size"));
  c.train.shape.hidden = parse_int_list(s("denoiser.hidden"), "denoiser.hidden");
  c.train.shape.time_dim = static_cast<int>(positive(i("denoiser.time_dim"), "denoiser.time_dim"));
  c.train.shape.activation = parse_activation(s("denoiser.activation"));
  require(c.train.steps >= 0, "config denoiser.steps must be >= 0");
  require(c.train.lr >= 0.0 && c.train.momentum >= 0.0 && c.train.momentum < 1.0,
          "config denoiser.lr must be >= 0 and momentum in [0,1)");
  require(!c.train.shape.hidden.empty(), "config denoiser.hidden must list at least one layer");
  for (int h : c.train.shape.hidden) require(h >= 1, "config denoiser.hidden widths must be >= 1");

  c.steps = static_cast<int>(i("schedule.steps"));
  c.beta_start = d("schedule.beta_start");
  c.beta_end = d("schedule.beta_end");
  const NoiseSchedule sched = c.schedule();

  c.guidance.gamma = d("guidance.gamma");
  c.guidance.t_stop = s("guidance.t_stop") == "auto" ? c.steps / 10 : static_cast<int>(i("guidance.t_stop"));
  c.guidance.kernel = parse_kernel(s("guidance.kernel"));
  c.guidance.reference_batch = static_cast<int>(i("guidance.reference_batch"));
  c.guidance.frozen_ref_noise = to_bool("guidance.frozen_ref_noise", s("guidance.frozen_ref_noise"));
  c.guidance.target = parse_guidance_target(s("guidance.target"));
  c.guidance.step_rule = parse_step_rule(s("schedule.rule"));
  c.feature_map = s("guidance.feature_map");
  c.projection_seed = static_cast<std::uint64_t>(i("guidance.projection_seed"));
  c.guidance.validate(sched);
  if (c.feature_map.rfind("hidden", 0) == 0) {
    require(c.backend == "denoiser", "feature map " + c.feature_map + " needs score.backend = denoiser");
  } else if (c.feature_map != "identity" && c.feature_map.rfind("projection:", 0) != 0) {
    throw ValidationError("config guidance.feature_map must be identity, projection:<n_out> or hidden:<layer>");
  }

  c.ipc = parse_int_list(s("run.ipc"), "run.ipc");
  require(!c.ipc.empty(), "config run.ipc is empty");
  for (int k : c.ipc) require(k >= 1, "config run.ipc entries must be >= 1");
  c.methods = split(s("run.methods"), ',');
  require(!c.methods.empty(), "config run.methods is empty");
  for (const auto& m : c.methods) {
    require(m == "dap" || m == "unguided" || m == "random", "config run.methods: unknown method '" + m + "'");
  }
  c.gamma_grid = parse_double_list(s("run.gamma_grid"), "run.gamma_grid");
  require(!c.gamma_grid.empty(), "config run.gamma_grid is empty");
  for (double g : c.gamma_grid) require(g >= 0.0 && std::isfinite(g), "config run.gamma_grid entries must be >= 0");
  if (s("run.t_stop_grid") == "auto") {
    c.t_stop_grid = {0, c.steps / 4, c.steps / 2, 3 * c.steps / 4, c.steps};
  } else {
    c.t_stop_grid = parse_int_list(s("run.t_stop_grid"), "run.t_stop_grid");
  }
  require(!c.t_stop_grid.empty(), "config run.t_stop_grid is empty");
  for (int ts : c.t_stop_grid) require(ts >= 0 && ts <= c.steps, "config run.t_stop_grid entries must lie in [0, T]");
  c.seeds.clear();
  for (int v : parse_int_list(s("run.seeds"), "run.seeds")) c.seeds.push_back(static_cast<std::uint64_t>(v));
  require(!c.seeds.empty(), "config run.seeds is empty");
  c.output_dir = s("run.output_dir");
  if (c.output_dir.empty()) {
    const char* env = std::getenv("DAP_OUTPUT_DIR");
    c.output_dir = (env && *env) ? env : "dap_out";
  }
  c.threads = static_cast<int>(i("run.threads"));
  require(c.threads >= 0, "config run.threads must be >= 0");

  c.classifiers.clear();
  for (const auto& name : split(s("eval.classifiers"), ',')) c.classifiers.push_back(parse_classifier(name));
  require(!c.classifiers.empty(), "config eval.classifiers is empty");
  c.eval_seeds.clear();
  for (int v : parse_int_list(s("eval.seeds"), "eval.seeds")) c.eval_seeds.push_back(static_cast<std::uint64_t>(v));
  require(!c.eval_seeds.empty(), "config eval.seeds is empty");
  c.rep_kernel = parse_kernel(s("eval.rep_kernel"));
  c.mmd_kernel = parse_kernel(s("eval.mmd_kernel"));

  c.canonical = t.canonical();
  return c;
}

NoiseSchedule RunConfig::schedule() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }

std::string RunConfig::hash(const std::string& artifact) const {
  std::uint64_t h = fnv1a(canonical);
  if (!artifact.empty()) h = fnv1a("\n#" + artifact, h);
  return hex64(h);
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(canonical);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

Workspace::Workspace(const RunConfig& cfg, bool need_score) : config(cfg), schedule(cfg.schedule()) {
  if (cfg.task == "rings-and-blobs") {
    task = make_rings_and_blobs(cfg.train_per_class, cfg.test_per_class, cfg.data_seed);
  } else if (cfg.task == "digits-pca") {
    task = make_digits_pca(cfg.digits_csv, cfg.pca_components, cfg.data_seed);
  } else {
    task.name = "csv";
    task.train = load_dataset(cfg.train_path, Split::train);
    task.test = load_dataset(cfg.test_path, Split::test);
    require(task.train.dim() == task.test.dim(), "train and test files have different dimensions");
  }
  if (!need_score) return;
  if (cfg.backend == "analytic") {
    score = std::make_unique<AnalyticScore>(*task.spec, schedule);
  } else {
    require(!cfg.checkpoint.empty(), "score.backend = denoiser needs score.checkpoint (see `dap train-denoiser`)");
    denoiser = std::make_unique<DenoiserModel>(DenoiserModel::load(cfg.checkpoint));
    require(denoiser->shape().data_dim == task.train.dim(), "checkpoint data dimension does not match the task");
    require(denoiser->shape().class_labels == task.train.classes, "checkpoint class labels do not match the task");
    score = std::make_unique<DenoiserScore>(*denoiser);
  }
  FeatureMapSpec spec = IdentityMap{};
  if (cfg.feature_map.rfind("projection:", 0) == 0) {
    const int n_out = static_cast<int>(to_int("guidance.feature_map", cfg.feature_map.substr(11)));
    require(n_out >= 1, "projection width must be >= 1");
    spec = make_random_projection(n_out, static_cast<int>(task.train.dim()), cfg.projection_seed);
  } else if (cfg.feature_map.rfind("hidden", 0) == 0) {
    const auto colon = cfg.feature_map.find(':');
    spec = DenoiserHidden{colon == std::string::npos ? 1 : static_cast<int>(to_int("guidance.feature_map",
                                                                                   cfg.feature_map.substr(colon + 1)))};
  }
  config.guidance.feature_map = spec;
  feature_map = FeatureMap(spec, denoiser.get());
  feature_map.check_input_dim(task.train.dim());
}

}  // namespace dap::cli
