#include "commands.hpp"

#include "svg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dap::cli {

using nlohmann::json;
namespace fs = std::filesystem;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ValidationError("write failed for '" + path + "'");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string gamma_label(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", g);
  return buf;
}

std::string hash_line(const RunConfig& cfg, const std::string& artifact) {
  return "# config_hash=" + cfg.hash(artifact) + "\n";
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

GuidanceConfig guidance_with(const RunConfig& cfg, double gamma, int t_stop) {
  GuidanceConfig g = cfg.guidance;
  g.gamma = gamma;
  g.t_stop = t_stop;
  return g;
}

void stamp(DistilledSet& set, const Workspace& ws, const std::string& artifact) {
  set.provenance["config_hash"] = ws.config.hash(artifact);
  set.provenance["run_config"] = ws.config.to_json();
  set.provenance["task"] = ws.task.name;
}

SweepPoint measure(const Workspace& ws, const DistilledSet& set, double gamma, int t_stop, std::uint64_t seed) {
  const RunConfig& cfg = ws.config;
  SweepPoint p;
  p.method = set.method;
  p.gamma = gamma;
  p.t_stop = t_stop;
  p.seed = seed;
  p.seconds = set.wall_seconds;
  p.guided_steps = set.provenance.value("guided_steps_per_trajectory", 0L);
  for (const auto& c : cfg.classifiers) p.accuracy.push_back(train_and_test(c, set, ws.task.test, cfg.eval_seeds).mean);
  for (const auto& r : representativeness_score(set, ws.task.train, cfg.rep_kernel, ws.feature_map)) {
    p.representativeness.push_back(r.score);
  }
  if (set.ipc >= 2) {
    const DiversityMetrics d = diversity_metrics(set, ws.task.train, cfg.mmd_kernel);
    p.cov_trace = d.cov_trace;
    p.mmd2 = d.mmd2;
  }
  return p;
}

std::string sweep_csv(const RunConfig& cfg, const std::vector<SweepPoint>& points, const std::string& artifact,
                      std::size_t classes) {
  std::ostringstream out;
  out << hash_line(cfg, artifact);
  out << "method,gamma,t_stop,seed,ipc";
  for (const auto& c : cfg.classifiers) out << ",acc_" << to_string(c);
  out << ",acc_mean";
  for (std::size_t k = 0; k < classes; ++k) out << ",rep_" << k;
  out << ",rep_mean";
  for (std::size_t k = 0; k < classes; ++k) out << ",cov_trace_" << k;
  out << ",cov_trace_mean,mmd2,guided_steps\n";
  for (const auto& p : points) {
    out << p.method << "," << num(p.gamma) << "," << p.t_stop << "," << p.seed << "," << cfg.ipc.front();
    for (double a : p.accuracy) out << "," << num(a);
    out << "," << num(p.mean_accuracy());
    for (double r : p.representativeness) out << "," << num(r);
    out << "," << num(p.mean_representativeness());
    for (double t : p.cov_trace) out << "," << num(t);
    out << "," << num(p.mean_cov_trace()) << "," << num(p.mmd2) << "," << p.guided_steps << "\n";
  }
  return out.str();
}

}  // namespace

double SweepPoint::mean_accuracy() const { return mean_of(accuracy); }
double SweepPoint::mean_representativeness() const { return mean_of(representativeness); }
double SweepPoint::mean_cov_trace() const { return mean_of(cov_trace); }

// ---------------------------------------------------------------------------

Outputs cmd_distill(const RunConfig& cfg, std::ostream& log) {
  Workspace ws(cfg);
  ensure_dir(cfg.output_dir);
  Outputs outputs;
  std::ostringstream timing;
  timing << "# wall-clock log; not part of any reproducible artifact\nmethod,ipc,seed,seconds,file\n";
  for (int ipc : cfg.ipc) {
    for (std::uint64_t seed : cfg.seeds) {
      for (const std::string& method : cfg.methods) {
        DistilledSet set;
        if (method == "random") {
          const auto start = std::chrono::steady_clock::now();
          set = distill_random(ws.task.train, ipc, seed);
          set.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        } else {
          const GuidanceConfig g =
              method == "unguided" ? guidance_with(ws.config, 0.0, ws.config.guidance.t_stop) : ws.config.guidance;
          set = distill_dap(ws.task.train, g, ws.schedule, *ws.score, ipc, seed);
        }
        const std::string name = method + "_ipc" + std::to_string(ipc) + "_seed" + std::to_string(seed) + ".dset";
        stamp(set, ws, name);
        const std::string path = join_path(cfg.output_dir, name);
        write_container(path, set);
        outputs.push_back(path);
        timing << method << "," << ipc << "," << seed << "," << num(set.wall_seconds) << "," << name << "\n";
        log << "wrote " << path << " (" << set.method << ", " << num(set.wall_seconds) << " s)\n";
      }
    }
  }
  const std::string timing_path = join_path(cfg.output_dir, "distill_timing.log");
  write_file(timing_path, timing.str());
  outputs.push_back(timing_path);
  return outputs;
}

// ---------------------------------------------------------------------------

Outputs cmd_eval(const RunConfig& cfg, const EvalOptions& opts, std::ostream& log) {
  if (opts.files.empty()) throw UsageError("eval: no distilled set files given");
  Workspace ws(cfg, /*need_score=*/false);
  const LabeledDataset test = opts.test_path.empty() ? ws.task.test : load_dataset(opts.test_path, Split::test);
  require(test.dim() == ws.task.train.dim(), "eval: test set dimension does not match the task");
  ensure_dir(cfg.output_dir);

  std::string artifact = "eval";
  std::vector<EvalReport> reports;
  for (const std::string& file : opts.files) {
    const DistilledSet set = read_container(file);
    require(set.dim == ws.task.train.dim(), "eval: " + file + " has dimension " + std::to_string(set.dim) +
                                                " but the task has " + std::to_string(ws.task.train.dim()));
    artifact += "|" + fs::path(file).filename().string() + ":" + hex64(fnv1a(container_bytes(set)));
    EvalReport r = evaluate(set, ws.task.train, test, cfg.classifiers, cfg.eval_seeds, cfg.rep_kernel);
    if (set.ipc >= 2) r.diversity = diversity_metrics(set, ws.task.train, cfg.mmd_kernel);
    r.source = fs::path(file).filename().string();
    log << "evaluated " << file << "\n";
    reports.push_back(std::move(r));
  }
  if (opts.full_train_control) {
    EvalReport r;
    r.source = "full-train";
    r.method = "full-train";
    r.ipc = static_cast<int>(ws.task.train.size() / std::max<std::size_t>(1, ws.task.train.classes.size()));
    for (const auto& c : cfg.classifiers) {
      r.accuracy.emplace_back(to_string(c), train_and_test(c, ws.task.train, test, cfg.eval_seeds));
    }
    artifact += "|control";
    reports.push_back(std::move(r));
  }
  if (!opts.test_path.empty()) artifact += "|test:" + opts.test_path;

  std::optional<NllReport> nll;
  nll = nll_report(ws.task.spec ? &*ws.task.spec : nullptr, ws.task.train, test);

  std::ostringstream metrics, accuracy;
  metrics << hash_line(cfg, artifact + "|metrics");
  accuracy << hash_line(cfg, artifact + "|accuracy");
  write_metrics_csv(metrics, reports);
  write_accuracy_csv(accuracy, reports);
  json j;
  j["config_hash"] = cfg.hash(artifact + "|json");
  j["run_config"] = cfg.to_json();
  j["reports"] = json::array();
  for (const auto& r : reports) j["reports"].push_back(r.to_json());
  j["nll"] = {{"available", nll->available}, {"train", nll->train}, {"test", nll->test}, {"gap", nll->gap},
              {"note", nll->note}};

  Outputs outputs = {join_path(cfg.output_dir, "eval_metrics.csv"), join_path(cfg.output_dir, "eval_accuracy.csv"),
                     join_path(cfg.output_dir, "eval_report.json")};
  write_file(outputs[0], metrics.str());
  write_file(outputs[1], accuracy.str());
  write_file(outputs[2], j.dump(2) + "\n");
  for (const auto& o : outputs) log << "wrote " << o << "\n";
  return outputs;
}

// ---------------------------------------------------------------------------

Sweep parse_sweep(const std::string& s) {
  if (s == "gamma") return Sweep::gamma;
  if (s == "tstop" || s == "t_stop" || s == "t-stop") return Sweep::t_stop;
  if (s == "both") return Sweep::both;
  throw UsageError("unknown sweep '" + s + "' (gamma, tstop, both)");
}

std::vector<SweepPoint> run_gamma_sweep(const Workspace& ws, std::ostream& log) {
  const RunConfig& cfg = ws.config;
  const int ipc = cfg.ipc.front();
  std::vector<SweepPoint> points;
  for (double gamma : cfg.gamma_grid) {
    for (std::uint64_t seed : cfg.seeds) {
      const DistilledSet set =
          distill_dap(ws.task.train, guidance_with(cfg, gamma, cfg.guidance.t_stop), ws.schedule, *ws.score, ipc, seed);
      points.push_back(measure(ws, set, gamma, cfg.guidance.t_stop, seed));
    }
    log << "gamma " << gamma_label(gamma) << " done\n";
  }
  for (std::uint64_t seed : cfg.seeds) {
    points.push_back(measure(ws, distill_random(ws.task.train, ipc, seed), 0.0, 0, seed));
  }
  return points;
}

std::vector<SweepPoint> run_t_stop_sweep(const Workspace& ws, std::ostream& log) {
  const RunConfig& cfg = ws.config;
  const int ipc = cfg.ipc.front();
  std::vector<SweepPoint> points;
  for (int t_stop : cfg.t_stop_grid) {
    for (std::uint64_t seed : cfg.seeds) {
      const DistilledSet set = distill_dap(ws.task.train, guidance_with(cfg, cfg.guidance.gamma, t_stop), ws.schedule,
                                           *ws.score, ipc, seed);
      points.push_back(measure(ws, set, cfg.guidance.gamma, t_stop, seed));
    }
    log << "t_stop " << t_stop << " done\n";
  }
  return points;
}

GammaSummary summarize_gamma(const RunConfig& cfg, const std::vector<SweepPoint>& points) {
  GammaSummary s;
  s.gammas = cfg.gamma_grid;
  const std::size_t nc = cfg.classifiers.size();
  s.random_accuracy.assign(nc, 0.0);
  std::size_t n_random = 0;
  for (const auto& p : points) {
    if (p.method != "random") continue;
    for (std::size_t c = 0; c < nc; ++c) s.random_accuracy[c] += p.accuracy[c];
    ++n_random;
  }
  for (double& a : s.random_accuracy) a /= std::max<std::size_t>(1, n_random);
  double best = -1.0;
  for (double g : s.gammas) {
    std::vector<std::vector<double>> acc(nc);
    std::vector<double> rep, tr;
    for (const auto& p : points) {
      if (p.method == "random" || p.gamma != g) continue;
      for (std::size_t c = 0; c < nc; ++c) acc[c].push_back(p.accuracy[c]);
      rep.push_back(p.mean_representativeness());
      tr.push_back(p.mean_cov_trace());
    }
    std::vector<double> m(nc), sd(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      m[c] = mean_of(acc[c]);
      sd[c] = std_of(acc[c]);
    }
    s.accuracy.push_back(m);
    s.accuracy_std.push_back(sd);
    s.representativeness.push_back(mean_of(rep));
    s.cov_trace.push_back(mean_of(tr));
    if (mean_of(m) > best) {
      best = mean_of(m);
      s.best_gamma = g;
    }
  }
  const auto zero = std::find(s.gammas.begin(), s.gammas.end(), 0.0);
  if (zero != s.gammas.end()) {
    const double base = s.cov_trace[static_cast<std::size_t>(zero - s.gammas.begin())];
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.gammas.size(); ++i) {
      if (s.gammas[i] > 0.0 && s.cov_trace[i] < 0.5 * base && s.gammas[i] < lowest) lowest = s.gammas[i];
    }
    if (std::isfinite(lowest)) s.collapse_gamma = lowest;
  }
  return s;
}

Outputs cmd_ablate(const RunConfig& cfg, Sweep sweep, std::ostream& log) {
  Workspace ws(cfg);
  ensure_dir(cfg.output_dir);
  Outputs outputs;
  const std::size_t classes = ws.task.train.classes.size();
  std::vector<std::string> clf_names;
  for (const auto& c : cfg.classifiers) clf_names.push_back(to_string(c));

  if (sweep == Sweep::gamma || sweep == Sweep::both) {
    const auto points = run_gamma_sweep(ws, log);
    const GammaSummary s = summarize_gamma(cfg, points);
    const std::string csv = join_path(cfg.output_dir, "ablate_gamma.csv");
    write_file(csv, sweep_csv(cfg, points, "ablate_gamma.csv", classes));

    std::vector<std::string> labels;
    for (double g : s.gammas) labels.push_back(gamma_label(g));
    std::vector<Series> acc_series;
    for (std::size_t c = 0; c < clf_names.size(); ++c) {
      Series sr{clf_names[c], {}, {}};
      for (std::size_t i = 0; i < s.gammas.size(); ++i) {
        sr.y.push_back(s.accuracy[i][c]);
        sr.err.push_back(s.accuracy_std[i][c]);
      }
      acc_series.push_back(sr);
    }
    for (std::size_t c = 0; c < clf_names.size(); ++c) {
      acc_series.push_back({clf_names[c] + " (random)", std::vector<double>(s.gammas.size(), s.random_accuracy[c]), {}});
    }
    const std::string svg_acc = join_path(cfg.output_dir, "ablate_gamma.svg");
    write_file(svg_acc, line_chart("Test accuracy vs guidance scale (IPC " + std::to_string(cfg.ipc.front()) + ")",
                                   "gamma", labels, "accuracy", acc_series,
                                   "config_hash=" + cfg.hash("ablate_gamma.svg")));
    const double base_tr = s.cov_trace.empty() ? 1.0 : s.cov_trace.front();
    std::vector<Series> div_series = {{"representativeness", s.representativeness, {}}, {"cov trace / first", {}, {}}};
    for (double t : s.cov_trace) div_series[1].y.push_back(base_tr > 0 ? t / base_tr : 0.0);
    const std::string svg_div = join_path(cfg.output_dir, "ablate_gamma_diversity.svg");
    write_file(svg_div, line_chart("Representativeness and diversity vs guidance scale", "gamma", labels,
                                   "mean over classes and seeds", div_series,
                                   "config_hash=" + cfg.hash("ablate_gamma_diversity.svg")));
    json j;
    j["config_hash"] = cfg.hash("ablate_gamma.json");
    j["gammas"] = s.gammas;
    j["classifiers"] = clf_names;
    j["accuracy_mean"] = s.accuracy;
    j["accuracy_std"] = s.accuracy_std;
    j["random_accuracy"] = s.random_accuracy;
    j["representativeness"] = s.representativeness;
    j["cov_trace"] = s.cov_trace;
    j["collapse_gamma"] = s.collapse_gamma;
    j["best_gamma"] = s.best_gamma;
    const std::string js = join_path(cfg.output_dir, "ablate_gamma.json");
    write_file(js, j.dump(2) + "\n");
    log << "best gamma " << gamma_label(s.best_gamma) << ", collapse threshold "
        << (s.collapse_gamma < 0 ? std::string("none") : gamma_label(s.collapse_gamma)) << "\n";
    outputs.insert(outputs.end(), {csv, svg_acc, svg_div, js});
  }

  if (sweep == Sweep::t_stop || sweep == Sweep::both) {
    const auto points = run_t_stop_sweep(ws, log);
    const std::string csv = join_path(cfg.output_dir, "ablate_tstop.csv");
    write_file(csv, sweep_csv(cfg, points, "ablate_tstop.csv", classes));
    std::ostringstream timing;
    timing << "# wall-clock log; not part of any reproducible artifact\nt_stop,seed,seconds\n";
    for (const auto& p : points) timing << p.t_stop << "," << p.seed << "," << num(p.seconds) << "\n";
    const std::string tlog = join_path(cfg.output_dir, "ablate_tstop_timing.log");
    write_file(tlog, timing.str());

    std::vector<std::string> labels;
    std::vector<Series> series(clf_names.size());
    for (std::size_t c = 0; c < clf_names.size(); ++c) series[c].name = clf_names[c];
    for (int ts : cfg.t_stop_grid) {
      labels.push_back(std::to_string(ts));
      for (std::size_t c = 0; c < clf_names.size(); ++c) {
        std::vector<double> acc;
        for (const auto& p : points) {
          if (p.t_stop == ts) acc.push_back(p.accuracy[c]);
        }
        series[c].y.push_back(mean_of(acc));
        series[c].err.push_back(std_of(acc));
      }
    }
    const std::string svg = join_path(cfg.output_dir, "ablate_tstop.svg");
    write_file(svg, line_chart("Test accuracy vs early-stop step (gamma " + gamma_label(cfg.guidance.gamma) + ")",
                               "t_stop (guidance for t > t_stop)", labels, "accuracy", series,
                               "config_hash=" + cfg.hash("ablate_tstop.svg")));
    outputs.insert(outputs.end(), {csv, tlog, svg});
  }
  for (const auto& o : outputs) log << "wrote " << o << "\n";
  return outputs;
}

// ---------------------------------------------------------------------------

Outputs cmd_scatter(const RunConfig& cfg, const std::string& set_path, const std::string& out_path, std::ostream& log) {
  Workspace ws(cfg, /*need_score=*/false);
  const DistilledSet set = read_container(set_path);
  require(set.dim == ws.task.train.dim(), "scatter: set dimension does not match the task");
  const Eigen::Index d = set.dim;
  require(d >= 2, "scatter: need at least two dimensions");

  Mat basis = Mat::Identity(d, 2);
  Vec center = Vec::Zero(d);
  std::string x_title = "x1", y_title = "x2";
  if (d > 2) {
    const Mat x = ws.task.train.as_matrix();
    center = x.rowwise().mean();
    const Mat centered = x.colwise() - center;
    Eigen::SelfAdjointEigenSolver<Mat> eig(centered * centered.transpose() / static_cast<double>(x.cols() - 1));
    if (eig.info() != Eigen::Success) throw NumericalError("scatter: PCA failed");
    const double total = eig.eigenvalues().sum();
    for (int k = 0; k < 2; ++k) {
      Vec v = eig.eigenvectors().col(d - 1 - k);
      Eigen::Index arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v[arg] < 0) v = -v;
      basis.col(k) = v;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "PC1 (%.1f%% var)", 100.0 * eig.eigenvalues()[d - 1] / total);
    x_title = buf;
    std::snprintf(buf, sizeof buf, "PC2 (%.1f%% var)", 100.0 * eig.eigenvalues()[d - 2] / total);
    y_title = buf;
  }
  auto project = [&](const Vec& v) {
    const Vec p = basis.transpose() * (v - center);
    return std::make_pair(p[0], p[1]);
  };

  std::vector<PointGroup> groups;
  std::vector<std::string> names, colors;
  constexpr std::size_t kMaxRealPerClass = 400;
  for (std::size_t c = 0; c < set.classes.size(); ++c) {
    const int label = set.classes[c];
    PointGroup real{"real " + std::to_string(label), palette(c), 1.6, 0.25, false, {}};
    const VecList cls = ws.task.train.of_class(label);
    const std::size_t stride = std::max<std::size_t>(1, cls.size() / kMaxRealPerClass);
    for (std::size_t i = 0; i < cls.size(); i += stride) real.pts.push_back(project(cls[i]));
    groups.push_back(std::move(real));
    names.push_back("class " + std::to_string(label));
    colors.push_back(palette(c));
  }
  for (std::size_t c = 0; c < set.classes.size(); ++c) {
    PointGroup syn{"distilled " + std::to_string(set.classes[c]), palette(c), 5.0, 1.0, true, {}};
    for (const Vec& v : set.samples[c]) syn.pts.push_back(project(v));
    groups.push_back(std::move(syn));
  }
  const std::string out = out_path.empty()
                              ? join_path(cfg.output_dir, "scatter_" + fs::path(set_path).stem().string() + ".svg")
                              : out_path;
  if (fs::path(out).has_parent_path()) ensure_dir(fs::path(out).parent_path().string());
  const std::string title = set.method + " IPC " + std::to_string(set.ipc) + " on " + ws.task.name +
                            (d > 2 ? " (PCA of train)" : "");
  write_file(out, scatter_plot(title, x_title, y_title, groups, names, colors,
                               "config_hash=" + cfg.hash("scatter|" + hex64(fnv1a(container_bytes(set))))));
  log << "wrote " << out << "\n";
  return {out};
}

// ---------------------------------------------------------------------------

Outputs cmd_train_denoiser(const RunConfig& cfg, const std::string& out_path, std::ostream& log) {
  Workspace ws(cfg, /*need_score=*/false);
  TrainHyper hyper = cfg.train;
  hyper.shape.data_dim = static_cast<int>(ws.task.train.dim());
  hyper.shape.class_labels = ws.task.train.classes;
  TrainReport report;
  const auto start = std::chrono::steady_clock::now();
  const DenoiserModel model = ws.task.spec ? train_denoiser(*ws.task.spec, ws.schedule, hyper, &report)
                                           : train_denoiser(ws.task.train, ws.schedule, hyper, &report);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const std::string path = out_path.empty() ? join_path(cfg.output_dir, "denoiser.txt") : out_path;
  if (fs::path(path).has_parent_path()) ensure_dir(fs::path(path).parent_path().string());
  model.save(path);
  json j;
  j["config_hash"] = cfg.hash("train-denoiser");
  j["checkpoint"] = fs::path(path).filename().string();
  j["steps"] = report.steps;
  j["val_mse"] = report.val_mse;
  if (report.oracle_val_mse >= 0.0) j["oracle_val_mse"] = report.oracle_val_mse;
  j["loss_history"] = report.loss_history;
  write_file(path + ".json", j.dump(2) + "\n");
  log << "trained " << report.steps << " steps in " << num(seconds) << " s, val eps-MSE " << num(report.val_mse);
  if (report.oracle_val_mse >= 0.0) log << " (exact score " << num(report.oracle_val_mse) << ")";
  log << "\nwrote " << path << "\n";
  return {path, path + ".json"};
}

}  // namespace dap::cli
