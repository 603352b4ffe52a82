#include "commands.hpp"

#include <CLI11.hpp>

#include <omp.h>

#include <iostream>

namespace {

enum Exit { ok = 0, usage = 1, validation = 2, numerical = 3 };

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string output_dir;
  int threads = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "INI config file");
  cmd->add_option("--set", c.overrides, "Override a config key: section.key=value (repeatable)")
      ->allow_extra_args(false);
  cmd->add_option("-o,--output-dir", c.output_dir, "Output directory (default: $DAP_OUTPUT_DIR or ./dap_out)");
  cmd->add_option("-j,--threads", c.threads, "Worker threads (0: OpenMP default)");
}

dap::cli::RunConfig load(const Common& c) {
  dap::cli::ConfigTable table;
  if (!c.config_file.empty()) table.merge_ini_file(c.config_file);
  for (const auto& o : c.overrides) table.set_override(o);
  if (!c.output_dir.empty()) table.set("run.output_dir", c.output_dir);
  if (c.threads >= 0) table.set("run.threads", std::to_string(c.threads));
  dap::cli::RunConfig cfg = dap::cli::RunConfig::from_table(table);
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset distillation with diffusion sampling guided by a kernel representativeness prior"};
  app.require_subcommand(1);

  Common common;
  auto* distill = app.add_subcommand("distill", "Write one distilled set per (method, ipc, seed)");
  add_common(distill, common);

  dap::cli::EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Train classifiers on distilled sets and report metrics");
  add_common(eval, common);
  eval->add_option("files", eval_opts.files, "Distilled set files");
  eval->add_option("--test", eval_opts.test_path, "Test set (CSV or container); default: the task's test split");
  eval->add_flag("--control", eval_opts.full_train_control, "Also evaluate training on the full train split");

  std::string sweep = "both";
  auto* ablate = app.add_subcommand("ablate", "Sweep gamma and/or t_stop; write CSV and SVG curves");
  add_common(ablate, common);
  ablate->add_option("--sweep", sweep, "gamma, tstop or both")->check(CLI::IsMember({"gamma", "tstop", "both"}));

  std::string set_path, scatter_out;
  auto* scatter = app.add_subcommand("scatter", "Scatter plot of a distilled set over the real data");
  add_common(scatter, common);
  scatter->add_option("file", set_path, "Distilled set file")->required();
  scatter->add_option("--svg", scatter_out, "Output SVG path");

  std::string checkpoint_out;
  auto* train = app.add_subcommand("train-denoiser", "Train the MLP noise predictor for the configured task");
  add_common(train, common);
  train->add_option("--out", checkpoint_out, "Checkpoint path (default: <output-dir>/denoiser.txt)");

  auto* selftest = app.add_subcommand("selftest", "Run the quick property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (*selftest) return dap::cli::cmd_selftest(std::cout) == 0 ? Exit::ok : Exit::validation;
    const dap::cli::RunConfig cfg = load(common);
    if (*distill) dap::cli::cmd_distill(cfg, std::cout);
    if (*eval) dap::cli::cmd_eval(cfg, eval_opts, std::cout);
    if (*ablate) dap::cli::cmd_ablate(cfg, dap::cli::parse_sweep(sweep), std::cout);
    if (*scatter) dap::cli::cmd_scatter(cfg, set_path, scatter_out, std::cout);
    if (*train) dap::cli::cmd_train_denoiser(cfg, checkpoint_out, std::cout);
  } catch (const dap::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return Exit::usage;
  } catch (const dap::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return Exit::numerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::validation;
  }
  return Exit::ok;
}
