// Copyright 2026 The kdlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// kdlab: command-line entry point.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration
// error. Failures print one line to stderr: `error: <category>: <message>`.

#include <CLI11.hpp>

#include <iostream>

#include "kdlab/data/fetch.hpp"
#include "kdlab/data/synthetic.hpp"
#include "kdlab/runner/execute.hpp"
#include "kdlab/runner/report.hpp"

namespace {

using namespace kdlab;
namespace fs = std::filesystem;

class UsageError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "usage"; }
};

int exit_code(const Error& e) {
  const std::string_view c = e.category();
  if (c == "usage") return 2;
  if (c == "config" || c == "domain") return 3;
  return 1;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<double> scale;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.path, "configuration file");
  cmd->add_option("--set", a.overrides, "dotted key=value override (repeatable)")->take_all()->allow_extra_args(false);
  cmd->add_option("--scale", a.scale, "shorthand for --set train.dataset_scale=<x>");
}

/// Loads, overrides and resolves. A missing --config or file is a usage error.
config::ExperimentConfig load_config(const ConfigArgs& a, bool validate_method, config::KeyValues* resolved_kv = nullptr) {
  if (a.path.empty()) throw UsageError("--config is required");
  if (!fs::exists(a.path)) throw UsageError("config file not found: " + a.path);
  config::KeyValues kv = config::load_file(a.path);
  for (const auto& o : a.overrides) config::apply_override(kv, o);
  if (a.scale) kv["train.dataset_scale"] = config::format_number(*a.scale);
  config::ExperimentConfig c = config::resolve(kv, validate_method);
  if (resolved_kv) *resolved_kv = config::to_key_values(c);
  return c;
}

void print_resolved(const config::ExperimentConfig& c) { std::cout << config::to_text(config::to_key_values(c)); }

/// Runs of a config: its sweep grid, or the single run it describes.
std::vector<runner::RunConfig> grid_of(const config::ExperimentConfig& c) {
  if (c.sweep.empty()) {
    c.method.validate();
    return {{c, runner::fingerprint(c), c.train.seed}};
  }
  return runner::expand_grid(c);
}

int cmd_fetch(const fs::path& data_dir, const std::optional<std::string>& cifar_archive,
              const std::optional<std::string>& stl_archive, bool synthetic, std::size_t synthetic_train, bool skip_stl,
              std::uint64_t seed, bool dry_run) {
  if (dry_run) {
    std::cout << "data_dir = " << data_dir.string() << "\n";
    if (synthetic) {
      std::cout << "synthetic = true\nsynthetic.train = " << synthetic_train << "\nsynthetic.seed = " << seed << "\n";
    } else {
      std::cout << "cifar10 = " << (cifar_archive ? *cifar_archive : data::kCifarArchive.url) << "\n";
      if (!skip_stl) std::cout << "stl10 = " << (stl_archive ? *stl_archive : data::kStlArchive.url) << "\n";
    }
    return 0;
  }
  if (synthetic) {
    data::SyntheticSizes sizes;
    sizes.train = synthetic_train;
    sizes.test = std::max<std::size_t>(synthetic_train / 5, 10);
    sizes.stl = skip_stl ? 0 : synthetic_train / 5;
    data::write_synthetic_dataset(data_dir, sizes, seed);
    log_line("wrote synthetic stand-in data to " + data_dir.string() + " (not CIFAR-10)");
    return 0;
  }
  curl_global_init(CURL_GLOBAL_DEFAULT);
  auto opt_path = [](const std::optional<std::string>& s) { return s ? std::optional<fs::path>(*s) : std::nullopt; };
  log_line("fetching CIFAR-10 into " + data_dir.string());
  data::fetch_archive(data::kCifarArchive, data_dir, opt_path(cifar_archive));
  if (!skip_stl) {
    log_line("fetching STL-10 into " + data_dir.string());
    data::fetch_archive(data::kStlArchive, data_dir, opt_path(stl_archive));
  }
  if (fs::exists(data_dir / "SYNTHETIC")) fs::remove(data_dir / "SYNTHETIC");
  log_line("done");
  return 0;
}

int cmd_train_teacher(const ConfigArgs& a, const fs::path& data_dir, bool force, bool dry_run) {
  const config::ExperimentConfig c = load_config(a, false);
  // Every (architecture, seed) that some run of the config reads by default.
  std::vector<std::pair<config::ExperimentConfig, std::size_t>> needed;
  std::set<std::string> seen;
  for (const auto& rc : grid_of(c)) {
    if (!rc.config.teacher_checkpoints.empty()) continue;
    for (std::size_t i = 0; i < rc.config.method.teacher_specs.size(); ++i) {
      const fs::path p = config::default_teacher_checkpoint(rc.config, i);
      if (seen.insert(p.string()).second) needed.emplace_back(rc.config, i);
    }
  }
  if (needed.empty()) throw ConfigError("the configuration names no teachers to train");
  if (dry_run) {
    print_resolved(c);
    for (const auto& [cfg, i] : needed)
      std::cout << "# teacher " << cfg.method.teacher_specs[i].name() << " seed " << cfg.teacher_seed + i << " -> "
                << config::default_teacher_checkpoint(cfg, i).string() << "\n";
    return 0;
  }
  runner::DataCache cache(data_dir);
  for (const auto& [cfg, i] : needed) {
    const fs::path ckpt = config::default_teacher_checkpoint(cfg, i);
    if (fs::exists(ckpt) && !force) {
      log_line("exists, skipping: " + ckpt.string());
      continue;
    }
    const std::string tag = "[" + cfg.method.teacher_specs[i].name() + " s" + std::to_string(cfg.teacher_seed + i) + "] ";
    const auto r = runner::execute_teacher(cfg, i, cache, [&](const std::string& s) { log_line(tag + s); });
    std::cout << cfg.method.teacher_specs[i].name() << " seed " << cfg.teacher_seed + i << " best_val_acc "
              << r.best_val_accuracy << " -> " << ckpt.string() << "\n";
  }
  return 0;
}

int cmd_sweep(const ConfigArgs& a, const fs::path& data_dir, std::optional<std::size_t> parallelism, bool force,
              bool dry_run, bool single) {
  const config::ExperimentConfig c = load_config(a, single);
  if (single && !c.sweep.empty()) throw ConfigError("the configuration defines sweep axes; use `kdlab sweep`");
  const auto grid = grid_of(c);
  const runner::ResultsStore store(c.output_dir);
  if (dry_run) {
    print_resolved(c);
    std::size_t pending = 0;
    for (const auto& rc : grid) pending += force || !store.contains(rc.id());
    std::cout << "# " << grid.size() << " runs scheduled (" << pending << " without a record)\n";
    for (const auto& rc : grid) {
      const auto keys = runner::group_keys(rc.config);
      std::cout << "# " << rc.id() << " method=" << keys.at("method") << " teacher=" << keys.at("teacher")
                << " alpha=" << keys.at("alpha") << " temperature=" << keys.at("temperature") << "\n";
    }
    return 0;
  }
  runner::DataCache cache(data_dir);
  runner::SweepOptions options;
  options.parallelism = parallelism.value_or(c.sweep.parallelism);
  options.force = force;
  options.environment = runner::environment_note(cache, c.train.device);
  options.log = log_line;
  const bool verbose = options.parallelism == 1;
  const auto records = runner::run_sweep(
      grid, store,
      [&](const runner::RunConfig& rc, const fs::path& dir) {
        std::function<void(const std::string&)> log;
        if (verbose) log = [id = rc.id()](const std::string& s) { log_line("[" + id + "] " + s); };
        return runner::execute_run(rc.config, dir, cache, log);
      },
      options);
  std::size_t failed = 0;
  for (const auto& r : records) {
    failed += !r.ok();
    std::cout << r.id() << " " << r.status << " best_val_acc " << r.best_val_accuracy << "\n";
  }
  std::cout << records.size() << " runs executed, " << grid.size() - records.size() << " skipped, " << failed
            << " failed\n";
  return failed ? 1 : 0;
}

int cmd_report(const std::string& runs, const std::string& layout_name, const std::string& format_name,
               const std::vector<std::string>& group_by, const std::optional<std::string>& curves,
               const std::optional<std::string>& teachers_dir, const std::optional<std::string>& out, bool dry_run) {
  const runner::Layout layout = runner::parse_layout(layout_name);
  const runner::Format format = runner::parse_format(format_name);
  const std::vector<std::string> axes = group_by.empty() ? runner::layout_axes(layout) : group_by;
  const fs::path teachers = teachers_dir ? fs::path(*teachers_dir) : fs::path(runs) / "teachers";
  if (dry_run) {
    std::cout << "runs = " << runs << "\nlayout = " << layout_name << "\nformat = " << format_name << "\ngroup_by = ";
    for (std::size_t i = 0; i < axes.size(); ++i) std::cout << (i ? "," : "") << axes[i];
    std::cout << "\nteachers = " << teachers.string() << "\n";
    if (curves) std::cout << "curves = " << *curves << "\n";
    return 0;
  }
  const runner::ResultsStore store(runs);
  const auto records = store.load();
  for (const auto& id : store.incomplete()) log_line("warning: incomplete run " + id + " (rerun the sweep to finish it)");
  if (records.empty()) throw ConfigError("no records found under " + store.records_dir().string());
  runner::TableContext ctx;
  ctx.teacher_accuracy = runner::teacher_accuracies(teachers);
  const std::string table = runner::emit_table(runner::aggregate(records, axes), layout, format, ctx);
  if (out) {
    train::detail::write_file_atomic(*out, table);
  } else {
    std::cout << table;
  }
  if (curves) {
    const auto files = runner::emit_curves(records, *curves);
    log_line("wrote " + std::to_string(files.size()) + " curve files to " + *curves);
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, const ConfigArgs& a, const fs::path& data_dir, bool dry_run) {
  double scale = a.scale.value_or(1.0);
  if (!a.path.empty()) scale = load_config(a, false).train.dataset_scale;
  if (!(scale > 0 && scale <= 1)) throw ConfigError("--scale must lie in (0, 1]");
  if (dry_run) {
    std::cout << "checkpoint = " << checkpoint << "\ndata_dir = " << data_dir.string() << "\nscale = "
              << config::format_number(scale) << "\n";
    return 0;
  }
  Model<float> model = train::load_model(checkpoint);
  const data::ImageDataset val =
      data::scaled_subset(data::load_cifar10(data_dir, data::Split::test), scale, runner::kSubsetSeed);
  const double acc = train::evaluate(model, val);
  std::cout << model.spec().name() << " val_acc " << config::format_number(acc) << " on " << val.size() << " images\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"kdlab: knowledge-distillation experiments on CIFAR-scale residual networks"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string data_dir_arg;
  bool dry_run = false;
  app.add_option("--data-dir", data_dir_arg, "dataset root (default: $KDLAB_DATA_DIR or ./data)");
  app.add_flag("--dry-run", dry_run, "print the resolved configuration and exit without writing anything");

  auto* fetch = app.add_subcommand("fetch-data", "download and verify CIFAR-10 / STL-10, or write synthetic stand-ins");
  std::optional<std::string> cifar_archive, stl_archive;
  bool synthetic = false, skip_stl = false;
  std::size_t synthetic_train = 10000;
  std::uint64_t synthetic_seed = 0;
  fetch->add_option("--cifar-archive", cifar_archive, "local cifar-10-binary.tar.gz instead of downloading");
  fetch->add_option("--stl-archive", stl_archive, "local stl10_binary.tar.gz instead of downloading");
  fetch->add_flag("--skip-stl", skip_stl, "CIFAR-10 only");
  fetch->add_flag("--synthetic", synthetic, "write procedurally generated stand-in data (offline testing)");
  fetch->add_option("--synthetic-train", synthetic_train, "synthetic training images");
  fetch->add_option("--seed", synthetic_seed, "synthetic data seed");

  ConfigArgs teacher_args, distill_args, sweep_args, eval_args;
  bool force = false;
  auto* teacher = app.add_subcommand("train-teacher", "train the teacher checkpoints a configuration refers to");
  add_config_args(teacher, teacher_args);
  teacher->add_flag("--force", force, "retrain existing checkpoints");

  auto* distill = app.add_subcommand("distill", "run the single experiment a configuration describes");
  add_config_args(distill, distill_args);
  distill->add_flag("--force", force, "rerun even if a record exists");

  auto* sweep = app.add_subcommand("sweep", "run every configuration of a sweep grid");
  add_config_args(sweep, sweep_args);
  std::optional<std::size_t> parallelism;
  sweep->add_option("--parallelism", parallelism, "concurrent runs (default: sweep.parallelism)");
  sweep->add_flag("--force", force, "rerun configurations that already have a record");

  auto* report = app.add_subcommand("report", "aggregate records into a comparison table");
  std::string runs, layout = "method_compare", format = "markdown";
  std::vector<std::string> group_by;
  std::optional<std::string> curves, teachers_dir, out;
  report->add_option("--runs", runs, "results root (the config's output.dir)")->required();
  report->add_option("--layout", layout, "alpha_by_temp | teacher_compare | method_compare");
  report->add_option("--format", format, "markdown | csv");
  report->add_option("--group-by", group_by, "axes to group by (default: the layout's)")->delimiter(',');
  report->add_option("--curves", curves, "also write per-run learning curves to this directory");
  report->add_option("--teachers", teachers_dir, "teacher run directories (default: <runs>/teachers)");
  report->add_option("--out", out, "write the table to a file instead of stdout");

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on the CIFAR-10 test split");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  add_config_args(eval, eval_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }
  const fs::path data_dir = data_dir_arg.empty() ? data::default_data_dir() : fs::path(data_dir_arg);

  if (*fetch) return cmd_fetch(data_dir, cifar_archive, stl_archive, synthetic, synthetic_train, skip_stl, synthetic_seed, dry_run);
  if (*teacher) return cmd_train_teacher(teacher_args, data_dir, force, dry_run);
  if (*distill) return cmd_sweep(distill_args, data_dir, 1, force, dry_run, true);
  if (*sweep) return cmd_sweep(sweep_args, data_dir, parallelism, force, dry_run, false);
  if (*report) return cmd_report(runs, layout, format, group_by, curves, teachers_dir, out, dry_run);
  if (*eval) return cmd_eval(checkpoint, eval_args, data_dir, dry_run);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const kdlab::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
}
