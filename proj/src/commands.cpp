// Copyright 2026 The alseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "alseg/commands.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "alseg/binary_io.hpp"
#include "alseg/contrastive.hpp"
#include "alseg/experiment.hpp"
#include "alseg/verify.hpp"
#include "json.hpp"

namespace alseg {

namespace {

void prepare_out_dir(const std::filesystem::path& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
}

Dataset load_data(const std::filesystem::path& data) {
  if (data.empty()) throw ConfigError("--data is required");
  if (!std::filesystem::exists(data / "meta.json")) {
    throw ConfigError("--data " + data.string() + " is not a dataset directory (no meta.json)");
  }
  Dataset ds = load_dataset(data);
  ds.validate();
  return ds;
}

// The network's class count follows the dataset actually loaded.
NetConfig net_for(const RunConfig& config, const Dataset& ds) {
  NetConfig net = config.net;
  net.n_classes = static_cast<std::uint32_t>(ds.n_classes());
  return net;
}

std::string seconds(std::chrono::steady_clock::time_point start) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << "s";
  return os.str();
}

}  // namespace

RunConfig effective_config(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> seed) {
  RunConfig c = path ? load_run_config(*path) : RunConfig{};
  if (seed) c.seed = *seed;
  c.finalize();
  return c;
}

void cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig c = effective_config(o.config, o.seed);
  prepare_out_dir(o.out);
  const Dataset ds = generate_dataset(c.scene, c.n_images, c.seed);
  save_dataset(ds, o.out);
  save_run_config(c, o.out / "config.json");
  const ClassDistribution freq = class_frequencies(ds, ds.train_indices);
  log << "gen-data: " << ds.size() << " images (" << ds.train_indices.size() << " train / " << ds.test_indices.size()
      << " test), seed " << c.seed << ", train class frequencies";
  for (std::size_t k = 0; k < freq.size(); ++k) log << ' ' << ds.class_names[k] << '=' << format_real(freq[k]);
  log << ", " << seconds(start) << '\n';
}

void cmd_pretrain(const PretrainOptions& o, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig c = effective_config(o.config, o.seed);
  const Dataset ds = load_data(o.data);
  prepare_out_dir(o.out);
  PretrainResult r;
  try {
    r = pretrain(ds, net_for(c, ds), c.pretrain, o.threads);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("pretrain: ") + e.what());
  }
  save_checkpoint(r.params, CheckpointKind::kPretrainedEncoderDecoder, o.out / "params.bin");
  std::ostringstream loss;
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss_history.size(); ++e) loss << e << ',' << format_real(r.loss_history[e]) << '\n';
  write_text_file(o.out / "pretrain_loss.csv", loss.str());
  save_run_config(c, o.out / "config.json");
  log << "pretrain: " << c.pretrain.epochs << " epochs, seed " << c.seed;
  if (!r.loss_history.empty()) {
    log << ", loss " << format_real(r.loss_history.front()) << " -> " << format_real(r.loss_history.back());
  }
  log << ", " << seconds(start) << '\n';
}

void cmd_run(const RunOptions& o, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig c = effective_config(o.config, o.seed);
  try {
    if (o.init_mode) c.experiment.init_mode = init_mode_from_string(*o.init_mode);
    if (o.strategy) {
      c.experiment.strategies = {*o.strategy};
      c.experiment.grid = "none";
    }
    c.experiment.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (c.experiment.init_mode == InitMode::kContrastive && !o.init) {
    throw ConfigError("experiment.init_mode is contrastive but no --init checkpoint was given");
  }
  if (c.experiment.init_mode == InitMode::kNone && o.init) {
    throw ConfigError("--init was given but experiment.init_mode is none");
  }
  const Dataset ds = load_data(o.data);
  std::optional<Checkpoint> ckpt;
  if (o.init) {
    if (!std::filesystem::exists(*o.init)) throw ConfigError("--init checkpoint " + o.init->string() + " not found");
    ckpt = load_checkpoint(*o.init);
  }
  RunContext ctx;
  ctx.dataset = &ds;
  ctx.net = net_for(c, ds);
  ctx.train = c.train;
  ctx.pretrained = ckpt ? &ckpt->params : nullptr;
  if (ckpt && ckpt->params.config != ctx.net) {
    throw ConfigError("--init checkpoint network shape does not match the configured network");
  }
  prepare_out_dir(o.out);
  save_run_config(c, o.out / "config.json");
  const ExperimentOutput out = run_experiment(ctx, c.experiment, c.seed, o.out, o.threads);
  log << "run: " << out.runs.size() << " runs, init " << to_string(c.experiment.init_mode) << ", threads "
      << o.threads << ", " << seconds(start) << '\n';
  for (const SummaryRow& row : out.summary) {
    log << "  " << row.strategy << " cycle " << row.cycle << " labels " << row.labels << " mIoU "
        << format_real(row.mean_miou) << " +- " << format_real(row.std_miou) << '\n';
  }
}

void cmd_report(const ReportOptions& o, std::ostream& log) {
  if (o.runs.empty()) throw ConfigError("--runs needs at least one run directory");
  struct Source {
    std::string dir;
    std::vector<SummaryRow> summary;
  };
  std::vector<Source> sources;
  std::vector<std::string> class_names;
  for (const auto& dir : o.runs) {
    const auto curve = dir / "curve.csv";
    if (!std::filesystem::exists(curve)) throw ConfigError("run directory " + dir.string() + " has no curve.csv");
    CurveTable table = read_curve_csv(curve);
    if (sources.empty()) {
      class_names = table.class_names;
    } else if (table.class_names != class_names) {
      throw FormatError(curve.string() + ": class columns differ from the first run", 0);
    }
    sources.push_back({dir.string(), summarize(runs_from_curve(table), class_names.size())});
  }
  prepare_out_dir(o.out);

  std::ostringstream cmp;
  cmp << "run_dir,strategy,init_mode,cycle,labels,mean_miou,std_miou,n_seeds";
  for (const std::string& c : class_names) cmp << ",mean_iou_" << c;
  cmp << '\n';
  std::ostringstream curves;
  curves << "series,strategy,init_mode,labels,mean_miou,std_miou,lower,upper\n";
  for (const Source& s : sources) {
    for (const SummaryRow& row : s.summary) {
      cmp << s.dir << ',' << row.strategy << ',' << row.init_mode << ',' << row.cycle << ',' << row.labels << ','
          << format_real(row.mean_miou) << ',' << format_real(row.std_miou) << ',' << row.n_seeds;
      for (double v : row.mean_iou) cmp << ',' << format_real(v);
      cmp << '\n';
      curves << row.init_mode << '_' << row.strategy << ',' << row.strategy << ',' << row.init_mode << ','
             << row.labels << ',' << format_real(row.mean_miou) << ',' << format_real(row.std_miou) << ','
             << format_real(row.mean_miou - row.std_miou) << ',' << format_real(row.mean_miou + row.std_miou)
             << '\n';
    }
  }
  write_text_file(o.out / "comparison.csv", cmp.str());
  write_text_file(o.out / "learning_curves.csv", curves.str());
  log << "report: merged " << sources.size() << " run directories into " << o.out.string() << '\n';
}

bool cmd_selftest(const std::optional<std::filesystem::path>& scratch, std::ostream& log) {
  std::filesystem::path dir;
  if (scratch) {
    dir = *scratch;
  } else {
    std::random_device rd;
    dir = std::filesystem::temp_directory_path() / ("alseg-selftest-" + std::to_string(rd()));
  }
  const std::vector<CheckResult> results = selftest(dir);
  if (!scratch) std::filesystem::remove_all(dir);
  bool all = true;
  for (const CheckResult& r : results) {
    log << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << format_real(r.seconds) << "s): " << r.detail << '\n';
    all = all && r.passed;
  }
  log << (all ? "selftest: all checks passed\n" : "selftest: FAILED\n");
  return all;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

namespace {

std::string error_line(const std::string& type, int code, const std::string& message) {
  return nlohmann::json{{"error", type}, {"exit_code", code}, {"message", message}}.dump();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"alseg: rareness-aware active learning for segmentation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenDataOptions gen;
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic dataset");
  g->add_option("--config", gen_config, "run configuration JSON");
  g->add_option("--out", gen_out, "output dataset directory")->required();
  auto* g_seed = g->add_option("--seed", gen_seed, "override the config seed");

  PretrainOptions pre;
  std::string pre_config, pre_data, pre_out;
  std::uint64_t pre_seed = 0;
  auto* p = app.add_subcommand("pretrain", "contrastive pretraining on the training split");
  p->add_option("--config", pre_config, "run configuration JSON");
  p->add_option("--data", pre_data, "dataset directory")->required();
  p->add_option("--out", pre_out, "output directory")->required();
  auto* p_seed = p->add_option("--seed", pre_seed, "override the config seed");
  p->add_option("--threads", pre.threads, "worker threads")->check(CLI::Range(1, 1024));

  RunOptions run;
  std::string run_config, run_data, run_init, run_out, run_mode, run_strategy;
  std::uint64_t run_seed = 0;
  auto* r = app.add_subcommand("run", "active-learning experiment");
  r->add_option("--config", run_config, "run configuration JSON");
  r->add_option("--data", run_data, "dataset directory")->required();
  auto* r_init = r->add_option("--init", run_init, "pretrained checkpoint (init_mode=contrastive)");
  r->add_option("--out", run_out, "output directory")->required();
  auto* r_seed = r->add_option("--seed", run_seed, "override the config seed");
  auto* r_mode = r->add_option("--init-mode", run_mode, "override experiment.init_mode (none|contrastive)");
  auto* r_strategy = r->add_option("--strategy", run_strategy, "run a single strategy instead of the configured list");
  r->add_option("--threads", run.threads, "worker threads; results do not depend on it")->check(CLI::Range(1, 1024));

  ReportOptions rep;
  std::vector<std::string> rep_runs;
  std::string rep_out;
  auto* rp = app.add_subcommand("report", "merge run directories into plot-ready CSV");
  rp->add_option("--runs", rep_runs, "run directories")->required();
  rp->add_option("--out", rep_out, "output directory")->required();

  std::string scratch;
  auto* st = app.add_subcommand("selftest", "gradient checks, selection oracles and format round trips");
  auto* st_scratch = st->add_option("--out", scratch, "keep scratch files here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("UsageError", 2, e.what()) << '\n';
    return 2;
  }

  const auto opt_path = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };
  try {
    if (g->parsed()) {
      gen.config = opt_path(gen_config);
      gen.out = gen_out;
      if (*g_seed) gen.seed = gen_seed;
      cmd_gen_data(gen, out);
    } else if (p->parsed()) {
      pre.config = opt_path(pre_config);
      pre.data = pre_data;
      pre.out = pre_out;
      if (*p_seed) pre.seed = pre_seed;
      cmd_pretrain(pre, out);
    } else if (r->parsed()) {
      run.config = opt_path(run_config);
      run.data = run_data;
      if (*r_init) run.init = run_init;
      run.out = run_out;
      if (*r_seed) run.seed = run_seed;
      if (*r_mode) run.init_mode = run_mode;
      if (*r_strategy) run.strategy = run_strategy;
      cmd_run(run, out);
    } else if (rp->parsed()) {
      for (const auto& d : rep_runs) rep.runs.emplace_back(d);
      rep.out = rep_out;
      cmd_report(rep, out);
    } else if (st->parsed()) {
      return cmd_selftest(*st_scratch ? opt_path(scratch) : std::nullopt, out) ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << error_line("ConfigError", 2, e.what()) << '\n';
    return 2;
  } catch (const ArgumentError& e) {
    err << error_line("ArgumentError", 2, e.what()) << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << error_line("FormatError", 1, e.what()) << '\n';
    return 1;
  } catch (const ValidationError& e) {
    err << error_line("ValidationError", 1, e.what()) << '\n';
    return 1;
  } catch (const IoError& e) {
    err << error_line("IoError", 1, e.what()) << '\n';
    return 1;
  } catch (const GenerationError& e) {
    err << error_line("GenerationError", 1, e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << error_line("RuntimeError", 1, e.what()) << '\n';
    return 1;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("alseg");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace alseg
