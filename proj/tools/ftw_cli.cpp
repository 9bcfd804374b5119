// Command-line front end. Talks to the library only through the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedtwins/fedtwins.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int exit_code;
};

void check(ftw_status status, const char* action) {
  if (status == FTW_OK) return;
  std::fprintf(stderr, "ftw: %s failed: %s\n", action, ftw_last_error());
  throw Failure{status == FTW_ERR_CONFIG ? kExitConfig : kExitRuntime};
}

[[noreturn]] void config_error(const std::string& message) {
  std::fprintf(stderr, "ftw: %s\n", message.c_str());
  throw Failure{kExitConfig};
}

struct SpecOptions {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
};

ftw_spec* open_spec(const SpecOptions& o, const char* kind) {
  if (!o.preset.empty() && !o.config.empty()) config_error("--preset and --config are mutually exclusive");
  ftw_spec* spec = nullptr;
  if (!o.config.empty())
    check(ftw_spec_load(o.config.c_str(), &spec), "loading config");
  else
    check(ftw_spec_preset(o.preset.empty() ? "desk" : o.preset.c_str(), kind ? kind : "tl", &spec), "loading preset");
  // A null kind accepts either suite kind.
  if (kind && std::string(ftw_spec_kind(spec)) != kind) {
    const std::string got = ftw_spec_kind(spec);
    ftw_spec_free(spec);
    config_error("config describes a '" + got + "' suite, expected '" + kind + "'");
  }
  return spec;
}

void progress(size_t done, size_t total, const char* label, double seconds, void* user) {
  if (*static_cast<bool*>(user)) return;
  std::fprintf(stderr, "[%zu/%zu] %s (%.1f s)\n", done, total, label, seconds);
}

int run_suite(const SpecOptions& o, const char* kind, const std::string& out, std::size_t threads, bool quiet) {
  ftw_spec* spec = open_spec(o, kind);
  try {
    if (o.seed) check(ftw_spec_set_seeds(spec, &*o.seed, 1), "setting seed");
    if (!quiet) std::fprintf(stderr, "ftw: %zu runs on %zu thread(s)\n", ftw_spec_run_count(spec), threads);
    ftw_results* results = nullptr;
    check(ftw_suite_run(spec, threads, progress, &quiet, &results), "running suite");
    const ftw_status st = ftw_results_write(results, out.c_str());
    ftw_results_free(results);
    check(st, "writing report");
  } catch (...) {
    ftw_spec_free(spec);
    throw;
  }
  ftw_spec_free(spec);
  std::printf("%s/summary.csv\n", out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Barlow Twins and federated learning experiments on motor-condition signals", "ftw"};
  app.set_version_flag("--version", std::string("ftw ") + ftw_version());
  app.require_subcommand(1);

  SpecOptions spec_opts;
  std::string out;
  std::size_t threads = 1;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "Generate (or import) a dataset file");
  std::string import_csv, import_meta;
  gen->add_option("--preset", spec_opts.preset, "Take data settings from a preset")->check(CLI::IsMember({"paper", "desk"}));
  gen->add_option("--config", spec_opts.config, "Take data settings from a config file")->check(CLI::ExistingFile);
  gen->add_option("--seed", spec_opts.seed, "Data seed");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--import-csv", import_csv, "Import a recording (time,ch1,ch2,ch3) instead of generating");
  gen->add_option("--metadata", import_meta, "Sidecar with condition, regime and sample_rate for --import-csv");

  auto* tl = app.add_subcommand("run-tl", "Run a transfer-learning suite");
  auto* fl = app.add_subcommand("run-fl", "Run a federated suite");
  for (auto* sub : {tl, fl}) {
    sub->add_option("--preset", spec_opts.preset, "Shipped preset")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--config", spec_opts.config, "Config file");
    sub->add_option("--seed", spec_opts.seed, "Run only this seed");
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--threads", threads, "Concurrent runs")->check(CLI::PositiveNumber);
    sub->add_flag("--quiet", quiet, "No progress output");
  }

  auto* probe = app.add_subcommand("probe", "Linear-probe a saved backbone on a dataset file");
  std::string weights, data;
  std::uint64_t probe_seed = 0;
  std::size_t epochs = 75;
  double split = 0.8;
  probe->add_option("--weights", weights, "Weight file")->required()->check(CLI::ExistingFile);
  probe->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  probe->add_option("--seed", probe_seed, "Probe and split seed");
  probe->add_option("--epochs", epochs, "Probe epochs")->check(CLI::PositiveNumber);
  probe->add_option("--split", split, "Training fraction")->check(CLI::Range(0.0, 1.0));
  probe->add_option("--out", out, "Directory for metrics.json and confusion.csv");

  auto* report = app.add_subcommand("report", "Rebuild summary.csv and plot.csv from results.csv");
  std::string results_path;
  report->add_option("--results", results_path, "results.csv")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      std::filesystem::create_directories(out);
      ftw_dataset* ds = nullptr;
      if (!import_csv.empty()) {
        if (import_meta.empty()) config_error("--import-csv needs --metadata");
        check(ftw_dataset_import_csv(import_csv.c_str(), import_meta.c_str(), &ds), "importing CSV");
      } else {
        ftw_spec* spec = open_spec(spec_opts, nullptr);
        double seconds = 0;
        std::uint64_t seed = 0;
        int rate = 0;
        ftw_spec_data_settings(spec, &seconds, &seed, &rate);
        ftw_spec_free(spec);
        if (spec_opts.seed) seed = *spec_opts.seed;
        check(ftw_dataset_generate(seconds, seed, rate, &ds), "generating data");
        check(ftw_profile_write((out + "/profile.txt").c_str()), "writing profile");
      }
      const ftw_status st = ftw_dataset_save(ds, (out + "/dataset.ftds").c_str());
      const std::size_t n = ftw_dataset_size(ds);
      ftw_dataset_free(ds);
      check(st, "saving dataset");
      std::printf("%s/dataset.ftds (%zu windows)\n", out.c_str(), n);
      return kExitOk;
    }
    if (tl->parsed()) return run_suite(spec_opts, "tl", out, threads, quiet);
    if (fl->parsed()) return run_suite(spec_opts, "fl", out, threads, quiet);
    if (probe->parsed()) {
      ftw_model* model = nullptr;
      ftw_dataset* ds = nullptr;
      check(ftw_model_load(weights.c_str(), &model), "loading weights");
      const ftw_status st_ds = ftw_dataset_load(data.c_str(), &ds);
      if (st_ds != FTW_OK) ftw_model_free(model);
      check(st_ds, "loading dataset");
      double accuracy = 0;
      const ftw_status st = ftw_probe_evaluate(model, ds, split, probe_seed, epochs, probe_seed,
                                               out.empty() ? nullptr : out.c_str(), &accuracy);
      ftw_model_free(model);
      ftw_dataset_free(ds);
      check(st, "probing");
      std::printf("accuracy %.4f\n", accuracy);
      return kExitOk;
    }
    if (report->parsed()) {
      check(ftw_report_from_results(results_path.c_str(), out.c_str()), "building report");
      std::printf("%s/summary.csv\n", out.c_str());
      return kExitOk;
    }
  } catch (const Failure& f) {
    return f.exit_code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ftw: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
