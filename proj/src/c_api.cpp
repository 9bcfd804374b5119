#include "fedtwins/fedtwins.h"

#include <filesystem>
#include <fstream>
#include <new>
#include <string>

#include "fedtwins/data.hpp"
#include "fedtwins/error.hpp"
#include "fedtwins/evaluation.hpp"
#include "fedtwins/experiments.hpp"
#include "fedtwins/models.hpp"

struct ftw_dataset {
  fedtwins::WindowDataset ds;
};
struct ftw_model {
  fedtwins::ModelState state;
};
struct ftw_spec {
  fedtwins::ExperimentSpec spec;
};
struct ftw_results {
  fedtwins::SuiteResult suite;
  std::vector<fedtwins::ResultRow> rows;
  std::vector<std::string> methods;
};

namespace {

thread_local std::string last_error;

ftw_status set_error(ftw_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
ftw_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return FTW_OK;
  } catch (const fedtwins::Error& e) {
    return set_error(static_cast<ftw_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(FTW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(FTW_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(FTW_ERR_INTERNAL, "unknown error");
  }
}

#define FTW_REQUIRE_ARG(cond, what)                                          \
  do {                                                                       \
    if (!(cond)) return set_error(FTW_ERR_INVALID_ARGUMENT, (what));         \
  } while (0)

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fedtwins::fail(fedtwins::ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
}

}  // namespace

extern "C" {

const char* ftw_version(void) { return FEDTWINS_VERSION; }

const char* ftw_status_name(ftw_status status) {
  switch (status) {
    case FTW_OK: return "ok";
    case FTW_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case FTW_ERR_INTERNAL: return "internal";
    default:
      if (status >= FTW_ERR_DIMENSION && status <= FTW_ERR_IO)
        return fedtwins::error_code_name(static_cast<fedtwins::ErrorCode>(status));
      return "unknown";
  }
}

const char* ftw_last_error(void) { return last_error.c_str(); }

ftw_status ftw_dataset_generate(double seconds, uint64_t seed, int sample_rate, ftw_dataset** out) {
  FTW_REQUIRE_ARG(out, "out is null");
  return guarded([&] {
    auto ds = fedtwins::generate_dataset(fedtwins::SyntheticProfile::default_profile(), seconds, seed, sample_rate);
    *out = new ftw_dataset{std::move(ds)};
  });
}

ftw_status ftw_dataset_load(const char* path, ftw_dataset** out) {
  FTW_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] { *out = new ftw_dataset{fedtwins::load_dataset(path)}; });
}

ftw_status ftw_dataset_import_csv(const char* csv_path, const char* metadata_path, ftw_dataset** out) {
  FTW_REQUIRE_ARG(csv_path && metadata_path && out, "null argument");
  return guarded([&] { *out = new ftw_dataset{fedtwins::import_csv(csv_path, metadata_path)}; });
}

ftw_status ftw_dataset_save(const ftw_dataset* ds, const char* path) {
  FTW_REQUIRE_ARG(ds && path, "dataset or path is null");
  return guarded([&] { fedtwins::save_dataset(ds->ds, path); });
}

size_t ftw_dataset_size(const ftw_dataset* ds) { return ds ? ds->ds.size() : 0; }

ftw_status ftw_dataset_label(const ftw_dataset* ds, size_t i, int* condition, int* regime) {
  FTW_REQUIRE_ARG(ds, "dataset is null");
  if (i >= ds->ds.size()) return set_error(FTW_ERR_RANGE, "window index out of range");
  if (condition) *condition = static_cast<int>(fedtwins::code(ds->ds.labels[i]));
  if (regime) *regime = static_cast<int>(fedtwins::code(ds->ds.regimes[i]));
  last_error.clear();
  return FTW_OK;
}

void ftw_dataset_free(ftw_dataset* ds) { delete ds; }

ftw_status ftw_profile_write(const char* path) {
  FTW_REQUIRE_ARG(path, "path is null");
  return guarded([&] { write_text(path, fedtwins::SyntheticProfile::default_profile().describe()); });
}

ftw_status ftw_model_init_backbone(uint64_t seed, ftw_model** out) {
  FTW_REQUIRE_ARG(out, "out is null");
  return guarded([&] { *out = new ftw_model{fedtwins::init_weights(fedtwins::BackboneConfig{}, seed)}; });
}

ftw_status ftw_model_load(const char* path, ftw_model** out) {
  FTW_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] { *out = new ftw_model{fedtwins::load_state(path)}; });
}

ftw_status ftw_model_save(const ftw_model* model, const char* path) {
  FTW_REQUIRE_ARG(model && path, "model or path is null");
  return guarded([&] { fedtwins::save_state(model->state, path); });
}

size_t ftw_model_parameter_count(const ftw_model* model) { return model ? model->state.parameter_count() : 0; }

uint64_t ftw_model_checksum(const ftw_model* model) { return model ? model->state.checksum() : 0; }

void ftw_model_free(ftw_model* model) { delete model; }

ftw_status ftw_probe_evaluate(const ftw_model* backbone, const ftw_dataset* ds, double split_fraction,
                              uint64_t split_seed, size_t epochs, uint64_t seed, const char* out_dir,
                              double* accuracy) {
  FTW_REQUIRE_ARG(backbone && ds, "model or dataset is null");
  return guarded([&] {
    using namespace fedtwins;
    const ModelState bb = backbone->state.subset("backbone.");
    require(!bb.empty(), ErrorCode::Contract, "model has no backbone entries");
    const auto [train, test] = train_test_split(ds->ds, split_fraction, split_seed);
    const BackboneConfig config;
    ProbeConfig pc;
    pc.epochs = epochs;
    const ModelState probe = train_linear_probe(extract_features(bb, config, train), train.label_codes(), pc, seed);
    const Evaluation ev = evaluate(probe, extract_features(bb, config, test), test.label_codes());
    if (out_dir) {
      std::error_code ec;
      std::filesystem::create_directories(out_dir, ec);
      if (ec) fail(ErrorCode::Io, std::string("cannot create directory '") + out_dir + "'");
      write_text(std::filesystem::path(out_dir) / "metrics.json", metrics_json("probe", seed, "all", ev) + "\n");
      write_text(std::filesystem::path(out_dir) / "confusion.csv", confusion_csv(ev.confusion));
    }
    if (accuracy) *accuracy = ev.accuracy;
  });
}

ftw_status ftw_spec_preset(const char* preset, const char* kind, ftw_spec** out) {
  FTW_REQUIRE_ARG(preset && kind && out, "null argument");
  const std::string k(kind);
  if (k != "tl" && k != "fl") return set_error(FTW_ERR_CONFIG, "kind must be tl or fl, got '" + k + "'");
  return guarded([&] {
    *out = new ftw_spec{fedtwins::preset_spec(
        preset, k == "tl" ? fedtwins::ExperimentKind::TransferLearning : fedtwins::ExperimentKind::Federated)};
  });
}

ftw_status ftw_spec_load(const char* path, ftw_spec** out) {
  FTW_REQUIRE_ARG(path && out, "path or out is null");
  return guarded([&] { *out = new ftw_spec{fedtwins::load_spec(path)}; });
}

ftw_status ftw_spec_parse(const char* text, ftw_spec** out) {
  FTW_REQUIRE_ARG(text && out, "text or out is null");
  return guarded([&] { *out = new ftw_spec{fedtwins::parse_spec(text)}; });
}

ftw_status ftw_spec_set_seeds(ftw_spec* spec, const uint64_t* seeds, size_t count) {
  FTW_REQUIRE_ARG(spec && (seeds || count == 0), "null argument");
  return guarded([&] {
    fedtwins::ExperimentSpec copy = spec->spec;
    copy.seeds.assign(seeds, seeds + count);
    copy.validate();
    spec->spec = std::move(copy);
  });
}

ftw_status ftw_spec_set_data_seed(ftw_spec* spec, uint64_t seed) {
  FTW_REQUIRE_ARG(spec, "spec is null");
  spec->spec.data.seed = seed;
  last_error.clear();
  return FTW_OK;
}

const char* ftw_spec_kind(const ftw_spec* spec) {
  if (!spec) return "";
  return spec->spec.kind == fedtwins::ExperimentKind::TransferLearning ? "tl" : "fl";
}

size_t ftw_spec_run_count(const ftw_spec* spec) { return spec ? spec->spec.run_count() : 0; }

size_t ftw_spec_runs_per_method(const ftw_spec* spec) { return spec ? spec->spec.runs_per_method() : 0; }

ftw_status ftw_spec_data_settings(const ftw_spec* spec, double* seconds, uint64_t* seed, int* sample_rate) {
  FTW_REQUIRE_ARG(spec, "spec is null");
  if (seconds) *seconds = spec->spec.data.seconds;
  if (seed) *seed = spec->spec.data.seed;
  if (sample_rate) *sample_rate = spec->spec.data.sample_rate;
  last_error.clear();
  return FTW_OK;
}

void ftw_spec_free(ftw_spec* spec) { delete spec; }

ftw_status ftw_suite_run(const ftw_spec* spec, size_t threads, ftw_progress_fn progress, void* user,
                         ftw_results** out) {
  FTW_REQUIRE_ARG(spec && out, "spec or out is null");
  return guarded([&] {
    fedtwins::ProgressCallback cb;
    if (progress)
      cb = [&](std::size_t done, std::size_t total, const fedtwins::RunOutput& run) {
        progress(done, total, run.label.c_str(), run.wall_seconds, user);
      };
    auto* r = new ftw_results{fedtwins::run_suite(spec->spec, threads, cb), {}, {}};
    r->rows = r->suite.rows();
    for (const auto& row : r->rows) r->methods.emplace_back(fedtwins::method_name(row.method));
    *out = r;
  });
}

ftw_status ftw_results_write(const ftw_results* results, const char* out_dir) {
  FTW_REQUIRE_ARG(results && out_dir, "results or out_dir is null");
  return guarded([&] { fedtwins::write_report(results->suite, out_dir); });
}

size_t ftw_results_row_count(const ftw_results* results) { return results ? results->rows.size() : 0; }

ftw_status ftw_results_row(const ftw_results* results, size_t i, ftw_result_row* row) {
  FTW_REQUIRE_ARG(results && row, "results or row is null");
  if (i >= results->rows.size()) return set_error(FTW_ERR_RANGE, "row index out of range");
  const auto& r = results->rows[i];
  row->method = results->methods[i].c_str();
  row->domain = r.domain.c_str();
  row->condition_set = r.condition_set.c_str();
  row->client = r.client.c_str();
  row->n_conditions = r.n_conditions;
  row->seed = r.seed;
  row->accuracy = r.accuracy;
  last_error.clear();
  return FTW_OK;
}

void ftw_results_free(ftw_results* results) { delete results; }

ftw_status ftw_report_from_results(const char* results_csv, const char* out_dir) {
  FTW_REQUIRE_ARG(results_csv && out_dir, "null argument");
  return guarded([&] { fedtwins::report_from_results(results_csv, out_dir); });
}

}  // extern "C"
