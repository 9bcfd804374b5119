#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedtwins/data.hpp"
#include "fedtwins/evaluation.hpp"
#include "fedtwins/losses.hpp"
#include "fedtwins/models.hpp"

namespace fedtwins {

enum class ExperimentKind { TransferLearning, Federated };

enum class Method {
  SupervisedSource,
  BarlowSource,
  BarlowTarget,
  SupervisedFl,
  BarlowFl,
  SupervisedLocal,
  BarlowLocal,
};

std::string_view kind_name(ExperimentKind kind);  // "tl", "fl"
std::string_view method_name(Method method);      // "supervised_source", ...
std::optional<Method> parse_method(std::string_view name);
ExperimentKind method_kind(Method method);

struct DomainPair {
  Regime source = Regime::R3L;
  Regime target = Regime::R2H;
  friend bool operator==(const DomainPair&, const DomainPair&) = default;
};
std::string domain_string(const DomainPair& pair);  // "3L->2H"

struct ClientSets {
  ConditionSet client1;
  ConditionSet client2;
  friend bool operator==(const ClientSets&, const ClientSets&) = default;
};

struct Hyperparameters {
  std::size_t epochs = 1000;
  double lr_tl = 0.0005;
  std::size_t rounds = 1000;
  std::size_t local_batches = 20;
  double lr_fl = 0.0002;
  double lambda = 0.01;
  std::size_t probe_epochs = 75;
  double probe_lr = 0.001;
  std::size_t probe_batch_size = 128;
  std::size_t batch_size = 128;
  BarlowForm barlow_form = BarlowForm::Canonical;
  bool reset_client_optimizer = false;
  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

struct DataSettings {
  std::string dataset;  // path to a dataset file; empty = generate synthetic data
  std::uint32_t profile_version = 1;
  double seconds = 60.0;
  int sample_rate = kDefaultSampleRate;
  std::uint64_t seed = 7;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 11;
  friend bool operator==(const DataSettings&, const DataSettings&) = default;
};

struct ExperimentSpec {
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::TransferLearning;
  std::vector<Method> methods;
  std::vector<DomainPair> domains;           // transfer learning
  std::vector<ConditionSet> condition_sets;  // transfer learning
  std::vector<ClientSets> client_sets;       // federated
  std::vector<std::uint64_t> seeds;
  Hyperparameters hp;
  DataSettings data;
  bool save_backbones = false;

  // Throws Config describing the first violated rule.
  void validate() const;
  // Every field as key = value lines in a fixed order; parse_spec(canonical()) == *this.
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string id() const;  // "<name>-<first 8 hex digits of hash>"
  std::size_t runs_per_method() const;
  std::size_t run_count() const;

  friend bool operator==(const ExperimentSpec&, const ExperimentSpec&) = default;
};

// Flat key = value text; '#' starts a comment. Repeated condition_set and
// client_sets lines accumulate. Errors are Config errors naming the line.
ExperimentSpec parse_spec(std::string_view text, const std::string& origin = "config");
ExperimentSpec load_spec(const std::string& path);

// Shipped presets: "paper" (full design) and "desk" (CPU-minutes scale).
ExperimentSpec preset_spec(std::string_view preset, ExperimentKind kind);
std::string preset_text(std::string_view preset, ExperimentKind kind);

struct RunKey {
  Method method = Method::BarlowSource;
  std::size_t domain = 0;  // index into spec.domains (transfer learning)
  std::size_t set = 0;     // index into condition_sets or client_sets
  std::uint64_t seed = 0;
};
std::vector<RunKey> enumerate_runs(const ExperimentSpec& spec);
std::string run_label(const ExperimentSpec& spec, const RunKey& key);

struct ResultRow {
  std::string spec_id;
  ExperimentKind kind = ExperimentKind::TransferLearning;
  Method method = Method::BarlowSource;
  std::string domain;  // "3L->2H" or "all" for federated runs
  std::size_t n_conditions = 0;
  std::string condition_set;  // "N+PL" or "BoR+MR|BrR+UR"
  std::uint64_t seed = 0;
  std::string client;  // "" (transfer learning), "1", "2", "overall"
  double accuracy = 0.0;
  ConfusionMatrix confusion;  // empty when read back from results.csv
};

struct RunOutput {
  RunKey key;
  std::string label;
  std::vector<ResultRow> rows;
  double wall_seconds = 0.0;
  std::string round_log;               // federated methods only
  std::vector<std::pair<std::string, ModelState>> backbones;  // when spec.save_backbones
};

struct SuiteResult {
  ExperimentSpec spec;
  std::vector<RunOutput> runs;  // enumeration order
  std::size_t threads = 1;

  std::vector<ResultRow> rows() const;
};

using ProgressCallback = std::function<void(std::size_t done, std::size_t total, const RunOutput& run)>;

// Loads or generates the data, then executes every run in a pool of `threads`
// workers. Output order and content do not depend on `threads`.
SuiteResult run_suite(const ExperimentSpec& spec, std::size_t threads = 1, const ProgressCallback& progress = {});

// Executes a single run (datasets are prepared internally).
RunOutput run_single(const ExperimentSpec& spec, const RunKey& key);

struct SummaryRow {
  ExperimentKind kind = ExperimentKind::TransferLearning;
  Method method = Method::BarlowSource;
  std::size_t n_conditions = 0;
  std::string client;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n-1); 0 for a single run
};

// Groups by (kind, method, n_conditions, client) in first-appearance order of a sorted key.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows);

std::string results_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_results_csv(std::string_view text, const std::string& origin = "results.csv");
std::string summary_csv(const std::vector<SummaryRow>& summary);
std::string plot_csv(const std::vector<SummaryRow>& summary);

// Writes results.csv, summary.csv, plot.csv, metrics.jsonl, timings.csv,
// spec.cfg, manifest.json, confusion/, round_logs/ and (optionally) models/.
void write_report(const SuiteResult& result, const std::string& out_dir);

// Re-renders summary.csv and plot.csv from an existing results.csv.
void report_from_results(const std::string& results_path, const std::string& out_dir);

}  // namespace fedtwins
