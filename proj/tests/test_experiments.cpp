#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"
#include "fedtwins/experiments.hpp"
#include "json.hpp"
#include "support/errors.hpp"

using namespace fedtwins;
using testing::error_code_of;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fedtwins_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTinyTl = R"(name = tiny_tl
kind = tl
methods = supervised_source, barlow_source, barlow_target
domains = 3L->2H
condition_set = N PL
seeds = 0 1
epochs = 1
batch_size = 8
probe_epochs = 2
data_seconds = 0.5
)";

const char* kTinyFl = R"(name = tiny_fl
kind = fl
methods = supervised_fl, barlow_fl, supervised_local, barlow_local
client_sets = N FB | BoR UV
seeds = 3
rounds = 1
local_batches = 1
batch_size = 8
probe_epochs = 2
data_seconds = 0.5
)";

ErrorCode parse_error(const std::string& text) {
  return error_code_of([&] { parse_spec(text); }).value_or(ErrorCode::Contract);
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("shipped presets describe the full and desk designs") {
    const ExperimentSpec tl = preset_spec("paper", ExperimentKind::TransferLearning);
    CHECK(tl.methods.size() == 3);
    CHECK(tl.domains.size() == 2);
    CHECK(tl.condition_sets.size() == 15);
    CHECK(tl.seeds.size() == 5);
    CHECK(tl.runs_per_method() == 150);
    CHECK(tl.hp.epochs == 1000);
    CHECK(tl.hp.lr_tl == 0.0005);
    CHECK(tl.hp.lambda == 0.01);
    CHECK(tl.hp.probe_epochs == 75);
    std::map<std::size_t, int> by_size;
    for (const auto& s : tl.condition_sets) ++by_size[s.size()];
    CHECK(by_size == std::map<std::size_t, int>{{2, 5}, {4, 5}, {6, 5}});

    const ExperimentSpec fl = preset_spec("paper", ExperimentKind::Federated);
    CHECK(fl.methods.size() == 4);
    CHECK(fl.client_sets.size() == 5);
    CHECK(fl.run_count() == 100);
    CHECK(fl.hp.rounds == 1000);
    CHECK(fl.hp.local_batches == 20);
    CHECK(fl.hp.lr_fl == 0.0002);

    CHECK(preset_spec("desk", ExperimentKind::TransferLearning).run_count() == 36);
    CHECK(preset_spec("desk", ExperimentKind::Federated).run_count() == 24);
    CHECK(error_code_of([] { preset_spec("huge", ExperimentKind::Federated); }) == ErrorCode::Config);
  }

  TEST_CASE("config files in the source tree match the compiled-in presets") {
    const fs::path dir = fs::path(FEDTWINS_SOURCE_DIR) / "configs";
    for (const char* preset : {"paper", "desk"})
      for (ExperimentKind kind : {ExperimentKind::TransferLearning, ExperimentKind::Federated}) {
        const auto file = dir / (std::string(preset) + "_" + std::string(kind_name(kind)) + ".cfg");
        CHECK(load_spec(file.string()) == preset_spec(preset, kind));
        CHECK(read_file(file) == preset_text(preset, kind));
      }
  }

  TEST_CASE("canonical text parses back to the same spec") {
    for (const char* preset : {"paper", "desk"})
      for (ExperimentKind kind : {ExperimentKind::TransferLearning, ExperimentKind::Federated}) {
        const ExperimentSpec s = preset_spec(preset, kind);
        CHECK(parse_spec(s.canonical()) == s);
        CHECK(parse_spec(s.canonical()).hash() == s.hash());
      }
    ExperimentSpec s = parse_spec(kTinyTl);
    s.hp.barlow_form = BarlowForm::Literal;
    s.hp.reset_client_optimizer = true;
    s.data.dataset = "/tmp/x.ftds";
    s.save_backbones = true;
    CHECK(parse_spec(s.canonical()) == s);
  }

  TEST_CASE("spec identity follows content") {
    const ExperimentSpec a = parse_spec(kTinyTl);
    ExperimentSpec b = a;
    CHECK(a.id() == b.id());
    CHECK(a.id().rfind("tiny_tl-", 0) == 0);
    CHECK(a.id().size() == std::string("tiny_tl-").size() + 8);
    b.hp.lambda = 0.02;
    CHECK(a.hash() != b.hash());
    // Comments and spacing do not matter.
    CHECK(parse_spec(std::string("# header\n") + kTinyTl + "\n\n  # trailing\n").hash() == a.hash());
  }

  TEST_CASE("config errors") {
    const std::string base = kTinyTl;
    CHECK(parse_error(base + "colour = red\n") == ErrorCode::Config);
    CHECK(parse_error(base + "epochs = 3\n") == ErrorCode::Config);
    CHECK(parse_error("name = x\nmethods = barlow_source\n") == ErrorCode::Config);
    CHECK(parse_error(base + "condition_set = N XX\n") == ErrorCode::Config);
    CHECK(parse_error(base + "condition_set = N\n") == ErrorCode::Config);
    CHECK(parse_error(base + "condition_set = N N\n") == ErrorCode::Config);
    CHECK(parse_error(base + "lambda = abc\n") == ErrorCode::Config);
    CHECK(parse_error(base + "just some words\n") == ErrorCode::Config);
    CHECK(parse_error(base + "barlow_form = fancy\n") == ErrorCode::Config);
    CHECK(parse_error(base + "split_fraction = 1\n") == ErrorCode::Config);
    std::string wrong_kind = base;
    wrong_kind.replace(wrong_kind.find("kind = tl"), 9, "kind = fl");
    CHECK(parse_error(wrong_kind) == ErrorCode::Config);
    std::string overlap = kTinyFl;
    overlap.replace(overlap.find("N FB | BoR UV"), 13, "N FB | FB UV");
    CHECK(parse_error(overlap) == ErrorCode::Config);
    std::string same_domain = base;
    same_domain.replace(same_domain.find("3L->2H"), 6, "2H->2H");
    CHECK(parse_error(same_domain) == ErrorCode::Config);
    CHECK(parse_error(base + "batch_size = 1\n") == ErrorCode::Config);  // duplicate key is reported first
    // Messages point at the offending line.
    const std::string msg = testing::error_message_of([&] { parse_spec(base + "colour = red\n", "my.cfg"); });
    CHECK(msg.find("my.cfg:11") != std::string::npos);
    CHECK(error_code_of([] { load_spec("/nonexistent/file.cfg"); }) == ErrorCode::Config);
  }

  TEST_CASE("run enumeration and labels") {
    const ExperimentSpec s = preset_spec("paper", ExperimentKind::TransferLearning);
    const auto runs = enumerate_runs(s);
    CHECK(runs.size() == s.run_count());
    CHECK(run_label(s, runs.front()) == "supervised_source_3L-2H_set01_seed0");
    CHECK(run_label(s, runs.back()) == "barlow_target_2H-3L_set15_seed4");
    CHECK(runs[1].seed == 1);
    const ExperimentSpec f = parse_spec(kTinyFl);
    CHECK(run_label(f, enumerate_runs(f)[1]) == "barlow_fl_set01_seed3");
    for (Method m : {Method::SupervisedSource, Method::BarlowLocal}) CHECK(parse_method(method_name(m)) == m);
    CHECK(!parse_method("magic"));
  }

  TEST_CASE("summaries match a direct recomputation") {
    std::vector<ResultRow> rows;
    const double acc[] = {0.5, 0.75, 0.625, 0.9, 0.8};
    for (int i = 0; i < 5; ++i) {
      ResultRow r;
      r.method = i < 3 ? Method::BarlowSource : Method::SupervisedSource;
      r.n_conditions = 2;
      r.seed = static_cast<std::uint64_t>(i);
      r.accuracy = acc[i];
      rows.push_back(r);
    }
    const auto s = summarize(rows);
    REQUIRE(s.size() == 2);
    CHECK(s[0].method == Method::SupervisedSource);
    CHECK(s[0].count == 2);
    CHECK(std::fabs(s[0].mean - 0.85) < 1e-12);
    CHECK(std::fabs(s[0].std - std::sqrt(0.005)) < 1e-12);
    CHECK(std::fabs(s[1].mean - 0.625) < 1e-12);
    CHECK(std::fabs(s[1].std - 0.125) < 1e-12);
    rows.resize(1);
    CHECK(summarize(rows)[0].std == 0.0);
    CHECK(plot_csv(summarize(rows)) == "group,mean,std\nbarlow_source/2cond,50.0000,0.0000\n");
  }

  TEST_CASE("results files parse back") {
    ResultRow r;
    r.spec_id = "x-00000000";
    r.kind = ExperimentKind::Federated;
    r.method = Method::BarlowFl;
    r.domain = "all";
    r.n_conditions = 4;
    r.condition_set = "N+FB|BoR+UV";
    r.seed = 2;
    r.client = "overall";
    r.accuracy = 1.0 / 3.0;
    const auto back = parse_results_csv(results_csv({r}));
    REQUIRE(back.size() == 1);
    CHECK(back[0].accuracy == r.accuracy);
    CHECK(back[0].condition_set == r.condition_set);
    CHECK(back[0].client == "overall");
    CHECK(error_code_of([] { parse_results_csv("a,b\n1,2\n"); }) == ErrorCode::Format);
    CHECK(error_code_of([] { parse_results_csv("spec_id,kind,method,domain,n_conditions,condition_set,seed,client,accuracy\n"); }) ==
          ErrorCode::Format);
  }

  TEST_CASE("tiny transfer-learning suite") {
    const ExperimentSpec spec = parse_spec(kTinyTl);
    const SuiteResult one = run_suite(spec, 1);
    const auto rows = one.rows();
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) {
      CHECK(r.domain == "3L->2H");
      CHECK(r.condition_set == "N+PL");
      CHECK(r.client.empty());
      CHECK(r.n_conditions == 2);
      CHECK(r.confusion.total() == 8 * 5);  // target test split, every condition
      CHECK(r.accuracy == r.confusion.accuracy());
    }
    const SuiteResult three = run_suite(spec, 3);
    CHECK(results_csv(three.rows()) == results_csv(rows));

    const auto dir = scratch("tiny_tl");
    write_report(one, dir.string());
    for (const char* f : {"results.csv", "summary.csv", "plot.csv", "metrics.jsonl", "timings.csv", "spec.cfg", "manifest.json",
                          "confusion/barlow_target_2cond.csv"})
      CHECK(fs::exists(dir / f));
    CHECK(parse_spec(read_file(dir / "spec.cfg")) == spec);
    const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    CHECK(manifest["runs"] == 6);
    CHECK(manifest["spec_id"] == spec.id());

    const auto again = scratch("tiny_tl_report");
    report_from_results((dir / "results.csv").string(), again.string());
    CHECK(read_file(again / "summary.csv") == read_file(dir / "summary.csv"));
    CHECK(read_file(again / "plot.csv") == read_file(dir / "plot.csv"));
  }

  TEST_CASE("tiny federated suite") {
    ExperimentSpec spec = parse_spec(kTinyFl);
    spec.save_backbones = true;
    const SuiteResult res = run_suite(spec, 2);
    const auto rows = res.rows();
    REQUIRE(rows.size() == 12);
    CHECK(rows[0].client == "1");
    CHECK(rows[1].client == "2");
    CHECK(rows[2].client == "overall");
    CHECK(rows[2].n_conditions == 4);
    CHECK(rows[2].confusion.total() == rows[0].confusion.total() + rows[1].confusion.total());
    CHECK(rows[0].condition_set == "N+FB|BoR+UV");
    CHECK(rows[0].domain == "all");
    // Federated methods share one backbone and every client is probed on the full evaluation split.
    CHECK(rows[0].confusion == rows[1].confusion);
    for (const auto& run : res.runs) {
      CHECK(!run.round_log.empty());
      CHECK(run.backbones.size() == 2);
    }
    // Local baselines log both solo federations under one header.
    const std::string& log = res.runs[2].round_log;
    CHECK(std::count(log.begin(), log.end(), '\n') == 3);

    const auto dir = scratch("tiny_fl");
    write_report(res, dir.string());
    CHECK(fs::exists(dir / "round_logs" / "barlow_fl_set01_seed3.csv"));
    CHECK(fs::exists(dir / "models" / "barlow_local_set01_seed3_client2.ftwn"));
    CHECK(fs::exists(dir / "confusion" / "supervised_fl_overall.csv"));
    CHECK(load_state((dir / "models" / "barlow_fl_set01_seed3_client1.ftwn").string()).parameter_count() == 9152);
    CHECK(results_csv(run_suite(spec, 1).rows()) == results_csv(rows));
  }

  TEST_CASE("dataset problems are configuration errors") {
    ExperimentSpec spec = parse_spec(kTinyTl);
    spec.data.dataset = "/nonexistent/data.ftds";
    CHECK(error_code_of([&] { run_suite(spec, 1); }) == ErrorCode::Config);

    const auto dir = scratch("partial_data");
    const WindowDataset full = generate_dataset(SyntheticProfile::default_profile(), 0.5, 1);
    save_dataset(filter_subset(full, {Condition::N, Condition::FB}, {Regime::R3L, Regime::R2H}), (dir / "d.ftds").string());
    spec.data.dataset = (dir / "d.ftds").string();
    const std::string msg = testing::error_message_of([&] { run_suite(spec, 1); });
    CHECK(msg.find("PL") != std::string::npos);
    CHECK(error_code_of([&] { run_suite(spec, 1); }) == ErrorCode::Config);

    ExperimentSpec fl = parse_spec(kTinyFl);
    fl.data.dataset = spec.data.dataset;
    CHECK(error_code_of([&] { run_suite(fl, 1); }) == ErrorCode::Config);
  }
}
