#include "fedtwins/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "binary_io.hpp"
#include "fedtwins/error.hpp"
#include "fedtwins/federation.hpp"
#include "fedtwins/training.hpp"
#include "json.hpp"

namespace fedtwins {

namespace {

#include "presets.inc"

constexpr std::array<std::string_view, 7> kMethodNames{"supervised_source", "barlow_source", "barlow_target",
                                                       "supervised_fl",     "barlow_fl",     "supervised_local",
                                                       "barlow_local"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Splits on commas and whitespace, dropping empty tokens.
std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_set(const ConditionSet& set, std::string_view sep) {
  std::string s;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i) s += sep;
    s += condition_name(set[i]);
  }
  return s;
}

class LineParser {
 public:
  LineParser(std::string origin, std::size_t line) : origin_(std::move(origin)), line_(line) {}

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::Config, origin_ + ":" + std::to_string(line_) + ": " + what);
  }

  std::uint64_t u64(const std::string& v, const std::string& key) const {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) error("'" + key + "' expects a nonnegative integer, got '" + v + "'");
    return out;
  }
  std::size_t size(const std::string& v, const std::string& key) const { return static_cast<std::size_t>(u64(v, key)); }
  double real(const std::string& v, const std::string& key) const {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
      error("'" + key + "' expects a number, got '" + v + "'");
    return out;
  }
  bool boolean(const std::string& v, const std::string& key) const {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    error("'" + key + "' expects true or false, got '" + v + "'");
  }
  ConditionSet conditions(std::string_view v, const std::string& key) const {
    ConditionSet set;
    for (const auto& t : tokens(v)) {
      const auto c = parse_condition(t);
      if (!c) error("'" + key + "': unknown condition '" + t + "'");
      set.push_back(*c);
    }
    if (set.empty()) error("'" + key + "' is empty");
    return set;
  }

 private:
  std::string origin_;
  std::size_t line_;
};

std::vector<ConditionSet> parse_client_pair(const LineParser& p, const std::string& v) {
  const auto parts = split_on(v, '|');
  if (parts.size() != 2) p.error("'client_sets' expects two condition lists separated by '|'");
  return {p.conditions(parts[0], "client_sets"), p.conditions(parts[1], "client_sets")};
}

void check_unique(const ConditionSet& set, const std::string& what) {
  std::set<Condition> seen(set.begin(), set.end());
  require(seen.size() == set.size(), ErrorCode::Config, what + " " + condition_set_string(set) + " repeats a condition");
}

// ---------------------------------------------------------------------------
// Data shared by every run of a suite (read-only once built).

struct SuiteData {
  WindowDataset full;
  std::map<Regime, std::pair<WindowDataset, WindowDataset>> target_split;  // transfer learning
  std::pair<WindowDataset, WindowDataset> eval_split;                      // federated
};

const ConditionSet kEveryCondition(kAllConditions.begin(), kAllConditions.end());
const RegimeSet kEveryRegime(kAllRegimes.begin(), kAllRegimes.end());

bool has_pair(const WindowDataset& ds, Condition c, Regime r) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == c && ds.regimes[i] == r) return true;
  return false;
}

SuiteData prepare_data(const ExperimentSpec& spec) {
  spec.validate();
  SuiteData d;
  if (spec.data.dataset.empty()) {
    d.full = generate_dataset(SyntheticProfile::default_profile(), spec.data.seconds, spec.data.seed, spec.data.sample_rate);
  } else {
    if (!std::filesystem::exists(spec.data.dataset))
      fail(ErrorCode::Config, "dataset file '" + spec.data.dataset + "' does not exist");
    d.full = load_dataset(spec.data.dataset);
  }
  auto need = [&](Condition c, Regime r) {
    if (!has_pair(d.full, c, r))
      fail(ErrorCode::Config, "dataset has no windows for condition " + std::string(condition_name(c)) + " in regime " +
                                  std::string(regime_name(r)));
  };
  if (spec.kind == ExperimentKind::TransferLearning) {
    for (const auto& dom : spec.domains) {
      for (const auto& set : spec.condition_sets)
        for (Condition c : set) {
          need(c, dom.source);
          need(c, dom.target);
        }
      if (!d.target_split.count(dom.target))
        d.target_split.emplace(dom.target, train_test_split(filter_subset(d.full, kEveryCondition, {dom.target}),
                                                            spec.data.split_fraction, spec.data.split_seed));
    }
  } else {
    for (const auto& cs : spec.client_sets)
      for (const auto* set : {&cs.client1, &cs.client2})
        for (Condition c : *set) {
          bool any = false;
          for (Regime r : kAllRegimes) any = any || has_pair(d.full, c, r);
          if (!any) fail(ErrorCode::Config, "dataset has no windows for condition " + std::string(condition_name(c)));
        }
    d.eval_split = train_test_split(d.full, spec.data.split_fraction, spec.data.split_seed);
  }
  return d;
}

Evaluation probe_backbone(const ExperimentSpec& spec, const ModelState& backbone, const WindowDataset& train,
                          const WindowDataset& test, std::uint64_t seed) {
  const BackboneConfig config;
  ProbeConfig pc;
  pc.epochs = spec.hp.probe_epochs;
  pc.lr = spec.hp.probe_lr;
  pc.batch_size = spec.hp.probe_batch_size;
  const ModelState probe = train_linear_probe(extract_features(backbone, config, train), train.label_codes(), pc, seed);
  return evaluate(probe, extract_features(backbone, config, test), test.label_codes());
}

TrainStepConfig step_config(const ExperimentSpec& spec, Objective objective, std::size_t classes) {
  TrainStepConfig step;
  step.objective = objective;
  step.classes = classes;
  step.barlow.lambda = spec.hp.lambda;
  step.barlow.form = spec.hp.barlow_form;
  return step;
}

RunOutput run_transfer(const ExperimentSpec& spec, const SuiteData& data, const RunKey& key) {
  RunOutput out;
  const ConditionSet& set = spec.condition_sets.at(key.set);
  const DomainPair& dom = spec.domains.at(key.domain);
  const auto& [target_train, target_test] = data.target_split.at(dom.target);

  const Objective objective = key.method == Method::SupervisedSource ? Objective::Supervised : Objective::BarlowTwins;
  const TrainStepConfig step = step_config(spec, objective, set.size());
  ModelState state = initial_state(step, key.seed);

  // Barlow Twins (Target) sees the target training windows of the same conditions, unlabeled.
  const WindowDataset pretrain = key.method == Method::BarlowTarget ? filter_subset(target_train, set, {dom.target})
                                                                    : filter_subset(data.full, set, {dom.source});
  std::vector<std::size_t> labels;
  if (objective == Objective::Supervised)
    for (Condition c : pretrain.labels)
      labels.push_back(static_cast<std::size_t>(std::find(set.begin(), set.end(), c) - set.begin()));

  AdamState opt(spec.hp.lr_tl);
  Rng rng = Rng(key.seed).split(0x71);
  train_epochs(state, opt, step, pretrain.windows, labels, spec.hp.epochs, spec.hp.batch_size, rng);

  const ModelState backbone = state.subset("backbone.");
  const Evaluation ev = probe_backbone(spec, backbone, target_train, target_test, key.seed);
  ResultRow row;
  row.spec_id = spec.id();
  row.kind = spec.kind;
  row.method = key.method;
  row.domain = domain_string(dom);
  row.n_conditions = set.size();
  row.condition_set = join_set(set, "+");
  row.seed = key.seed;
  row.accuracy = ev.accuracy;
  row.confusion = ev.confusion;
  out.rows.push_back(std::move(row));
  if (spec.save_backbones) out.backbones.emplace_back(run_label(spec, key), backbone);
  return out;
}

RunOutput run_federated(const ExperimentSpec& spec, const SuiteData& data, const RunKey& key) {
  RunOutput out;
  const ClientSets& cs = spec.client_sets.at(key.set);
  const auto& [eval_train, eval_test] = data.eval_split;
  const bool supervised = key.method == Method::SupervisedFl || key.method == Method::SupervisedLocal;
  const bool federated = key.method == Method::SupervisedFl || key.method == Method::BarlowFl;

  FederationConfig fc;
  fc.rounds = spec.hp.rounds;
  fc.local_batches = spec.hp.local_batches;
  fc.batch_size = spec.hp.batch_size;
  fc.lr = spec.hp.lr_fl;
  fc.step = step_config(spec, supervised ? Objective::Supervised : Objective::BarlowTwins, kNumConditions);
  fc.reset_optimizer_each_round = spec.hp.reset_client_optimizer;
  const ModelState initial = initial_state(fc.step, key.seed);

  const std::array<const ConditionSet*, 2> sets{&cs.client1, &cs.client2};
  std::vector<Client> clients;
  for (int id = 1; id <= 2; ++id)
    clients.emplace_back(id, filter_subset(eval_train, *sets[id - 1], kEveryRegime),
                         Rng::mix(key.seed * 0x10001 + static_cast<std::uint64_t>(id)));

  std::array<ModelState, 2> backbones;
  if (federated) {
    const FederationResult fed = run_federation(clients, initial, fc);
    backbones = {fed.global.subset("backbone."), fed.global.subset("backbone.")};
    out.round_log = round_log_csv(fed.rounds);
  } else {
    // Equal budget: each client trains alone for the same rounds x local batches.
    for (std::size_t j = 0; j < clients.size(); ++j) {
      std::vector<Client> solo{clients[j]};
      const FederationResult fed = run_federation(solo, initial, fc);
      backbones[j] = fed.global.subset("backbone.");
      const std::string log = round_log_csv(fed.rounds);
      out.round_log += j == 0 ? log : log.substr(log.find('\n') + 1);
    }
  }

  ConfusionMatrix pooled;
  std::set<Condition> seen;
  for (std::size_t j = 0; j < 2; ++j) {
    const Evaluation ev = probe_backbone(spec, backbones[j], eval_train, eval_test, key.seed);
    pooled += ev.confusion;
    seen.insert(sets[j]->begin(), sets[j]->end());
    ResultRow row;
    row.spec_id = spec.id();
    row.kind = spec.kind;
    row.method = key.method;
    row.domain = "all";
    row.n_conditions = sets[j]->size();
    row.condition_set = join_set(cs.client1, "+") + "|" + join_set(cs.client2, "+");
    row.seed = key.seed;
    row.client = std::to_string(j + 1);
    row.accuracy = ev.accuracy;
    row.confusion = ev.confusion;
    out.rows.push_back(std::move(row));
    if (spec.save_backbones) out.backbones.emplace_back(run_label(spec, key) + "_client" + std::to_string(j + 1), backbones[j]);
  }
  ResultRow overall = out.rows.front();
  overall.client = "overall";
  overall.n_conditions = seen.size();
  overall.confusion = pooled;
  overall.accuracy = pooled.accuracy();
  out.rows.push_back(std::move(overall));
  return out;
}

RunOutput execute(const ExperimentSpec& spec, const SuiteData& data, const RunKey& key) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput out = spec.kind == ExperimentKind::TransferLearning ? run_transfer(spec, data, key) : run_federated(spec, data, key);
  out.key = key;
  out.label = run_label(spec, key);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string group_name(const SummaryRow& s) {
  std::string g(method_name(s.method));
  if (s.kind == ExperimentKind::TransferLearning) return g + "/" + std::to_string(s.n_conditions) + "cond";
  return g + "/" + (s.client == "overall" ? s.client : "client" + s.client);
}

int client_rank(const std::string& client) {
  if (client.empty()) return 0;
  if (client == "overall") return 1000;
  return std::atoi(client.c_str());
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view kind_name(ExperimentKind kind) { return kind == ExperimentKind::TransferLearning ? "tl" : "fl"; }

std::string_view method_name(Method method) { return kMethodNames.at(static_cast<std::size_t>(method)); }

std::optional<Method> parse_method(std::string_view name) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i)
    if (kMethodNames[i] == name) return static_cast<Method>(i);
  return std::nullopt;
}

ExperimentKind method_kind(Method method) {
  return static_cast<int>(method) <= static_cast<int>(Method::BarlowTarget) ? ExperimentKind::TransferLearning
                                                                            : ExperimentKind::Federated;
}

std::string domain_string(const DomainPair& pair) {
  return std::string(regime_name(pair.source)) + "->" + std::string(regime_name(pair.target));
}

void ExperimentSpec::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::Config, what); };
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
      }))
    bad("name must be non-empty and use only letters, digits, '_', '-' or '.'");
  if (methods.empty()) bad("no methods given");
  for (Method m : methods)
    if (method_kind(m) != kind)
      bad("method " + std::string(method_name(m)) + " does not belong to a " + std::string(kind_name(kind)) + " suite");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) bad("methods repeat");
  if (seeds.empty()) bad("no seeds given");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) bad("seeds repeat");

  if (kind == ExperimentKind::TransferLearning) {
    if (domains.empty()) bad("transfer-learning suite needs at least one domain pair");
    for (const auto& d : domains)
      if (d.source == d.target) bad("domain pair " + domain_string(d) + " must name different regimes");
    if (condition_sets.empty()) bad("transfer-learning suite needs at least one condition_set");
    for (const auto& s : condition_sets) {
      if (s.size() < 2) bad("condition set " + condition_set_string(s) + " needs at least two conditions");
      check_unique(s, "condition set");
    }
  } else {
    if (client_sets.empty()) bad("federated suite needs at least one client_sets line");
    for (const auto& cs : client_sets) {
      check_unique(cs.client1, "client set");
      check_unique(cs.client2, "client set");
      for (Condition c : cs.client1)
        if (std::find(cs.client2.begin(), cs.client2.end(), c) != cs.client2.end())
          bad("client sets " + condition_set_string(cs.client1) + " and " + condition_set_string(cs.client2) +
              " overlap");
    }
  }
  if (hp.batch_size < 2) bad("batch_size must be at least 2");
  if (!(hp.lr_tl > 0.0) || !(hp.lr_fl > 0.0) || !(hp.probe_lr > 0.0)) bad("learning rates must be positive");
  if (hp.lambda < 0.0) bad("lambda must be nonnegative");
  if (hp.probe_epochs == 0) bad("probe_epochs must be positive");
  if (hp.probe_batch_size == 0) bad("probe_batch_size must be positive");
  if (data.profile_version != 1) bad("unsupported synthetic profile version " + std::to_string(data.profile_version));
  if (data.dataset.empty() && !(data.seconds > 0.0)) bad("data_seconds must be positive");
  if (data.sample_rate <= 0) bad("sample_rate must be positive");
  if (!(data.split_fraction > 0.0 && data.split_fraction < 1.0)) bad("split_fraction must lie in (0, 1)");
}

std::string ExperimentSpec::canonical() const {
  std::ostringstream os;
  os << "name = " << name << "\nkind = " << kind_name(kind) << "\nmethods = ";
  for (std::size_t i = 0; i < methods.size(); ++i) os << (i ? ", " : "") << method_name(methods[i]);
  os << "\n";
  if (!domains.empty()) {
    os << "domains = ";
    for (std::size_t i = 0; i < domains.size(); ++i) os << (i ? ", " : "") << domain_string(domains[i]);
    os << "\n";
  }
  for (const auto& s : condition_sets) os << "condition_set = " << join_set(s, " ") << "\n";
  for (const auto& cs : client_sets) os << "client_sets = " << join_set(cs.client1, " ") << " | " << join_set(cs.client2, " ") << "\n";
  os << "seeds =";
  for (auto s : seeds) os << " " << s;
  os << "\nepochs = " << hp.epochs << "\nlr_tl = " << fmt_double(hp.lr_tl) << "\nrounds = " << hp.rounds
     << "\nlocal_batches = " << hp.local_batches << "\nlr_fl = " << fmt_double(hp.lr_fl)
     << "\nlambda = " << fmt_double(hp.lambda) << "\nprobe_epochs = " << hp.probe_epochs
     << "\nprobe_lr = " << fmt_double(hp.probe_lr) << "\nprobe_batch_size = " << hp.probe_batch_size
     << "\nbatch_size = " << hp.batch_size
     << "\nbarlow_form = " << (hp.barlow_form == BarlowForm::Canonical ? "canonical" : "literal")
     << "\nreset_client_optimizer = " << (hp.reset_client_optimizer ? "true" : "false") << "\n";
  if (!data.dataset.empty()) os << "dataset = " << data.dataset << "\n";
  os << "profile_version = " << data.profile_version << "\ndata_seconds = " << fmt_double(data.seconds)
     << "\nsample_rate = " << data.sample_rate << "\ndata_seed = " << data.seed
     << "\nsplit_fraction = " << fmt_double(data.split_fraction) << "\nsplit_seed = " << data.split_seed
     << "\nsave_backbones = " << (save_backbones ? "true" : "false") << "\n";
  return os.str();
}

std::uint64_t ExperimentSpec::hash() const {
  detail::Fnv1a h;
  h.str(canonical());
  return h.value();
}

std::string ExperimentSpec::id() const {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(hash() >> 32));
  return name + "-" + buf;
}

std::size_t ExperimentSpec::runs_per_method() const {
  return kind == ExperimentKind::TransferLearning ? domains.size() * condition_sets.size() * seeds.size()
                                                  : client_sets.size() * seeds.size();
}

std::size_t ExperimentSpec::run_count() const { return methods.size() * runs_per_method(); }

ExperimentSpec parse_spec(std::string_view text, const std::string& origin) {
  ExperimentSpec spec;
  std::set<std::string> seen;
  bool kind_given = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string_view raw = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const LineParser p(origin, line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) p.error("expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const bool repeatable = key == "condition_set" || key == "client_sets";
    if (!repeatable && !seen.insert(key).second) p.error("key '" + key + "' given twice");

    if (key == "name") {
      spec.name = value;
    } else if (key == "kind") {
      if (value == "tl") spec.kind = ExperimentKind::TransferLearning;
      else if (value == "fl") spec.kind = ExperimentKind::Federated;
      else p.error("'kind' must be tl or fl, got '" + value + "'");
      kind_given = true;
    } else if (key == "methods") {
      for (const auto& t : tokens(value)) {
        const auto m = parse_method(t);
        if (!m) p.error("unknown method '" + t + "'");
        spec.methods.push_back(*m);
      }
    } else if (key == "domains") {
      for (const auto& part : split_on(value, ',')) {
        const auto arrow = part.find("->");
        if (arrow == std::string::npos) p.error("domain '" + part + "' must look like 3L->2H");
        const auto src = parse_regime(trim(std::string_view(part).substr(0, arrow)));
        const auto tgt = parse_regime(trim(std::string_view(part).substr(arrow + 2)));
        if (!src || !tgt) p.error("domain '" + part + "' names an unknown regime");
        spec.domains.push_back({*src, *tgt});
      }
    } else if (key == "condition_set") {
      spec.condition_sets.push_back(p.conditions(value, key));
    } else if (key == "client_sets") {
      auto pair = parse_client_pair(p, value);
      spec.client_sets.push_back({std::move(pair[0]), std::move(pair[1])});
    } else if (key == "seeds") {
      for (const auto& t : tokens(value)) spec.seeds.push_back(p.u64(t, key));
    } else if (key == "epochs") {
      spec.hp.epochs = p.size(value, key);
    } else if (key == "lr_tl") {
      spec.hp.lr_tl = p.real(value, key);
    } else if (key == "rounds") {
      spec.hp.rounds = p.size(value, key);
    } else if (key == "local_batches") {
      spec.hp.local_batches = p.size(value, key);
    } else if (key == "lr_fl") {
      spec.hp.lr_fl = p.real(value, key);
    } else if (key == "lambda") {
      spec.hp.lambda = p.real(value, key);
    } else if (key == "probe_epochs") {
      spec.hp.probe_epochs = p.size(value, key);
    } else if (key == "probe_lr") {
      spec.hp.probe_lr = p.real(value, key);
    } else if (key == "probe_batch_size") {
      spec.hp.probe_batch_size = p.size(value, key);
    } else if (key == "batch_size") {
      spec.hp.batch_size = p.size(value, key);
    } else if (key == "barlow_form") {
      if (value == "canonical") spec.hp.barlow_form = BarlowForm::Canonical;
      else if (value == "literal") spec.hp.barlow_form = BarlowForm::Literal;
      else p.error("'barlow_form' must be canonical or literal");
    } else if (key == "reset_client_optimizer") {
      spec.hp.reset_client_optimizer = p.boolean(value, key);
    } else if (key == "dataset") {
      spec.data.dataset = value;
    } else if (key == "profile_version") {
      spec.data.profile_version = static_cast<std::uint32_t>(p.u64(value, key));
    } else if (key == "data_seconds") {
      spec.data.seconds = p.real(value, key);
    } else if (key == "sample_rate") {
      spec.data.sample_rate = static_cast<int>(p.size(value, key));
    } else if (key == "data_seed") {
      spec.data.seed = p.u64(value, key);
    } else if (key == "split_fraction") {
      spec.data.split_fraction = p.real(value, key);
    } else if (key == "split_seed") {
      spec.data.split_seed = p.u64(value, key);
    } else if (key == "save_backbones") {
      spec.save_backbones = p.boolean(value, key);
    } else {
      p.error("unknown key '" + key + "'");
    }
  }
  if (!kind_given) fail(ErrorCode::Config, origin + ": missing required key 'kind'");
  spec.validate();
  return spec;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Config, "cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_spec(ss.str(), path);
}

std::string preset_text(std::string_view preset, ExperimentKind kind) {
  const bool tl = kind == ExperimentKind::TransferLearning;
  if (preset == "paper") return std::string(tl ? kPaperTl : kPaperFl);
  if (preset == "desk") return std::string(tl ? kDeskTl : kDeskFl);
  fail(ErrorCode::Config, "unknown preset '" + std::string(preset) + "' (expected paper or desk)");
}

ExperimentSpec preset_spec(std::string_view preset, ExperimentKind kind) {
  return parse_spec(preset_text(preset, kind), std::string(preset) + "_" + std::string(kind_name(kind)) + ".cfg");
}

std::vector<RunKey> enumerate_runs(const ExperimentSpec& spec) {
  std::vector<RunKey> runs;
  runs.reserve(spec.run_count());
  for (Method m : spec.methods) {
    if (spec.kind == ExperimentKind::TransferLearning) {
      for (std::size_t d = 0; d < spec.domains.size(); ++d)
        for (std::size_t s = 0; s < spec.condition_sets.size(); ++s)
          for (auto seed : spec.seeds) runs.push_back({m, d, s, seed});
    } else {
      for (std::size_t s = 0; s < spec.client_sets.size(); ++s)
        for (auto seed : spec.seeds) runs.push_back({m, 0, s, seed});
    }
  }
  return runs;
}

std::string run_label(const ExperimentSpec& spec, const RunKey& key) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_set%02zu_seed%llu", key.set + 1, static_cast<unsigned long long>(key.seed));
  std::string label(method_name(key.method));
  if (spec.kind == ExperimentKind::TransferLearning) {
    const auto& d = spec.domains.at(key.domain);
    label += "_" + std::string(regime_name(d.source)) + "-" + std::string(regime_name(d.target));
  }
  return label + buf;
}

std::vector<ResultRow> SuiteResult::rows() const {
  std::vector<ResultRow> out;
  for (const auto& r : runs) out.insert(out.end(), r.rows.begin(), r.rows.end());
  return out;
}

RunOutput run_single(const ExperimentSpec& spec, const RunKey& key) { return execute(spec, prepare_data(spec), key); }

SuiteResult run_suite(const ExperimentSpec& spec, std::size_t threads, const ProgressCallback& progress) {
  const SuiteData data = prepare_data(spec);
  const std::vector<RunKey> keys = enumerate_runs(spec);
  SuiteResult result;
  result.spec = spec;
  result.threads = std::max<std::size_t>(1, threads);
  result.runs.resize(keys.size());

  std::vector<std::exception_ptr> errors(keys.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      try {
        result.runs[i] = execute(spec, data, keys[i]);
      } catch (...) {
        errors[i] = std::current_exception();
        continue;
      }
      std::lock_guard lock(progress_mutex);
      ++done;
      if (progress) progress(done, keys.size(), result.runs[i]);
    }
  };
  const std::size_t n_workers = std::min(result.threads, std::max<std::size_t>(1, keys.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), "run " + run_label(spec, keys[i]) + ": " + e.what());
    }
  }
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<int, int, std::size_t, int, std::string>;
  std::map<Key, std::vector<double>> groups;
  std::map<Key, SummaryRow> proto;
  for (const auto& r : rows) {
    const Key k{static_cast<int>(r.kind), static_cast<int>(r.method), r.n_conditions, client_rank(r.client), r.client};
    groups[k].push_back(r.accuracy);
    auto& p = proto[k];
    p.kind = r.kind;
    p.method = r.method;
    p.n_conditions = r.n_conditions;
    p.client = r.client;
  }
  std::vector<SummaryRow> out;
  for (const auto& [k, values] : groups) {
    if (values.empty()) continue;
    SummaryRow s = proto[k];
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string csv = "spec_id,kind,method,domain,n_conditions,condition_set,seed,client,accuracy\n";
  for (const auto& r : rows)
    csv += r.spec_id + "," + std::string(kind_name(r.kind)) + "," + std::string(method_name(r.method)) + "," + r.domain +
           "," + std::to_string(r.n_conditions) + "," + r.condition_set + "," + std::to_string(r.seed) + "," + r.client +
           "," + fmt_double(r.accuracy) + "\n";
  return csv;
}

std::vector<ResultRow> parse_results_csv(std::string_view text, const std::string& origin) {
  std::vector<ResultRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "spec_id,kind,method,domain,n_conditions,condition_set,seed,client,accuracy")
        fail(ErrorCode::Format, origin + ": unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_on(line, ',');
    const LineParser p(origin, line_no);
    if (f.size() != 9) p.error("expected 9 columns, got " + std::to_string(f.size()));
    ResultRow r;
    r.spec_id = f[0];
    if (f[1] == "tl") r.kind = ExperimentKind::TransferLearning;
    else if (f[1] == "fl") r.kind = ExperimentKind::Federated;
    else p.error("unknown kind '" + f[1] + "'");
    const auto m = parse_method(f[2]);
    if (!m) p.error("unknown method '" + f[2] + "'");
    r.method = *m;
    r.domain = f[3];
    r.n_conditions = p.size(f[4], "n_conditions");
    r.condition_set = f[5];
    r.seed = p.u64(f[6], "seed");
    r.client = f[7];
    r.accuracy = p.real(f[8], "accuracy");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail(ErrorCode::Format, origin + ": no result rows");
  return rows;
}

std::string summary_csv(const std::vector<SummaryRow>& summary) {
  std::string csv = "kind,method,n_conditions,client,runs,mean,std\n";
  for (const auto& s : summary)
    csv += std::string(kind_name(s.kind)) + "," + std::string(method_name(s.method)) + "," + std::to_string(s.n_conditions) +
           "," + s.client + "," + std::to_string(s.count) + "," + fmt_double(s.mean) + "," + fmt_double(s.std) + "\n";
  return csv;
}

std::string plot_csv(const std::vector<SummaryRow>& summary) {
  std::string csv = "group,mean,std\n";
  char buf[64];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f\n", 100.0 * s.mean, 100.0 * s.std);
    csv += group_name(s) + buf;
  }
  return csv;
}

void write_report(const SuiteResult& result, const std::string& out_dir) {
  const std::vector<ResultRow> rows = result.rows();
  require(!rows.empty(), ErrorCode::Contract, "nothing to report");
  namespace fs = std::filesystem;
  const fs::path out(out_dir);
  make_dirs(out);
  make_dirs(out / "confusion");
  const auto summary = summarize(rows);
  std::vector<std::string> files{"results.csv", "summary.csv", "plot.csv", "metrics.jsonl", "timings.csv", "spec.cfg"};
  write_text(out / "results.csv", results_csv(rows));
  write_text(out / "summary.csv", summary_csv(summary));
  write_text(out / "plot.csv", plot_csv(summary));
  write_text(out / "spec.cfg", result.spec.canonical());

  std::string metrics, timings = "run,method,seed,wall_seconds\n";
  for (const auto& r : rows) metrics += metrics_json(std::string(method_name(r.method)), r.seed, r.condition_set,
                                                     Evaluation{r.accuracy, r.confusion}) + "\n";
  char buf[64];
  for (const auto& run : result.runs) {
    std::snprintf(buf, sizeof buf, ",%llu,%.3f\n", static_cast<unsigned long long>(run.key.seed), run.wall_seconds);
    timings += run.label + "," + std::string(method_name(run.key.method)) + buf;
  }
  write_text(out / "metrics.jsonl", metrics);
  write_text(out / "timings.csv", timings);

  // One representative confusion matrix per summary group: its first run in enumeration order.
  std::set<std::string> written;
  for (const auto& r : rows) {
    SummaryRow g;
    g.kind = r.kind;
    g.method = r.method;
    g.n_conditions = r.n_conditions;
    g.client = r.client;
    std::string name = group_name(g);
    std::replace(name.begin(), name.end(), '/', '_');
    if (!written.insert(name).second) continue;
    write_text(out / "confusion" / (name + ".csv"), confusion_csv(r.confusion));
    files.push_back("confusion/" + name + ".csv");
  }
  bool logs = false, models = false;
  for (const auto& run : result.runs) {
    if (!run.round_log.empty()) {
      if (!logs) make_dirs(out / "round_logs");
      logs = true;
      write_text(out / "round_logs" / (run.label + ".csv"), run.round_log);
      files.push_back("round_logs/" + run.label + ".csv");
    }
    for (const auto& [label, state] : run.backbones) {
      if (!models) make_dirs(out / "models");
      models = true;
      save_state(state, (out / "models" / (label + ".ftwn")).string());
      files.push_back("models/" + label + ".ftwn");
    }
  }

  nlohmann::ordered_json m;
  m["software"] = "fedtwins";
  m["version"] = FEDTWINS_VERSION;
  m["spec_name"] = result.spec.name;
  m["spec_id"] = result.spec.id();
  char hex[24];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(result.spec.hash()));
  m["spec_hash"] = hex;
  m["kind"] = kind_name(result.spec.kind);
  m["seeds"] = result.spec.seeds;
  auto methods = nlohmann::ordered_json::array();
  for (Method x : result.spec.methods) methods.push_back(method_name(x));
  m["methods"] = methods;
  m["runs"] = result.runs.size();
  m["result_rows"] = rows.size();
  m["threads"] = result.threads;
  nlohmann::ordered_json d;
  d["source"] = result.spec.data.dataset.empty() ? std::string("synthetic") : result.spec.data.dataset;
  d["profile_version"] = result.spec.data.profile_version;
  d["seconds"] = result.spec.data.seconds;
  d["sample_rate"] = result.spec.data.sample_rate;
  d["data_seed"] = result.spec.data.seed;
  d["split_fraction"] = result.spec.data.split_fraction;
  d["split_seed"] = result.spec.data.split_seed;
  m["data"] = d;
  files.push_back("manifest.json");
  m["files"] = files;
  write_text(out / "manifest.json", m.dump(2) + "\n");
}

void report_from_results(const std::string& results_path, const std::string& out_dir) {
  std::ifstream in(results_path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + results_path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto summary = summarize(parse_results_csv(ss.str(), results_path));
  const std::filesystem::path out(out_dir);
  make_dirs(out);
  write_text(out / "summary.csv", summary_csv(summary));
  write_text(out / "plot.csv", plot_csv(summary));
}

}  // namespace fedtwins
