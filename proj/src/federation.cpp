#include "fedtwins/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "fedtwins/error.hpp"

namespace fedtwins {

ModelState federated_average(const std::vector<ModelState>& states, const std::vector<double>& weights) {
  require(!states.empty(), ErrorCode::Contract, "federated_average needs at least one state");
  require(states.size() == weights.size(), ErrorCode::Contract, "one weight per state required");
  double total = 0.0;
  for (double a : weights) {
    require(a >= 0.0 && std::isfinite(a), ErrorCode::DegenerateWeights, "client weights must be finite and nonnegative");
    total += a;
  }
  require(total > 0.0, ErrorCode::DegenerateWeights, "client weights sum to zero");
  for (std::size_t j = 1; j < states.size(); ++j)
    require(states[j].same_architecture(states[0]), ErrorCode::Contract,
            "client " + std::to_string(j) + " state does not match the architecture of client 0");

  ModelState out = states[0];
  for (std::size_t e = 0; e < out.size(); ++e) {
    Tensor& acc = out.entries()[e].tensor;
    std::fill(acc.data().begin(), acc.data().end(), 0.0);
    for (std::size_t j = 0; j < states.size(); ++j) {
      const double c = weights[j] / total;
      if (c == 0.0) continue;
      const Tensor& w = states[j].entries()[e].tensor;
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += c * w[i];
    }
  }
  return out;
}

std::uint64_t RoundRecord::total_examples() const {
  std::uint64_t total = 0;
  for (const auto& c : clients) total += c.examples;
  return total;
}

ClientRoundResult client_round(Client& client, const ModelState& global, std::size_t round, std::size_t n_batches,
                               const FederationConfig& config) {
  ClientRoundResult result;
  result.client_id = client.id;
  client.local = global;
  client.examples = 0;
  if (n_batches == 0) return result;
  require(!client.dataset.empty(), ErrorCode::EmptySubset, "client " + std::to_string(client.id) + " has no data");
  require(config.batch_size > 0, ErrorCode::Contract, "batch size must be positive");

  if (config.reset_optimizer_each_round) client.optimizer.reset();
  client.optimizer.lr = config.lr;
  const AdamState saved_optimizer = client.optimizer;

  Rng rng = Rng(client.seed).split(round);
  const std::vector<std::size_t> codes = client.dataset.label_codes();
  std::vector<std::size_t> idx(config.batch_size);
  std::vector<std::size_t> labels(config.batch_size);
  double total = 0.0;
  try {
    for (std::size_t b = 0; b < n_batches; ++b) {
      for (std::size_t i = 0; i < config.batch_size; ++i) {
        idx[i] = rng.below(client.dataset.size());
        labels[i] = codes[idx[i]];
      }
      total += train_step(client.local, client.optimizer, config.step, client.dataset.gather(idx), labels, rng);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateBatch) throw;
    client.local = global;
    client.optimizer = saved_optimizer;
    result.excluded = true;
    result.error = e.what();
    return result;
  }
  result.mean_loss = total / static_cast<double>(n_batches);
  result.examples = n_batches * config.batch_size;
  client.examples = result.examples;
  return result;
}

FederationResult run_federation(std::vector<Client>& clients, const ModelState& initial, const FederationConfig& config) {
  require(!clients.empty(), ErrorCode::Contract, "federation needs at least one client");
  FederationResult out;
  out.global = initial;
  out.rounds.reserve(config.rounds);
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, clients.size()));

  for (std::size_t round = 1; round <= config.rounds; ++round) {
    RoundRecord record;
    record.round = round;
    record.clients.resize(clients.size());
    if (workers == 1) {
      for (std::size_t j = 0; j < clients.size(); ++j)
        record.clients[j] = client_round(clients[j], out.global, round, config.local_batches, config);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(clients.size());
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
          for (std::size_t j = next++; j < clients.size(); j = next++) {
            try {
              record.clients[j] = client_round(clients[j], out.global, round, config.local_batches, config);
            } catch (...) {
              errors[j] = std::current_exception();
            }
          }
        });
      for (auto& t : pool) t.join();
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    }

    if (config.local_batches > 0) {
      std::vector<ModelState> states;
      std::vector<double> weights;
      for (std::size_t j = 0; j < clients.size(); ++j) {
        states.push_back(clients[j].local);
        weights.push_back(static_cast<double>(clients[j].examples));
      }
      if (record.total_examples() == 0)
        fail(ErrorCode::FederationStall, "every client was excluded in round " + std::to_string(round));
      out.global = federated_average(states, weights);
    }
    record.global_checksum = out.global.checksum();
    out.rounds.push_back(std::move(record));
  }
  return out;
}

std::string round_log_csv(const std::vector<RoundRecord>& records) {
  std::string csv = "round,client_id,mean_loss,a_j,global_checksum\n";
  char line[160];
  for (const auto& r : records)
    for (const auto& c : r.clients) {
      std::snprintf(line, sizeof line, "%zu,%d,%.17g,%llu,%016llx\n", r.round, c.client_id, c.mean_loss,
                    static_cast<unsigned long long>(c.examples), static_cast<unsigned long long>(r.global_checksum));
      csv += line;
    }
  return csv;
}

}  // namespace fedtwins
