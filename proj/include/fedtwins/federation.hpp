#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedtwins/data.hpp"
#include "fedtwins/models.hpp"
#include "fedtwins/optim.hpp"
#include "fedtwins/training.hpp"

namespace fedtwins {

// w = (1 / sum a) * sum_j a_j * w_j, applied to every entry (parameters and running statistics).
ModelState federated_average(const std::vector<ModelState>& states, const std::vector<double>& weights);

struct Client {
  int id = 0;
  WindowDataset dataset;
  std::uint64_t seed = 0;  // minibatch and augmentation stream
  ModelState local;
  AdamState optimizer;
  std::uint64_t examples = 0;  // a_j for the current round

  Client(int client_id, WindowDataset data, std::uint64_t stream_seed)
      : id(client_id), dataset(std::move(data)), seed(stream_seed) {}
};

struct FederationConfig {
  std::size_t rounds = 1000;
  std::size_t local_batches = 20;
  std::size_t batch_size = 128;
  double lr = 0.0002;
  TrainStepConfig step{};
  // Clear each client's Adam moments at the start of every round instead of carrying them over.
  bool reset_optimizer_each_round = false;
  // Clients trained concurrently within a round (1 = sequential).
  std::size_t threads = 1;
};

struct ClientRoundResult {
  int client_id = 0;
  double mean_loss = 0.0;
  std::uint64_t examples = 0;
  bool excluded = false;  // a batch was degenerate; the client sat this round out
  std::string error;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<ClientRoundResult> clients;
  std::uint64_t global_checksum = 0;

  std::uint64_t total_examples() const;
};

// Copies `global` into the client, runs `n_batches` Adam steps on minibatches
// drawn uniformly with replacement, and records a_j = n_batches * batch_size.
// Supervised labels are the condition codes. A degenerate batch excludes the
// client (a_j = 0, local state reset to `global`).
ClientRoundResult client_round(Client& client, const ModelState& global, std::size_t round, std::size_t n_batches,
                               const FederationConfig& config);

struct FederationResult {
  ModelState global;
  std::vector<RoundRecord> rounds;
};

// Distribute, train locally, collect, average, for `config.rounds` rounds.
// Results do not depend on `config.threads`.
FederationResult run_federation(std::vector<Client>& clients, const ModelState& initial, const FederationConfig& config);

// CSV: round,client_id,mean_loss,a_j,global_checksum
std::string round_log_csv(const std::vector<RoundRecord>& records);

}  // namespace fedtwins
