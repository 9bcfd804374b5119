#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedtwins/losses.hpp"
#include "fedtwins/models.hpp"
#include "fedtwins/optim.hpp"
#include "fedtwins/rng.hpp"

namespace fedtwins {

enum class Objective { Supervised, BarlowTwins };

struct TrainStepConfig {
  Objective objective = Objective::BarlowTwins;
  BackboneConfig backbone{};
  std::size_t classes = 8;         // supervised head width
  ProjectorConfig projector{};
  BarlowStepConfig barlow{};
};

// Backbone plus the objective's head (classifier or projector), freshly initialized.
ModelState initial_state(const TrainStepConfig& config, std::uint64_t seed);

// One forward/backward pass and Adam update on batch `x`. `labels` is ignored
// for Barlow Twins. Returns the batch loss.
double train_step(ModelState& state, AdamState& opt, const TrainStepConfig& config, const Tensor& x,
                  std::span<const std::size_t> labels, Rng& rng);

// Shuffled minibatches covering one epoch over n examples. Incomplete trailing
// batches are dropped, except that n < batch_size gives a single batch of n.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng);

// `epochs` passes over (windows, labels). Returns the mean loss of each epoch.
std::vector<double> train_epochs(ModelState& state, AdamState& opt, const TrainStepConfig& config,
                                 const Tensor& windows, std::span<const std::size_t> labels, std::size_t epochs,
                                 std::size_t batch_size, Rng& rng);

// Rows `indices` of a (N,...) tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace fedtwins
