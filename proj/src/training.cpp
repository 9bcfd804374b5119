#include "fedtwins/training.hpp"

#include <algorithm>

#include "fedtwins/error.hpp"

namespace fedtwins {

ModelState initial_state(const TrainStepConfig& config, std::uint64_t seed) {
  ModelState state = init_weights(config.backbone, seed);
  if (config.objective == Objective::Supervised)
    state.merge(init_weights(ClassifierConfig{config.backbone.feature_dim(), config.classes}, seed));
  else
    state.merge(init_weights(ProjectorConfig{config.backbone.feature_dim(), config.projector.hidden_dim,
                                             config.projector.projection_dim},
                             seed));
  return state;
}

double train_step(ModelState& state, AdamState& opt, const TrainStepConfig& config, const Tensor& x,
                  std::span<const std::size_t> labels, Rng& rng) {
  Tape tape;
  BoundState params(tape, state, true);
  Var loss = config.objective == Objective::Supervised
                 ? supervised_step_loss(params, config.backbone, x, labels, config.classes)
                 : barlow_twins_step_loss(params, config.backbone, x, rng, config.barlow);
  tape.backward(loss);
  const double value = loss.value().item();
  adam_step(opt, state, params.gradients());
  return value;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  require(n > 0, ErrorCode::Contract, "cannot batch an empty dataset");
  require(batch_size > 0, ErrorCode::Contract, "batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  if (n < batch_size) {
    batches.push_back(std::move(order));
    return batches;
  }
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  return batches;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require(x.rank() >= 1, ErrorCode::Dimension, "gather_rows needs a tensor with a leading axis");
  Shape shape = x.shape();
  const std::size_t rows = shape[0];
  const std::size_t per = rows ? x.numel() / rows : 0;
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < rows, ErrorCode::Range, "row index out of range");
    std::copy_n(x.raw() + indices[i] * per, per, out.raw() + i * per);
  }
  return out;
}

std::vector<double> train_epochs(ModelState& state, AdamState& opt, const TrainStepConfig& config,
                                 const Tensor& windows, std::span<const std::size_t> labels, std::size_t epochs,
                                 std::size_t batch_size, Rng& rng) {
  const std::size_t n = windows.shape().empty() ? 0 : windows.shape()[0];
  require(config.objective != Objective::Supervised || labels.size() == n, ErrorCode::Dimension,
          "one label per window required");
  std::vector<double> losses;
  losses.reserve(epochs);
  std::vector<std::size_t> batch_labels;
  for (std::size_t e = 0; e < epochs; ++e) {
    double total = 0.0;
    const auto batches = epoch_batches(n, batch_size, rng);
    for (const auto& idx : batches) {
      batch_labels.clear();
      if (config.objective == Objective::Supervised)
        for (std::size_t i : idx) batch_labels.push_back(labels[i]);
      total += train_step(state, opt, config, gather_rows(windows, idx), batch_labels, rng);
    }
    losses.push_back(total / static_cast<double>(batches.size()));
  }
  return losses;
}

}  // namespace fedtwins
