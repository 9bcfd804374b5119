#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedtwins/models.hpp"

namespace fedtwins {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  // First and second moments, aligned with the state's entries (running
  // statistics get empty placeholders). Lazily sized on the first step.
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  explicit AdamState(double learning_rate = 1e-3) : lr(learning_rate) {}

  // Drops moments and the step counter; keeps hyperparameters.
  void reset();

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Bias-corrected Adam update of every trained parameter. Running statistics are untouched.
void adam_step(AdamState& opt, ModelState& state, const Gradients& grads);

// w <- w - lr * g for every trained parameter.
void sgd_step(double lr, ModelState& state, const Gradients& grads);

// Optimizer checkpoint ("FTAD").
std::vector<std::uint8_t> encode_adam(const AdamState& opt);
AdamState decode_adam(std::vector<std::uint8_t> bytes);
void save_adam(const AdamState& opt, const std::string& path);
AdamState load_adam(const std::string& path);

}  // namespace fedtwins
