#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedtwins/rng.hpp"
#include "fedtwins/tensor.hpp"

namespace fedtwins {

struct AugmentConfig {
  double min_scale = 0.1;
  std::size_t mask_size = 64;

  void validate(std::size_t length) const;
};

// Circular left rotation of the time axis: out[..., t] = x[..., (t + shift) mod L].
Tensor jitter(const Tensor& x, std::size_t shift);

// Per-example scale s_b = u_b * (1/max|x_b| - min_scale) + min_scale, where the
// max runs over all channels and samples of example b.
Tensor random_scale(const Tensor& x, std::span<const double> uniforms, double min_scale = 0.1);

// Zeroes x[..., start : start + mask_size] for every example and channel.
Tensor random_mask(const Tensor& x, std::size_t start, std::size_t mask_size = 64);

// jitter -> scale -> mask. One shift and one mask start per batch, one scale per example.
Tensor randomly_augment(const Tensor& x, Rng& rng, const AugmentConfig& config = {});

// The random draws randomly_augment makes, exposed so callers can invert or replay them.
struct AugmentDraws {
  std::size_t shift = 0;
  std::vector<double> uniforms;
  std::size_t mask_start = 0;
};
AugmentDraws draw_augmentation(std::size_t batch, std::size_t length, Rng& rng, const AugmentConfig& config);
Tensor apply_augmentation(const Tensor& x, const AugmentDraws& draws, const AugmentConfig& config);

}  // namespace fedtwins
