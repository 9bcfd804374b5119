#pragma once

#include <cstddef>
#include <span>

#include "fedtwins/augment.hpp"
#include "fedtwins/models.hpp"
#include "fedtwins/rng.hpp"
#include "fedtwins/tensor.hpp"

namespace fedtwins {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kMinProjectionVariance = 1e-12;

// Builds a (B,K) one-hot matrix from class indices.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes);

// -(1/B) * sum_b log(max(probs[b, y_b], 1e-12)). `labels` must be one-hot rows.
Var cross_entropy(Var probs, const Tensor& labels);

// Per column of Z [B,P]: subtract the batch mean and divide by the population
// standard deviation. Throws DegenerateBatch for a (near) zero-variance column.
Var normalize_projections(Var z);

// R = Zhat1^T Zhat2 / B, a (P,P) feature-by-feature matrix.
Var cross_correlation(Var zhat1, Var zhat2);

enum class BarlowForm {
  // sum_i (1 - R_ii)^2 + lambda * sum_{i != j} R_ij^2
  Canonical,
  // tr((R - I)^2) + lambda * sum_{i != j} R_ij, with the matrix square; unbounded below.
  Literal,
};

Var barlow_twins_loss(Var r, double lambda, BarlowForm form = BarlowForm::Canonical);

struct BarlowStepConfig {
  double lambda = 0.01;
  BarlowForm form = BarlowForm::Canonical;
  AugmentConfig augment{};
};

// Two independent augmentations -> backbone -> projector -> normalize -> R -> loss.
// `params` must hold backbone and projector entries.
Var barlow_twins_step_loss(const BoundState& params, const BackboneConfig& backbone, const Tensor& x, Rng& rng,
                           const BarlowStepConfig& config = {});

// Classifier-head forward + cross-entropy over integer labels in [0, K).
Var supervised_step_loss(const BoundState& params, const BackboneConfig& backbone, const Tensor& x,
                         std::span<const std::size_t> labels, std::size_t classes);

}  // namespace fedtwins
