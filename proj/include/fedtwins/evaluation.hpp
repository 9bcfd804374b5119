#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedtwins/data.hpp"
#include "fedtwins/models.hpp"

namespace fedtwins {

// Frozen backbone features [N, D]. Runs in chunks; records no gradients.
Tensor extract_features(const ModelState& backbone, const BackboneConfig& config, const WindowDataset& ds,
                        std::size_t chunk = 256);

struct ProbeConfig {
  std::size_t epochs = 75;
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t classes = kNumConditions;
  // Standardize features with the training mean and std before the linear layer.
  bool standardize = true;
};

// Linear layer + softmax ("probe.weight", "probe.bias") trained with
// cross-entropy and Adam. Standardization statistics are stored as running
// statistics "probe.feature_mean" and "probe.feature_std".
ModelState train_linear_probe(const Tensor& features, std::span<const std::size_t> labels, const ProbeConfig& config,
                              std::uint64_t seed);

// Arg-max class per row (ties resolve to the lowest index).
std::vector<std::size_t> probe_predict(const ModelState& probe, const Tensor& features);

struct ConfusionMatrix {
  // counts[true][predicted]
  std::array<std::array<std::uint64_t, kNumConditions>, kNumConditions> counts{};

  std::uint64_t total() const;
  std::uint64_t correct() const;
  double accuracy() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted);

// Row-normalized diagonal; NaN for a class with no examples.
std::array<double, kNumConditions> per_class_recall(const ConfusionMatrix& cm);

struct Evaluation {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

Evaluation evaluate(const ModelState& probe, const Tensor& features, std::span<const std::size_t> labels);

// {"method","seed","condition_set","accuracy","per_class_recall":[8]}; absent classes are null.
std::string metrics_json(const std::string& method, std::uint64_t seed, const std::string& condition_set,
                         const Evaluation& result);

// 8x8 counts followed by the row-normalized percentages.
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace fedtwins
