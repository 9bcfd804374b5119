#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fedtwins/tensor.hpp"

namespace fedtwins {

enum class EntryKind : std::uint8_t { Parameter = 0, RunningStatistic = 1 };

struct StateEntry {
  std::string name;
  EntryKind kind = EntryKind::Parameter;
  Tensor tensor;

  friend bool operator==(const StateEntry&, const StateEntry&) = default;
};

// Ordered, uniquely named tensors. Two states built from the same
// architecture are index-aligned, which is what federated averaging relies on.
class ModelState {
 public:
  void add(std::string name, EntryKind kind, Tensor tensor);

  const std::vector<StateEntry>& entries() const noexcept { return entries_; }
  std::vector<StateEntry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  // Entries whose names start with `prefix`, in order.
  ModelState subset(std::string_view prefix) const;
  // Appends every entry of `other`; names must stay unique.
  void merge(const ModelState& other);

  std::size_t parameter_count() const;
  // Hash of names, kinds and shapes (not values).
  std::uint64_t architecture_hash() const;
  // Hash of the architecture and every value bit.
  std::uint64_t checksum() const;
  bool same_architecture(const ModelState& other) const;

  friend bool operator==(const ModelState&, const ModelState&) = default;

 private:
  std::vector<StateEntry> entries_;
};

using Gradients = std::map<std::string, Tensor>;

struct ConvBlock {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t length = 256;
  std::vector<ConvBlock> blocks{{16, 7, 2}, {32, 5, 2}, {64, 3, 2}};

  std::size_t feature_dim() const { return blocks.empty() ? in_channels : blocks.back().out_channels; }
  void validate() const;
};

struct ClassifierConfig {
  std::size_t feature_dim = 64;
  std::size_t classes = 8;
};

struct ProjectorConfig {
  std::size_t feature_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t projection_dim = 128;
};

// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases. Entry names are
// prefixed "backbone.", "classifier." or "projector." (or `prefix` when given).
ModelState init_weights(const BackboneConfig& config, std::uint64_t seed);
ModelState init_weights(const ClassifierConfig& config, std::uint64_t seed, std::string_view prefix = "classifier");
ModelState init_weights(const ProjectorConfig& config, std::uint64_t seed);
double kaiming_uniform_bound(std::size_t fan_in);

// Binds state entries to tape leaves for one forward/backward pass.
class BoundState {
 public:
  BoundState(Tape& tape, const ModelState& state, bool trainable);

  Var operator[](std::string_view name) const;
  // Gradients of all trained parameters after tape.backward().
  Gradients gradients() const;

 private:
  Tape* tape_;
  std::vector<std::pair<std::string, Var>> vars_;
  std::vector<EntryKind> kinds_;
};

// x [B,C,L] -> features [B,D]: conv+relu blocks, then global average pooling over time.
Var backbone_forward(const BoundState& params, const BackboneConfig& config, Var x);
Var classifier_logits(const BoundState& params, Var features, std::string_view prefix = "classifier");
// Softmax probabilities [B,K].
Var classifier_forward(const BoundState& params, Var features, std::string_view prefix = "classifier");
// features [B,D] -> projections [B,P]: linear, relu, linear.
Var projector_forward(const BoundState& params, Var features);

// Inference-only conveniences (no gradients recorded).
Tensor backbone_forward(const ModelState& state, const BackboneConfig& config, const Tensor& x);
Tensor classifier_forward(const ModelState& state, const Tensor& features, std::size_t classes,
                          std::string_view prefix = "classifier");
Tensor projector_forward(const ModelState& state, const Tensor& features);

// Weight file ("FTWN").
std::vector<std::uint8_t> encode_state(const ModelState& state);
ModelState decode_state(std::vector<std::uint8_t> bytes, const std::string& what = "weight file");
void save_state(const ModelState& state, const std::string& path);
ModelState load_state(const std::string& path);
// Fails unless the stored architecture hash equals `expected_architecture`.
ModelState load_state(const std::string& path, std::uint64_t expected_architecture);

}  // namespace fedtwins
