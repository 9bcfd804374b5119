#include "fedtwins/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "json.hpp"

#include "fedtwins/error.hpp"
#include "fedtwins/losses.hpp"
#include "fedtwins/optim.hpp"
#include "fedtwins/training.hpp"

namespace fedtwins {

namespace {

constexpr double kMinFeatureStd = 1e-12;

Tensor standardized(const ModelState& probe, const Tensor& features) {
  if (!probe.contains("probe.feature_mean")) return features;
  const Tensor& mean = probe.get("probe.feature_mean");
  const Tensor& std = probe.get("probe.feature_std");
  const std::size_t n = features.shape()[0], d = features.shape()[1];
  require(mean.numel() == d, ErrorCode::Dimension, "probe expects " + std::to_string(mean.numel()) + " features, got " +
                                                       std::to_string(d));
  Tensor out = features;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = (features.at(i, j) - mean[j]) / std[j];
  return out;
}

}  // namespace

Tensor extract_features(const ModelState& backbone, const BackboneConfig& config, const WindowDataset& ds,
                        std::size_t chunk) {
  require(chunk > 0, ErrorCode::Contract, "chunk size must be positive");
  const std::size_t n = ds.size();
  const std::size_t d = config.feature_dim();
  Tensor out(Shape{n, d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) idx.push_back(i);
    const Tensor f = backbone_forward(backbone, config, ds.gather(idx));
    std::copy(f.data().begin(), f.data().end(), out.raw() + start * d);
  }
  return out;
}

ModelState train_linear_probe(const Tensor& features, std::span<const std::size_t> labels, const ProbeConfig& config,
                              std::uint64_t seed) {
  require(features.rank() == 2, ErrorCode::Dimension, "probe features must be (N,D)");
  const std::size_t n = features.shape()[0], d = features.shape()[1];
  require(labels.size() == n, ErrorCode::Dimension, "one label per feature row required");
  for (std::size_t y : labels) require(y < config.classes, ErrorCode::Range, "label outside [0, classes)");
  require(std::set<std::size_t>(labels.begin(), labels.end()).size() >= 2, ErrorCode::Contract,
          "linear probe needs at least two distinct labels");

  ModelState probe = init_weights(ClassifierConfig{d, config.classes}, seed, "probe");
  Tensor mean(Shape{d}, 0.0), std(Shape{d}, 1.0);
  if (config.standardize) {
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += features.at(i, j);
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += (features.at(i, j) - m) * (features.at(i, j) - m);
      const double s = std::sqrt(v / static_cast<double>(n));
      mean[j] = m;
      std[j] = s > kMinFeatureStd ? s : 1.0;
    }
  }
  probe.add("probe.feature_mean", EntryKind::RunningStatistic, std::move(mean));
  probe.add("probe.feature_std", EntryKind::RunningStatistic, std::move(std));
  const Tensor x = standardized(probe, features);

  AdamState opt(config.lr);
  Rng rng = Rng(seed).split(7);
  std::vector<std::size_t> batch_labels;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (const auto& idx : epoch_batches(n, config.batch_size, rng)) {
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);
      Tape tape;
      BoundState params(tape, probe, true);
      Var probs = classifier_forward(params, tape.constant(gather_rows(x, idx)), "probe");
      Var loss = cross_entropy(probs, one_hot(batch_labels, config.classes));
      tape.backward(loss);
      adam_step(opt, probe, params.gradients());
    }
  }
  return probe;
}

std::vector<std::size_t> probe_predict(const ModelState& probe, const Tensor& features) {
  require(features.rank() == 2, ErrorCode::Dimension, "probe features must be (N,D)");
  const std::size_t classes = probe.get("probe.bias").numel();
  const Tensor logits = classifier_forward(probe, standardized(probe, features), classes, "probe");
  std::vector<std::size_t> out(features.shape()[0]);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    out[i] = best;
  }
  return out;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (auto c : row) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kNumConditions; ++i) t += counts[i][i];
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  require(t > 0, ErrorCode::Contract, "accuracy of an empty confusion matrix");
  return static_cast<double>(correct()) / static_cast<double>(t);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t i = 0; i < kNumConditions; ++i)
    for (std::size_t j = 0; j < kNumConditions; ++j) counts[i][j] += other.counts[i][j];
  return *this;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
  require(truth.size() == predicted.size(), ErrorCode::Dimension, "truth and prediction counts differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] < kNumConditions && predicted[i] < kNumConditions, ErrorCode::Range, "class code outside [0, 8)");
    ++cm.counts[truth[i]][predicted[i]];
  }
  return cm;
}

std::array<double, kNumConditions> per_class_recall(const ConfusionMatrix& cm) {
  std::array<double, kNumConditions> out{};
  for (std::size_t i = 0; i < kNumConditions; ++i) {
    std::uint64_t row = 0;
    for (auto c : cm.counts[i]) row += c;
    out[i] = row ? static_cast<double>(cm.counts[i][i]) / static_cast<double>(row)
                 : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Evaluation evaluate(const ModelState& probe, const Tensor& features, std::span<const std::size_t> labels) {
  require(!labels.empty(), ErrorCode::Contract, "cannot evaluate on an empty set");
  require(features.rank() == 2 && features.shape()[0] == labels.size(), ErrorCode::Dimension,
          "one label per feature row required");
  Evaluation out;
  out.confusion = confusion_matrix(labels, probe_predict(probe, features));
  out.accuracy = out.confusion.accuracy();
  return out;
}

std::string metrics_json(const std::string& method, std::uint64_t seed, const std::string& condition_set,
                         const Evaluation& result) {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["seed"] = seed;
  j["condition_set"] = condition_set;
  j["accuracy"] = result.accuracy;
  auto recall = nlohmann::ordered_json::array();
  for (double r : per_class_recall(result.confusion)) recall.push_back(std::isnan(r) ? nlohmann::ordered_json() : nlohmann::ordered_json(r));
  j["per_class_recall"] = recall;
  return j.dump();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string csv = "true\\predicted";
  for (Condition c : kAllConditions) csv += "," + std::string(condition_name(c));
  csv += "\n";
  for (Condition t : kAllConditions) {
    csv += condition_name(t);
    for (auto v : cm.counts[code(t)]) csv += "," + std::to_string(v);
    csv += "\n";
  }
  csv += "\nrow_percent";
  for (Condition c : kAllConditions) csv += "," + std::string(condition_name(c));
  csv += "\n";
  char buf[32];
  for (Condition t : kAllConditions) {
    std::uint64_t row = 0;
    for (auto v : cm.counts[code(t)]) row += v;
    csv += condition_name(t);
    for (auto v : cm.counts[code(t)]) {
      if (row == 0) {
        csv += ",";
        continue;
      }
      std::snprintf(buf, sizeof buf, ",%.2f", 100.0 * static_cast<double>(v) / static_cast<double>(row));
      csv += buf;
    }
    csv += "\n";
  }
  return csv;
}

}  // namespace fedtwins
