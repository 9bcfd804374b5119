#include "fedtwins/losses.hpp"

#include <algorithm>

#include "fedtwins/error.hpp"

namespace fedtwins {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor y(Shape{labels.size(), classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    require(labels[b] < classes, ErrorCode::Range,
            "label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(classes) + ")");
    y.at(b, labels[b]) = 1.0;
  }
  return y;
}

Var cross_entropy(Var probs, const Tensor& labels) {
  const Tensor& p = probs.value();
  require(p.rank() == 2 && p.shape()[0] >= 1, ErrorCode::Dimension, "cross_entropy expects probabilities (B,K)");
  require(labels.shape() == p.shape(), ErrorCode::Dimension,
          "labels " + shape_string(labels.shape()) + " do not match probabilities " + shape_string(p.shape()));
  const std::size_t batch = p.shape()[0], classes = p.shape()[1];
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      const double v = labels.at(b, k);
      require(v == 0.0 || v == 1.0, ErrorCode::Contract, "label row " + std::to_string(b) + " is not one-hot");
      ones += v == 1.0;
    }
    require(ones == 1, ErrorCode::Contract, "label row " + std::to_string(b) + " is not one-hot");
  }
  Tape& tape = *probs.tape;
  Var logp = ops::log(ops::clamp_min(probs, kProbabilityFloor));
  Var picked = ops::mul(tape.constant(labels), logp);
  return ops::scale(ops::sum_all(picked), -1.0 / static_cast<double>(batch));
}

Var normalize_projections(Var z) {
  const Tensor& zv = z.value();
  require(zv.rank() == 2, ErrorCode::Dimension, "normalize_projections expects (B,P)");
  const std::size_t batch = zv.shape()[0];
  require(batch >= 2, ErrorCode::DegenerateBatch, "normalize_projections needs a batch of at least 2");
  Var mu = ops::mean(z, 0);
  Var centered = ops::sub(z, ops::broadcast_rows(mu, batch));
  Var var = ops::mean(ops::square(centered), 0);
  const Tensor& vv = var.value();
  for (std::size_t i = 0; i < vv.numel(); ++i)
    if (!(vv[i] > kMinProjectionVariance))
      fail(ErrorCode::DegenerateBatch, "projection dimension " + std::to_string(i) + " has zero variance");
  Var sigma = ops::sqrt(var);
  return ops::div(centered, ops::broadcast_rows(sigma, batch));
}

Var cross_correlation(Var zhat1, Var zhat2) {
  require(zhat1.shape() == zhat2.shape() && zhat1.shape().size() == 2, ErrorCode::Dimension,
          "cross_correlation needs matching (B,P) inputs, got " + shape_string(zhat1.shape()) + " and " +
              shape_string(zhat2.shape()));
  const double batch = static_cast<double>(zhat1.shape()[0]);
  return ops::scale(ops::matmul(ops::transpose(zhat1), zhat2), 1.0 / batch);
}

Var barlow_twins_loss(Var r, double lambda, BarlowForm form) {
  const Tensor& rv = r.value();
  require(rv.rank() == 2 && rv.shape()[0] == rv.shape()[1], ErrorCode::Dimension,
          "barlow_twins_loss expects a square matrix, got " + shape_string(rv.shape()));
  const std::size_t p = rv.shape()[0];
  Tape& tape = *r.tape;
  Var diff = ops::sub(r, tape.constant(Tensor::identity(p)));
  if (form == BarlowForm::Canonical) {
    Tensor weights(Shape{p, p}, lambda);
    for (std::size_t i = 0; i < p; ++i) weights.at(i, i) = 1.0;
    return ops::sum_all(ops::mul(tape.constant(std::move(weights)), ops::square(diff)));
  }
  Var on_diagonal = ops::trace(ops::matmul(diff, diff));
  Var off_diagonal = ops::sub(ops::sum_all(r), ops::trace(r));
  return ops::add(on_diagonal, ops::scale(off_diagonal, lambda));
}

Var barlow_twins_step_loss(const BoundState& params, const BackboneConfig& backbone, const Tensor& x, Rng& rng,
                           const BarlowStepConfig& config) {
  require(x.rank() == 3 && x.shape()[0] >= 2, ErrorCode::DegenerateBatch, "Barlow Twins needs a batch of at least 2");
  Tape& tape = *params["projector.fc0.weight"].tape;
  Tensor view1 = randomly_augment(x, rng, config.augment);
  Tensor view2 = randomly_augment(x, rng, config.augment);
  Var z1 = projector_forward(params, backbone_forward(params, backbone, tape.constant(std::move(view1))));
  Var z2 = projector_forward(params, backbone_forward(params, backbone, tape.constant(std::move(view2))));
  Var r = cross_correlation(normalize_projections(z1), normalize_projections(z2));
  return barlow_twins_loss(r, config.lambda, config.form);
}

Var supervised_step_loss(const BoundState& params, const BackboneConfig& backbone, const Tensor& x,
                         std::span<const std::size_t> labels, std::size_t classes) {
  require(x.rank() == 3 && x.shape()[0] == labels.size(), ErrorCode::Dimension, "one label per window required");
  Tape& tape = *params["classifier.weight"].tape;
  Var probs = classifier_forward(params, backbone_forward(params, backbone, tape.constant(x)));
  return cross_entropy(probs, one_hot(labels, classes));
}

}  // namespace fedtwins
