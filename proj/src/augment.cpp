#include "fedtwins/augment.hpp"

#include <algorithm>
#include <cmath>

#include "fedtwins/error.hpp"

namespace fedtwins {

namespace {

void check_batch(const Tensor& x, const char* op) {
  require(x.rank() == 3, ErrorCode::Dimension,
          std::string(op) + " expects a (B,C,L) batch, got " + shape_string(x.shape()));
}

}  // namespace

void AugmentConfig::validate(std::size_t length) const {
  require(min_scale > 0.0 && min_scale <= 1.0, ErrorCode::Contract, "min_scale must lie in (0, 1]");
  require(mask_size > 0 && mask_size < length, ErrorCode::Contract,
          "mask_size must lie in (0, " + std::to_string(length) + ")");
}

Tensor jitter(const Tensor& x, std::size_t shift) {
  check_batch(x, "jitter");
  const std::size_t len = x.shape()[2];
  require(shift < len, ErrorCode::Contract,
          "jitter shift " + std::to_string(shift) + " outside [0, " + std::to_string(len) + ")");
  Tensor out(x.shape());
  const std::size_t rows = x.shape()[0] * x.shape()[1];
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.raw() + r * len;
    double* dst = out.raw() + r * len;
    std::copy(src + shift, src + len, dst);
    std::copy(src, src + shift, dst + (len - shift));
  }
  return out;
}

Tensor random_scale(const Tensor& x, std::span<const double> uniforms, double min_scale) {
  check_batch(x, "random_scale");
  const std::size_t batch = x.shape()[0];
  const std::size_t per_example = x.shape()[1] * x.shape()[2];
  require(uniforms.size() == batch, ErrorCode::Contract, "random_scale needs one uniform per example");
  Tensor out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.raw() + b * per_example;
    double vmax = 0.0;
    for (std::size_t i = 0; i < per_example; ++i) vmax = std::max(vmax, std::fabs(src[i]));
    if (vmax == 0.0)
      fail(ErrorCode::NumericDomain, "random_scale: example " + std::to_string(b) + " is all zeros");
    const double max_scale = 1.0 / vmax;
    const double s = uniforms[b] * (max_scale - min_scale) + min_scale;
    double* dst = out.raw() + b * per_example;
    for (std::size_t i = 0; i < per_example; ++i) dst[i] = src[i] * s;
  }
  return out;
}

Tensor random_mask(const Tensor& x, std::size_t start, std::size_t mask_size) {
  check_batch(x, "random_mask");
  const std::size_t len = x.shape()[2];
  require(mask_size <= len && start <= len - mask_size, ErrorCode::Contract,
          "mask start " + std::to_string(start) + " outside [0, " + std::to_string(len - std::min(len, mask_size)) +
              "]");
  Tensor out = x;
  const std::size_t rows = x.shape()[0] * x.shape()[1];
  for (std::size_t r = 0; r < rows; ++r) std::fill_n(out.raw() + r * len + start, mask_size, 0.0);
  return out;
}

AugmentDraws draw_augmentation(std::size_t batch, std::size_t length, Rng& rng, const AugmentConfig& config) {
  config.validate(length);
  AugmentDraws d;
  d.shift = static_cast<std::size_t>(rng.below(length));
  d.uniforms.resize(batch);
  for (double& u : d.uniforms) u = rng.uniform();
  d.mask_start = static_cast<std::size_t>(rng.below(length - config.mask_size));
  return d;
}

Tensor apply_augmentation(const Tensor& x, const AugmentDraws& draws, const AugmentConfig& config) {
  Tensor out = jitter(x, draws.shift);
  out = random_scale(out, draws.uniforms, config.min_scale);
  return random_mask(out, draws.mask_start, config.mask_size);
}

Tensor randomly_augment(const Tensor& x, Rng& rng, const AugmentConfig& config) {
  check_batch(x, "randomly_augment");
  const AugmentDraws draws = draw_augmentation(x.shape()[0], x.shape()[2], rng, config);
  return apply_augmentation(x, draws, config);
}

}  // namespace fedtwins
