#include <cmath>

#include "doctest.h"
#include "fedtwins/optim.hpp"
#include "support/errors.hpp"
#include "support/oracles.hpp"

using namespace fedtwins;
using testing::error_code_of;

namespace {

ModelState toy() {
  ModelState s;
  s.add("w", EntryKind::Parameter, Tensor::vector({1.0, -2.0, 0.5}));
  s.add("stat", EntryKind::RunningStatistic, Tensor::vector({7.0}));
  s.add("b", EntryKind::Parameter, Tensor::scalar(0.25));
  return s;
}

Gradients grads_of(std::initializer_list<double> w, double b) {
  return {{"w", Tensor::vector(w)}, {"b", Tensor::scalar(b)}};
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    ModelState s = toy();
    AdamState opt(1e-3);
    adam_step(opt, s, grads_of({0, 0, 0}, 0));
    CHECK(s == toy());
    CHECK(opt.step_count == 1);
  }

  TEST_CASE("first Adam step moves each coordinate by at most lr") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
      ModelState s = toy();
      AdamState opt(5e-4);
      const double g0 = rng.normal(), g1 = 1e-3 * rng.normal(), g2 = 100 * rng.normal(), gb = rng.normal();
      adam_step(opt, s, grads_of({g0, g1, g2}, gb));
      const Tensor& w = s.get("w");
      const ModelState init = toy();
      const Tensor& w0 = init.get("w");
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(w[j] - w0[j]) <= 5e-4 + 1e-9);
      // With |g| >> eps the first step is lr * sign(g).
      CHECK(w[2] - w0[2] == doctest::Approx(-5e-4 * (g2 > 0 ? 1 : -1)).epsilon(1e-6));
    }
  }

  TEST_CASE("Adam matches a hand-rolled reference over several steps") {
    ModelState s = toy();
    AdamState opt(0.01);
    double w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
      const double g = 2.0 * w;  // gradient of w^2
      adam_step(opt, s, grads_of({g, 0, 0}, 0));
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(s.get("w")[0] == doctest::Approx(w).epsilon(1e-15));
    }
  }

  TEST_CASE("running statistics are never updated") {
    ModelState s = toy();
    AdamState opt(0.1);
    for (int i = 0; i < 3; ++i) adam_step(opt, s, grads_of({1, 1, 1}, 1));
    sgd_step(0.1, s, grads_of({1, 1, 1}, 1));
    CHECK(s.get("stat") == Tensor::vector({7.0}));
  }

  TEST_CASE("plain gradient step") {
    ModelState s;
    s.add("w", EntryKind::Parameter, Tensor::scalar(1.0));
    sgd_step(0.1, s, {{"w", Tensor::scalar(0.5)}});
    CHECK(s.get("w").item() == doctest::Approx(0.95).epsilon(1e-15));
  }

  TEST_CASE("bad gradients leave the state untouched") {
    ModelState s = toy();
    AdamState opt;
    CHECK(error_code_of([&] { adam_step(opt, s, {{"w", Tensor::vector({1, 1, 1})}}); }) == ErrorCode::Contract);
    CHECK(error_code_of([&] { adam_step(opt, s, grads_of({1, 1}, 1)); }) == ErrorCode::Dimension);
    CHECK(s == toy());
    CHECK(opt.step_count == 0);
    adam_step(opt, s, grads_of({1, 1, 1}, 1));
    ModelState other;
    other.add("w", EntryKind::Parameter, Tensor::scalar(0));
    CHECK(error_code_of([&] { adam_step(opt, other, {{"w", Tensor::scalar(1)}}); }) == ErrorCode::Contract);
  }

  TEST_CASE("reset drops moments but keeps hyperparameters") {
    ModelState s = toy();
    AdamState opt(0.02);
    adam_step(opt, s, grads_of({1, 2, 3}, 4));
    opt.reset();
    CHECK(opt.step_count == 0);
    CHECK(opt.m.empty());
    CHECK(opt.lr == 0.02);
  }

  TEST_CASE("optimizer checkpoints round-trip and resume identically") {
    ModelState s = toy();
    AdamState opt(0.01);
    Rng rng(2);
    for (int i = 0; i < 3; ++i) adam_step(opt, s, grads_of({rng.normal(), rng.normal(), rng.normal()}, rng.normal()));
    const auto bytes = encode_adam(opt);
    AdamState back = decode_adam(bytes);
    CHECK(back == opt);
    CHECK(encode_adam(back) == bytes);

    ModelState s2 = s;
    const Gradients g = grads_of({0.3, -0.1, 0.2}, 0.05);
    adam_step(opt, s, g);
    adam_step(back, s2, g);
    CHECK(s == s2);

    for (std::size_t n = 0; n < bytes.size(); n += 7) {
      std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(n));
      CHECK(error_code_of([&] { decode_adam(cut); }) == ErrorCode::Format);
    }
  }

  TEST_CASE("Adam minimizes a convex quadratic") {
    ModelState s;
    s.add("w", EntryKind::Parameter, Tensor::vector({3.0, -4.0}));
    AdamState opt(0.05);
    for (int i = 0; i < 2000; ++i) {
      const Tensor& w = s.get("w");
      adam_step(opt, s, {{"w", Tensor::vector({2 * (w[0] - 1), 2 * (w[1] + 0.5)})}});
    }
    CHECK(s.get("w")[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(s.get("w")[1] == doctest::Approx(-0.5).epsilon(1e-3));
  }
}
