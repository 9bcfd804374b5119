#include <cmath>
#include <string>

#include "doctest.h"
#include "fedtwins/error.hpp"
#include "fedtwins/tensor.hpp"
#include "support/errors.hpp"
#include "support/oracles.hpp"

using namespace fedtwins;
using testing::error_code_of;

namespace {

constexpr int kInstances = 20;

void check_unary(const char* name, Var (*op)(Var), double lo, double hi, std::vector<double> kinks, double tol) {
  Rng rng(std::hash<std::string>{}(name));
  for (int i = 0; i < kInstances; ++i) {
    const Tensor x = kinks.empty() ? oracle::random_tensor({3, 4}, rng, lo, hi)
                                   : oracle::random_tensor_avoiding({3, 4}, rng, lo, hi, kinks, 1e-2);
    const Tensor w = oracle::random_tensor({3, 4}, rng);
    // A random linear functional of the output so every element's gradient differs.
    const auto r = oracle::check_gradients({x}, [&](Tape& t, const std::vector<Var>& v) {
      return ops::sum_all(ops::mul(op(v[0]), t.constant(w)));
    });
    INFO(name << " instance " << i << " analytic " << r.analytic << " numeric " << r.numeric);
    CHECK(r.max_rel_error < tol);
  }
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("tensor invariants and constructors") {
    CHECK(error_code_of([] { Tensor(Shape{2, 3}, std::vector<double>(5)); }) == ErrorCode::Shape);
    const Tensor t(Shape{2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    CHECK(error_code_of([&] { (void)t.dim(2); }) == ErrorCode::Dimension);
    CHECK(Tensor::identity(3).at(1, 1) == 1.0);
    CHECK(Tensor::identity(3).at(1, 2) == 0.0);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  }

  TEST_CASE("matmul hand cases") {
    Tape tape;
    const Tensor abcd = Tensor::matrix({{5, 6}, {7, 8}});
    CHECK(ops::matmul(tape.constant(Tensor::identity(2)), tape.constant(abcd)).value() == abcd);
    const Tensor r = ops::matmul(tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3}, {4}}))).value();
    CHECK(r.item() == 11.0);
    CHECK(error_code_of([&] { ops::matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{2, 3}))); }) ==
          ErrorCode::Dimension);
  }

  TEST_CASE("gradient of sum(A B) w.r.t. A is ones * B^T") {
    Rng rng(1);
    for (int i = 0; i < kInstances; ++i) {
      const Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({4, 5}, rng);
      Tape tape;
      Var va = tape.variable(a);
      tape.backward(ops::sum_all(ops::matmul(va, tape.constant(b))));
      const Tensor g = tape.grad(va);
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
          double expect = 0.0;
          for (std::size_t j = 0; j < 5; ++j) expect += b.at(c, j);
          CHECK(g.at(r, c) == doctest::Approx(expect).epsilon(1e-14));
        }
      const auto fd = oracle::check_gradients(
          {a, b}, [](Tape&, const std::vector<Var>& v) { return ops::sum_all(ops::matmul(v[0], v[1])); });
      CHECK(fd.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("matmul and transpose match brute force") {
    Rng rng(2);
    for (int i = 0; i < kInstances; ++i) {
      const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(40), n = 1 + rng.below(70);
      const Tensor a = oracle::random_tensor({m, k}, rng), b = oracle::random_tensor({k, n}, rng);
      Tape tape;
      const Tensor c = ops::matmul(tape.constant(a), tape.constant(b)).value();
      const Tensor ref = oracle::matmul(a, b);
      for (std::size_t j = 0; j < c.numel(); ++j) CHECK(c[j] == doctest::Approx(ref[j]).epsilon(1e-12));
      const Tensor at = ops::transpose(tape.constant(a)).value();
      CHECK(at.shape() == Shape{k, m});
      CHECK(at.at(k - 1, 0) == a.at(0, k - 1));
      Tensor c2(Shape{m, n});
      gemm(a.raw(), b.raw(), c2.raw(), m, k, n, false);
      CHECK(c2 == c);
    }
  }

  TEST_CASE("conv1d hand cases") {
    Tape tape;
    const Tensor x1(Shape{1, 1, 3}, std::vector<double>{1, 2, 3});
    const Tensor id(Shape{1, 1, 1}, std::vector<double>{1});
    CHECK(ops::conv1d(tape.constant(x1), tape.constant(id), tape.constant(Tensor(Shape{1})), 1, 0).value().data()[2] == 3.0);
    const Tensor x2(Shape{1, 1, 4}, std::vector<double>{1, 2, 3, 4});
    const Tensor pair(Shape{1, 1, 2}, std::vector<double>{1, 1});
    const Tensor y = ops::conv1d(tape.constant(x2), tape.constant(pair), tape.constant(Tensor(Shape{1})), 2, 0).value();
    CHECK(y.shape() == Shape{1, 1, 2});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 7.0);
  }

  TEST_CASE("conv1d output lengths of the default backbone") {
    CHECK(ops::conv1d_output_length(256, 7, 2, 3) == 128);
    CHECK(ops::conv1d_output_length(128, 5, 2, 2) == 64);
    CHECK(ops::conv1d_output_length(64, 3, 2, 1) == 32);
  }

  TEST_CASE("conv1d matches direct convolution") {
    Rng rng(3);
    for (int i = 0; i < kInstances; ++i) {
      const std::size_t batch = 1 + rng.below(3), cin = 1 + rng.below(4), cout = 1 + rng.below(5);
      const std::size_t kernel = 1 + rng.below(7), stride = 1 + rng.below(3), padding = rng.below(kernel);
      const std::size_t len = kernel + rng.below(30);
      const Tensor x = oracle::random_tensor({batch, cin, len}, rng), w = oracle::random_tensor({cout, cin, kernel}, rng);
      const Tensor b = oracle::random_tensor({cout}, rng);
      Tape tape;
      const Tensor y = ops::conv1d(tape.constant(x), tape.constant(w), tape.constant(b), stride, padding).value();
      const Tensor ref = oracle::conv1d(x, w, b, stride, padding);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t j = 0; j < y.numel(); ++j) CHECK(y[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    }
  }

  TEST_CASE("conv1d gradients match finite differences") {
    Rng rng(4);
    for (int i = 0; i < kInstances; ++i) {
      const std::size_t stride = 1 + rng.below(2), kernel = 2 + rng.below(4), padding = rng.below(kernel);
      const Tensor x = oracle::random_tensor({2, 2, 9}, rng), w = oracle::random_tensor({3, 2, kernel}, rng);
      const Tensor b = oracle::random_tensor({3}, rng);
      const std::size_t lout = ops::conv1d_output_length(9, kernel, stride, padding);
      const Tensor probe = oracle::random_tensor({2, 3, lout}, rng);
      const auto r = oracle::check_gradients({x, w, b}, [&](Tape& t, const std::vector<Var>& v) {
        return ops::sum_all(ops::mul(ops::conv1d(v[0], v[1], v[2], stride, padding), t.constant(probe)));
      });
      CHECK(r.max_rel_error < 1e-5);
    }
  }

  TEST_CASE("elementwise values") {
    Tape tape;
    const Tensor r = ops::relu(tape.constant(Tensor::vector({-1, 0, 2}))).value();
    CHECK(r == Tensor::vector({0, 0, 2}));
    CHECK(ops::log(tape.constant(Tensor::scalar(1.0))).value().item() == 0.0);
    CHECK(ops::scale(tape.constant(Tensor::vector({1, -2})), 3.0).value() == Tensor::vector({3, -6}));
    CHECK(ops::add(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::scalar(1))).value() == Tensor::vector({2, 3}));
    CHECK(ops::clamp_min(tape.constant(Tensor::vector({0.0, 0.5})), 0.25).value() == Tensor::vector({0.25, 0.5}));
    CHECK(error_code_of([&] { ops::add(tape.constant(Tensor(Shape{2})), tape.constant(Tensor(Shape{3}))); }) ==
          ErrorCode::Dimension);
  }

  TEST_CASE("relu derivative at zero is zero") {
    Tape tape;
    Var x = tape.variable(Tensor::vector({-1, 0, 2}));
    tape.backward(ops::sum_all(ops::relu(x)));
    CHECK(tape.grad(x) == Tensor::vector({0, 0, 1}));
  }

  TEST_CASE("smooth elementwise gradients") {
    check_unary("log", ops::log, 0.2, 3.0, {}, 1e-6);
    check_unary("sqrt", ops::sqrt, 0.2, 3.0, {}, 1e-6);
    check_unary("square", ops::square, -2.0, 2.0, {}, 1e-6);
    check_unary("reciprocal", ops::reciprocal, 0.3, 2.0, {}, 1e-6);
    check_unary("scale", [](Var a) { return ops::scale(a, -1.7); }, -2.0, 2.0, {}, 1e-6);
  }

  TEST_CASE("piecewise elementwise gradients away from kinks") {
    check_unary("relu", ops::relu, -2.0, 2.0, {0.0}, 1e-4);
    check_unary("abs", ops::abs, -2.0, 2.0, {0.0}, 1e-4);
    check_unary("clamp_min", [](Var a) { return ops::clamp_min(a, 0.3); }, -1.0, 2.0, {0.3}, 1e-4);
  }

  TEST_CASE("binary elementwise gradients") {
    Rng rng(5);
    using Binary = Var (*)(Var, Var);
    const std::pair<const char*, Binary> cases[] = {{"add", ops::add}, {"sub", ops::sub}, {"mul", ops::mul}, {"div", ops::div}};
    for (const auto& [name, op] : cases)
      for (int i = 0; i < kInstances; ++i) {
        const Tensor a = oracle::random_tensor({2, 3}, rng, -2, 2);
        const Tensor b = oracle::random_tensor_avoiding({2, 3}, rng, -2, 2, {0.0}, 0.3);
        const Tensor s = oracle::random_tensor_avoiding({1}, rng, -2, 2, {0.0}, 0.3);
        const Tensor w = oracle::random_tensor({2, 3}, rng);
        auto f = [&, op = op](Tape& t, const std::vector<Var>& v) { return ops::sum_all(ops::mul(op(v[0], v[1]), t.constant(w))); };
        INFO(name);
        CHECK(oracle::check_gradients({a, b}, f).max_rel_error < 1e-6);
        CHECK(oracle::check_gradients({a, s}, f).max_rel_error < 1e-6);  // scalar broadcast
      }
  }

  TEST_CASE("composite relu(a*b + c)") {
    Rng rng(6);
    for (int i = 0; i < kInstances; ++i) {
      const Tensor a = oracle::random_tensor({4}, rng), b = oracle::random_tensor({4}, rng);
      Tensor c(Shape{4});
      // Keep a*b + c away from the kink so the check stays on one smooth piece.
      for (std::size_t j = 0; j < 4; ++j) {
        const double ab = a[j] * b[j];
        c[j] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.1 + rng.uniform()) - ab;
      }
      const auto r = oracle::check_gradients({a, b, c}, [](Tape&, const std::vector<Var>& v) {
        return ops::sum_all(ops::relu(ops::add(ops::mul(v[0], v[1]), v[2])));
      });
      CHECK(r.max_rel_error < 1e-6);
    }
  }

  TEST_CASE("reduction values") {
    Tape tape;
    CHECK(ops::trace(tape.constant(Tensor::matrix({{1, 5}, {7, 2}}))).value().item() == 3.0);
    CHECK(ops::mean(tape.constant(Tensor::vector({1, 2, 3})), 0).value().item() == 2.0);
    CHECK(ops::sum(tape.constant(Tensor(Shape{4, 3}, 1.0)), 0).value() == Tensor::vector({4, 4, 4}));
    CHECK(ops::max(tape.constant(Tensor::matrix({{1, 9}, {7, 2}})), 1).value() == Tensor::vector({9, 7}));
    CHECK(ops::mean_all(tape.constant(Tensor::matrix({{1, 2}, {3, 6}}))).value().item() == 3.0);
  }

  TEST_CASE("reduction and structural gradients") {
    Rng rng(7);
    for (int i = 0; i < kInstances; ++i) {
      const Tensor x = oracle::random_tensor({3, 4, 2}, rng);
      for (std::size_t axis = 0; axis < 3; ++axis) {
        Shape reduced = x.shape();
        reduced.erase(reduced.begin() + static_cast<long>(axis));
        const Tensor w = oracle::random_tensor(reduced, rng);
        for (auto op : {ops::sum, ops::mean}) {
          const auto r = oracle::check_gradients({x}, [&](Tape& t, const std::vector<Var>& v) {
            return ops::sum_all(ops::mul(op(v[0], axis), t.constant(w)));
          });
          CHECK(r.max_rel_error < 1e-6);
        }
        // Distinct values spaced well beyond eps keep max off its tie points.
        Tensor spaced = x;
        for (std::size_t j = 0; j < spaced.numel(); ++j) spaced[j] = static_cast<double>((j * 7 + i) % spaced.numel()) * 0.1;
        const auto rm = oracle::check_gradients({spaced}, [&](Tape& t, const std::vector<Var>& v) {
          return ops::sum_all(ops::mul(ops::max(v[0], axis), t.constant(w)));
        });
        CHECK(rm.max_rel_error < 1e-4);
      }
      const Tensor sq = oracle::random_tensor({4, 4}, rng);
      CHECK(oracle::check_gradients({sq}, [](Tape&, const std::vector<Var>& v) {
              return ops::mul(ops::trace(v[0]), ops::mean_all(v[0]));
            }).max_rel_error < 1e-6);
      const Tensor row = oracle::random_tensor({5}, rng), w35 = oracle::random_tensor({3, 5}, rng);
      CHECK(oracle::check_gradients({row}, [&](Tape& t, const std::vector<Var>& v) {
              return ops::sum_all(ops::mul(ops::broadcast_rows(v[0], 3), t.constant(w35)));
            }).max_rel_error < 1e-6);
      CHECK(oracle::check_gradients({w35}, [&](Tape& t, const std::vector<Var>& v) {
              return ops::sum_all(ops::mul(ops::transpose(v[0]), t.constant(ops::transpose(t.constant(w35)).value())));
            }).max_rel_error < 1e-6);
      const Tensor logits = oracle::random_tensor({3, 5}, rng, -3, 3);
      CHECK(oracle::check_gradients({logits}, [&](Tape& t, const std::vector<Var>& v) {
              return ops::sum_all(ops::mul(ops::softmax_rows(v[0]), t.constant(w35)));
            }).max_rel_error < 1e-6);
    }
  }

  TEST_CASE("softmax rows lie on the simplex and survive large logits") {
    Tape tape;
    const Tensor p = ops::softmax_rows(tape.constant(Tensor::matrix({{1000, 0, -1000}, {1, 1, 1}}))).value();
    CHECK(p.at(0, 0) == doctest::Approx(1.0));
    CHECK(p.at(1, 2) == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("backward basics") {
    {
      Tape tape;
      Var x = tape.variable(Tensor::vector({1, 2, 3}));
      tape.backward(ops::sum_all(x));
      CHECK(tape.grad(x) == Tensor::vector({1, 1, 1}));
    }
    {
      Tape tape;
      Var x = tape.variable(Tensor::vector({1, 2}));
      Var unused = tape.variable(Tensor::vector({5, 5}));
      tape.backward(ops::sum_all(ops::square(x)));
      CHECK(tape.grad(x) == Tensor::vector({2, 4}));
      CHECK(tape.grad(unused) == Tensor::vector({0, 0}));
    }
  }

  TEST_CASE("backward contract errors") {
    Tape tape;
    Var x = tape.variable(Tensor::vector({1, 2}));
    CHECK(error_code_of([&] { tape.backward(x); }) == ErrorCode::Contract);  // not a scalar
    Var l = ops::sum_all(x);
    tape.backward(l);
    CHECK(error_code_of([&] { tape.backward(l); }) == ErrorCode::Contract);
    tape.reset();
    CHECK(tape.size() == 0);
    Tape other;
    CHECK(error_code_of([&] { ops::add(tape.constant(Tensor::scalar(1)), other.constant(Tensor::scalar(1))); }) ==
          ErrorCode::Contract);
  }

  TEST_CASE("domain errors name the op") {
    Tape tape;
    auto message = [](const std::function<void()>& f) {
      CHECK(error_code_of(f) == ErrorCode::NumericDomain);
      return testing::error_message_of(f);
    };
    CHECK(message([&] { ops::log(tape.constant(Tensor::vector({1, 0}))); }).find("log") != std::string::npos);
    CHECK(message([&] { ops::sqrt(tape.constant(Tensor::vector({-1}))); }).find("sqrt") != std::string::npos);
    CHECK(message([&] { ops::div(tape.constant(Tensor::vector({1})), tape.constant(Tensor::vector({0}))); }).find("div") !=
          std::string::npos);
    CHECK(message([&] { ops::reciprocal(tape.constant(Tensor::vector({0}))); }).find("reciprocal") != std::string::npos);
    CHECK(message([&] { tape.constant(Tensor::vector({std::nan("")})); }).find("non-finite") != std::string::npos);
    CHECK(message([&] { ops::scale(tape.constant(Tensor::vector({1e308})), 1e10); }).find("scale") != std::string::npos);
  }

  TEST_CASE("identical computations are bit-identical") {
    auto run = [] {
      Rng rng(9);
      Tape tape;
      Var x = tape.variable(oracle::random_tensor({4, 3, 40}, rng));
      Var w = tape.variable(oracle::random_tensor({8, 3, 5}, rng));
      Var b = tape.variable(oracle::random_tensor({8}, rng));
      Var y = ops::mean_all(ops::relu(ops::conv1d(x, w, b, 2, 2)));
      tape.backward(y);
      return std::make_pair(y.value(), tape.grad(w));
    };
    CHECK(run() == run());
  }
}
