#pragma once

// Independent reference implementations used as test oracles: central finite
// differences for gradients and brute-force loops for the kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fedtwins/rng.hpp"
#include "fedtwins/tensor.hpp"

namespace oracle {

using fedtwins::Shape;
using fedtwins::Tape;
using fedtwins::Tensor;
using fedtwins::Var;

using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t input = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares tape gradients of `loss` against central differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every input.
// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
// near-zero gradients from dividing rounding noise by ~0.
inline GradientReport check_gradients(const std::vector<Tensor>& inputs, const LossFn& loss, double eps = 1e-4,
                                      double floor = 1e-6) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  Var l = loss(tape, vars);
  tape.backward(l);
  std::vector<Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(tape.grad(v));

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    return loss(t, vs).value().item();
  };

  GradientReport report;
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const double x0 = inputs[i][j];
      probe[i][j] = x0 + eps;
      const double up = evaluate(probe);
      probe[i][j] = x0 - eps;
      const double down = evaluate(probe);
      probe[i][j] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i][j];
      const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
      if (rel > report.max_rel_error) report = {rel, i, j, a, numeric};
    }
  }
  return report;
}

inline Tensor random_tensor(const Shape& shape, fedtwins::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Uniform in [lo, hi] but at least `gap` away from every point in `avoid`
// (keeps finite differences off kinks such as relu at 0).
inline Tensor random_tensor_avoiding(const Shape& shape, fedtwins::Rng& rng, double lo, double hi,
                                     const std::vector<double>& avoid, double gap) {
  Tensor t(shape);
  for (double& v : t.data()) {
    do {
      v = lo + (hi - lo) * rng.uniform();
    } while (std::any_of(avoid.begin(), avoid.end(), [&](double a) { return std::fabs(v - a) < gap; }));
  }
  return t;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

// Direct cross-correlation with zero padding.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const std::size_t cout = w.shape()[0], kernel = w.shape()[2];
  const std::size_t lout = (len + 2 * padding - kernel) / stride + 1;
  Tensor y(Shape{batch, cout, lout});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < lout; ++t) {
        double s = bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t k = 0; k < kernel; ++k) {
            const long pos = static_cast<long>(t * stride + k) - static_cast<long>(padding);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            s += w.at(o, c, k) * x.at(b, c, static_cast<std::size_t>(pos));
          }
        y.at(b, o, t) = s;
      }
  return y;
}

// Energy of a real signal's DFT over [f_lo, f_hi] Hz, computed term by term.
inline double band_energy(const double* x, std::size_t n, double rate, double f_lo, double f_hi) {
  const double pi = 3.14159265358979323846;
  double energy = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    const double f = static_cast<double>(k) * rate / static_cast<double>(n);
    if (f < f_lo || f > f_hi) continue;
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = 2.0 * pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      re += x[t] * std::cos(a);
      im -= x[t] * std::sin(a);
    }
    energy += re * re + im * im;
  }
  return energy;
}

}  // namespace oracle
