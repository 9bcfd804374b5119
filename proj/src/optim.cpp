#include "fedtwins/optim.hpp"

#include <cmath>

#include "binary_io.hpp"
#include "fedtwins/error.hpp"

namespace fedtwins {

namespace {

const Tensor& grad_for(const Gradients& grads, const StateEntry& e) {
  auto it = grads.find(e.name);
  require(it != grads.end(), ErrorCode::Contract, "missing gradient for parameter '" + e.name + "'");
  require(it->second.shape() == e.tensor.shape(), ErrorCode::Dimension,
          "gradient for '" + e.name + "' has shape " + shape_string(it->second.shape()) + ", parameter has " +
              shape_string(e.tensor.shape()));
  return it->second;
}

}  // namespace

void AdamState::reset() {
  step_count = 0;
  m.clear();
  v.clear();
}

void adam_step(AdamState& opt, ModelState& state, const Gradients& grads) {
  auto& entries = state.entries();
  // Validate everything before touching any parameter.
  for (const auto& e : entries)
    if (e.kind == EntryKind::Parameter) grad_for(grads, e);

  if (opt.m.empty()) {
    for (const auto& e : entries) {
      const Shape s = e.kind == EntryKind::Parameter ? e.tensor.shape() : Shape{0};
      opt.m.emplace_back(s);
      opt.v.emplace_back(s);
    }
  }
  require(opt.m.size() == entries.size(), ErrorCode::Contract, "optimizer state belongs to a different model");

  ++opt.step_count;
  const double t = static_cast<double>(opt.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (e.kind != EntryKind::Parameter) continue;
    require(opt.m[i].shape() == e.tensor.shape(), ErrorCode::Contract,
            "optimizer moments do not match parameter '" + e.name + "'");
    const Tensor& g = grad_for(grads, e);
    Tensor& m = opt.m[i];
    Tensor& v = opt.v[i];
    for (std::size_t j = 0; j < g.numel(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      e.tensor[j] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    if (!e.tensor.all_finite()) fail(ErrorCode::NumericDomain, "adam_step produced a non-finite value in '" + e.name + "'");
  }
}

void sgd_step(double lr, ModelState& state, const Gradients& grads) {
  for (const auto& e : state.entries())
    if (e.kind == EntryKind::Parameter) grad_for(grads, e);
  for (auto& e : state.entries()) {
    if (e.kind != EntryKind::Parameter) continue;
    const Tensor& g = grad_for(grads, e);
    for (std::size_t j = 0; j < g.numel(); ++j) e.tensor[j] -= lr * g[j];
  }
}

// "FTAD", u32 version, f64 lr/beta1/beta2/eps, u64 step, u32 count, then per moment pair:
// u8 rank, u32 extents, f64 m values, f64 v values.
std::vector<std::uint8_t> encode_adam(const AdamState& opt) {
  detail::ByteWriter w;
  w.tag("FTAD");
  w.uint<std::uint32_t>(1);
  w.f64(opt.lr);
  w.f64(opt.beta1);
  w.f64(opt.beta2);
  w.f64(opt.eps);
  w.uint<std::uint64_t>(opt.step_count);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(opt.m.size()));
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(opt.m[i].rank()));
    for (std::size_t d : opt.m[i].shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double x : opt.m[i].data()) w.f64(x);
    for (double x : opt.v[i].data()) w.f64(x);
  }
  return w.buffer();
}

AdamState decode_adam(std::vector<std::uint8_t> bytes) {
  detail::ByteReader r(std::move(bytes), "optimizer file");
  r.expect_tag("FTAD");
  const std::size_t at = r.offset();
  if (r.uint<std::uint32_t>("version") != 1) r.error(at, "version", "unsupported version");
  AdamState opt;
  opt.lr = r.f64("lr");
  opt.beta1 = r.f64("beta1");
  opt.beta2 = r.f64("beta2");
  opt.eps = r.f64("eps");
  opt.step_count = r.uint<std::uint64_t>("step count");
  const auto count = r.uint<std::uint32_t>("moment count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Shape shape(r.uint<std::uint8_t>("rank"));
    for (auto& d : shape) d = r.uint<std::uint32_t>("extent");
    const std::size_t n = shape_numel(shape);
    if (r.remaining() / 16 < n) r.error(r.offset(), "moments", "truncated file");
    Tensor m(shape), v(shape);
    for (double& x : m.data()) x = r.f64("m");
    for (double& x : v.data()) x = r.f64("v");
    opt.m.push_back(std::move(m));
    opt.v.push_back(std::move(v));
  }
  if (!r.at_end()) r.error(r.offset(), "trailer", "unexpected trailing bytes");
  return opt;
}

void save_adam(const AdamState& opt, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_adam(opt);
  w.bytes(bytes.data(), bytes.size());
  w.write_file(path);
}

AdamState load_adam(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_adam(std::move(data));
}

}  // namespace fedtwins
