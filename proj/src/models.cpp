#include "fedtwins/models.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "fedtwins/error.hpp"
#include "fedtwins/rng.hpp"

namespace fedtwins {

namespace {

constexpr std::uint32_t kWeightFormatVersion = 1;

std::string conv_name(std::size_t i, const char* what) {
  return "backbone.conv" + std::to_string(i) + "." + what;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

std::string join(std::string_view prefix, const char* leaf) { return std::string(prefix) + "." + leaf; }

}  // namespace

// ---------------------------------------------------------------------------
// ModelState

void ModelState::add(std::string name, EntryKind kind, Tensor tensor) {
  require(!contains(name), ErrorCode::Contract, "duplicate state entry '" + name + "'");
  entries_.push_back(StateEntry{std::move(name), kind, std::move(tensor)});
}

bool ModelState::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const StateEntry& e) { return e.name == name; });
}

const Tensor& ModelState::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  fail(ErrorCode::Contract, "missing state entry '" + std::string(name) + "'");
}

Tensor& ModelState::get(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ModelState&>(*this).get(name));
}

ModelState ModelState::subset(std::string_view prefix) const {
  ModelState out;
  for (const auto& e : entries_)
    if (e.name.starts_with(prefix)) out.entries_.push_back(e);
  return out;
}

void ModelState::merge(const ModelState& other) {
  for (const auto& e : other.entries_) add(e.name, e.kind, e.tensor);
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.kind == EntryKind::Parameter) n += e.tensor.numel();
  return n;
}

std::uint64_t ModelState::architecture_hash() const {
  detail::Fnv1a h;
  h.u64(entries_.size());
  for (const auto& e : entries_) {
    h.str(e.name);
    h.u64(static_cast<std::uint64_t>(e.kind));
    h.u64(e.tensor.rank());
    for (std::size_t d : e.tensor.shape()) h.u64(d);
  }
  return h.value();
}

std::uint64_t ModelState::checksum() const {
  detail::Fnv1a h;
  h.u64(architecture_hash());
  for (const auto& e : entries_)
    for (double v : e.tensor.data()) h.u64(std::bit_cast<std::uint64_t>(v));
  return h.value();
}

bool ModelState::same_architecture(const ModelState& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.kind != b.kind || a.tensor.shape() != b.tensor.shape()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Initialization

void BackboneConfig::validate() const {
  require(in_channels > 0 && length > 0, ErrorCode::Contract, "backbone extents must be positive");
  std::size_t len = length;
  for (const auto& b : blocks) {
    require(b.out_channels > 0 && b.kernel > 0 && b.stride > 0, ErrorCode::Contract,
            "backbone block extents must be positive");
    len = ops::conv1d_output_length(len, b.kernel, b.stride, b.kernel / 2);
  }
}

double kaiming_uniform_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

ModelState init_weights(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng(seed).split(1);
  ModelState state;
  std::size_t cin = config.in_channels;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const ConvBlock& b = config.blocks[i];
    const std::size_t fan_in = cin * b.kernel;
    state.add(conv_name(i, "weight"), EntryKind::Parameter,
              uniform_tensor(Shape{b.out_channels, cin, b.kernel}, kaiming_uniform_bound(fan_in), rng));
    state.add(conv_name(i, "bias"), EntryKind::Parameter, Tensor(Shape{b.out_channels}));
    cin = b.out_channels;
  }
  return state;
}

ModelState init_weights(const ClassifierConfig& config, std::uint64_t seed, std::string_view prefix) {
  require(config.classes >= 2, ErrorCode::Contract, "classifier needs at least 2 classes");
  require(config.feature_dim > 0, ErrorCode::Contract, "classifier feature_dim must be positive");
  Rng rng = Rng(seed).split(2);
  ModelState state;
  state.add(join(prefix, "weight"), EntryKind::Parameter,
            uniform_tensor(Shape{config.feature_dim, config.classes}, kaiming_uniform_bound(config.feature_dim), rng));
  state.add(join(prefix, "bias"), EntryKind::Parameter, Tensor(Shape{config.classes}));
  return state;
}

ModelState init_weights(const ProjectorConfig& config, std::uint64_t seed) {
  require(config.feature_dim > 0 && config.hidden_dim > 0 && config.projection_dim > 0, ErrorCode::Contract,
          "projector extents must be positive");
  Rng rng = Rng(seed).split(3);
  ModelState state;
  state.add("projector.fc0.weight", EntryKind::Parameter,
            uniform_tensor(Shape{config.feature_dim, config.hidden_dim}, kaiming_uniform_bound(config.feature_dim), rng));
  state.add("projector.fc0.bias", EntryKind::Parameter, Tensor(Shape{config.hidden_dim}));
  state.add("projector.fc1.weight", EntryKind::Parameter,
            uniform_tensor(Shape{config.hidden_dim, config.projection_dim}, kaiming_uniform_bound(config.hidden_dim), rng));
  state.add("projector.fc1.bias", EntryKind::Parameter, Tensor(Shape{config.projection_dim}));
  return state;
}

// ---------------------------------------------------------------------------
// Forward passes

BoundState::BoundState(Tape& tape, const ModelState& state, bool trainable) : tape_(&tape) {
  vars_.reserve(state.size());
  for (const auto& e : state.entries()) {
    const bool grad = trainable && e.kind == EntryKind::Parameter;
    vars_.emplace_back(e.name, grad ? tape.variable(e.tensor) : tape.constant(e.tensor));
    kinds_.push_back(e.kind);
  }
}

Var BoundState::operator[](std::string_view name) const {
  for (const auto& [n, v] : vars_)
    if (n == name) return v;
  fail(ErrorCode::Contract, "model state has no entry '" + std::string(name) + "'");
}

Gradients BoundState::gradients() const {
  Gradients g;
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (kinds_[i] == EntryKind::Parameter && tape_->requires_grad(vars_[i].second))
      g.emplace(vars_[i].first, tape_->grad(vars_[i].second));
  return g;
}

Var backbone_forward(const BoundState& params, const BackboneConfig& config, Var x) {
  const Shape& s = x.shape();
  require(s.size() == 3 && s[1] == config.in_channels && s[2] == config.length, ErrorCode::Dimension,
          "backbone expects input (B," + std::to_string(config.in_channels) + "," + std::to_string(config.length) +
              "), got " + shape_string(s));
  Var h = x;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const ConvBlock& b = config.blocks[i];
    h = ops::relu(ops::conv1d(h, params[conv_name(i, "weight")], params[conv_name(i, "bias")], b.stride, b.kernel / 2));
  }
  return ops::mean(h, 2);
}

Var classifier_logits(const BoundState& params, Var features, std::string_view prefix) {
  require(features.shape().size() == 2, ErrorCode::Dimension, "classifier expects features (B,D)");
  Var w = params[join(prefix, "weight")];
  Var b = params[join(prefix, "bias")];
  return ops::add(ops::matmul(features, w), ops::broadcast_rows(b, features.shape()[0]));
}

Var classifier_forward(const BoundState& params, Var features, std::string_view prefix) {
  return ops::softmax_rows(classifier_logits(params, features, prefix));
}

Var projector_forward(const BoundState& params, Var features) {
  require(features.shape().size() == 2, ErrorCode::Dimension, "projector expects features (B,D)");
  const std::size_t batch = features.shape()[0];
  Var h = ops::add(ops::matmul(features, params["projector.fc0.weight"]),
                   ops::broadcast_rows(params["projector.fc0.bias"], batch));
  h = ops::relu(h);
  return ops::add(ops::matmul(h, params["projector.fc1.weight"]),
                  ops::broadcast_rows(params["projector.fc1.bias"], batch));
}

Tensor backbone_forward(const ModelState& state, const BackboneConfig& config, const Tensor& x) {
  Tape tape;
  BoundState params(tape, state, false);
  return backbone_forward(params, config, tape.constant(x)).value();
}

Tensor classifier_forward(const ModelState& state, const Tensor& features, std::size_t classes,
                          std::string_view prefix) {
  require(classes >= 2, ErrorCode::Contract, "classifier needs K >= 2");
  Tape tape;
  BoundState params(tape, state, false);
  require(state.get(join(prefix, "bias")).numel() == classes, ErrorCode::Dimension,
          "classifier head width differs from K=" + std::to_string(classes));
  return classifier_forward(params, tape.constant(features), prefix).value();
}

Tensor projector_forward(const ModelState& state, const Tensor& features) {
  Tape tape;
  BoundState params(tape, state, false);
  return projector_forward(params, tape.constant(features)).value();
}

// ---------------------------------------------------------------------------
// Weight file: "FTWN", u32 version, u64 architecture hash, u32 entry count, then per entry
// u32 name length + bytes, u8 kind, u8 rank, u32 extents[rank], f64 values (all little-endian).

std::vector<std::uint8_t> encode_state(const ModelState& state) {
  detail::ByteWriter w;
  w.tag("FTWN");
  w.uint<std::uint32_t>(kWeightFormatVersion);
  w.uint<std::uint64_t>(state.architecture_hash());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(state.size()));
  for (const auto& e : state.entries()) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) w.f64(v);
  }
  return w.buffer();
}

ModelState decode_state(std::vector<std::uint8_t> bytes, const std::string& what) {
  detail::ByteReader r(std::move(bytes), what);
  r.expect_tag("FTWN");
  std::size_t at = r.offset();
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kWeightFormatVersion) r.error(at, "version", "unsupported version " + std::to_string(version));
  at = r.offset();
  const auto stored_hash = r.uint<std::uint64_t>("architecture hash");
  const auto count = r.uint<std::uint32_t>("entry count");
  ModelState state;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint32_t>("name length");
    const std::size_t name_at = r.offset();
    std::string name = r.string(name_len, "name");
    const std::size_t kind_at = r.offset();
    const auto kind = r.uint<std::uint8_t>("kind");
    if (kind > 1) r.error(kind_at, "kind", "unknown entry kind " + std::to_string(kind));
    const auto rank = r.uint<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) {
      const std::size_t ext_at = r.offset();
      d = r.uint<std::uint32_t>("extent");
      if (d == 0) r.error(ext_at, "extent", "zero extent");
    }
    const std::size_t n = shape_numel(shape);
    if (r.remaining() / 8 < n) r.error(r.offset(), "values", "truncated file");
    std::vector<double> values(n);
    for (double& v : values) v = r.f64("values");
    if (state.contains(name)) r.error(name_at, "name", "duplicate entry '" + name + "'");
    state.add(std::move(name), static_cast<EntryKind>(kind), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) r.error(r.offset(), "trailer", "unexpected trailing bytes");
  if (state.architecture_hash() != stored_hash)
    r.error(at, "architecture hash", "stored hash does not match the entries");
  return state;
}

void save_state(const ModelState& state, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_state(state);
  w.bytes(bytes.data(), bytes.size());
  w.write_file(path);
}

ModelState load_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_state(std::move(data), "weight file '" + path + "'");
}

ModelState load_state(const std::string& path, std::uint64_t expected_architecture) {
  ModelState state = load_state(path);
  if (state.architecture_hash() != expected_architecture)
    fail(ErrorCode::Format, "weight file '" + path + "': field 'architecture hash' at offset 8: architecture mismatch");
  return state;
}

}  // namespace fedtwins
