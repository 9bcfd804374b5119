#include "fedtwins/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "fedtwins/error.hpp"
#include "fedtwins/rng.hpp"

namespace fedtwins {

namespace {

constexpr std::array<std::string_view, kNumConditions> kConditionNames{"N", "FB", "BoR", "BrR", "MR", "UR", "PL", "UV"};
constexpr std::array<std::string_view, kNumRegimes> kRegimeNames{"2L", "2H", "3L", "3H"};
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint32_t kDatasetFormatVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string_view condition_name(Condition c) { return kConditionNames.at(code(c)); }

std::optional<Condition> parse_condition(std::string_view name) {
  for (std::size_t i = 0; i < kNumConditions; ++i)
    if (kConditionNames[i] == name) return static_cast<Condition>(i);
  return std::nullopt;
}

std::string_view regime_name(Regime r) { return kRegimeNames.at(code(r)); }

std::optional<Regime> parse_regime(std::string_view name) {
  if (name.size() == 3 && (name[0] == 'R' || name[0] == 'r')) name.remove_prefix(1);
  for (std::size_t i = 0; i < kNumRegimes; ++i)
    if (kRegimeNames[i] == name) return static_cast<Regime>(i);
  return std::nullopt;
}

double regime_rpm(Regime r) { return (r == Regime::R2L || r == Regime::R2H) ? 2000.0 : 3000.0; }
double regime_load(Regime r) { return (r == Regime::R2L || r == Regime::R3L) ? 0.06 : 0.7; }

std::string condition_set_string(const ConditionSet& set) {
  std::string s = "{";
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i) s += ", ";
    s += condition_name(set[i]);
  }
  return s + "}";
}

// ---------------------------------------------------------------------------
// WindowDataset

void WindowDataset::validate() const {
  require(windows.rank() == 3 && windows.shape()[1] == kChannels && windows.shape()[2] == kWindowLength,
          ErrorCode::Shape, "dataset windows must be (N,3,256), got " + shape_string(windows.shape()));
  require(windows.shape()[0] == labels.size() && labels.size() == regimes.size(), ErrorCode::Shape,
          "dataset window, label and regime counts disagree");
  const std::size_t per = kChannels * kWindowLength;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* w = windows.raw() + i * per;
    const auto [lo, hi] = std::minmax_element(w, w + per);
    require(*lo >= -1.0 && *hi <= 1.0, ErrorCode::DegenerateData,
            "window " + std::to_string(i) + " has values outside [-1, 1]");
    require(*lo != *hi, ErrorCode::DegenerateData, "window " + std::to_string(i) + " is constant");
  }
}

Tensor WindowDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = kChannels * kWindowLength;
  Tensor out(Shape{indices.size(), kChannels, kWindowLength});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < size(), ErrorCode::Range, "window index out of range");
    std::copy_n(windows.raw() + indices[i] * per, per, out.raw() + i * per);
  }
  return out;
}

WindowDataset WindowDataset::select(std::span<const std::size_t> indices) const {
  WindowDataset out;
  out.windows = gather(indices);
  for (std::size_t i : indices) {
    out.labels.push_back(labels[i]);
    out.regimes.push_back(regimes[i]);
  }
  return out;
}

void WindowDataset::append(const WindowDataset& other) {
  std::vector<double> data(windows.data().begin(), windows.data().end());
  data.insert(data.end(), other.windows.data().begin(), other.windows.data().end());
  windows = Tensor(Shape{size() + other.size(), kChannels, kWindowLength}, std::move(data));
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  regimes.insert(regimes.end(), other.regimes.begin(), other.regimes.end());
}

std::vector<std::size_t> WindowDataset::label_codes() const {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (Condition c : labels) out.push_back(code(c));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic machine model

SyntheticProfile SyntheticProfile::default_profile() {
  SyntheticProfile p;
  auto& c = p.conditions;
  // N keeps every default.
  c[code(Condition::FB)].burst_amplitude = 1.2;
  c[code(Condition::BoR)].harmonic_gain = {1.9, 1.2, 1.0, 1.0, 1.0};
  c[code(Condition::BoR)].channel_asymmetry = 0.55;
  c[code(Condition::BoR)].channel_phase_deg = 40.0;
  c[code(Condition::BrR)].sideband_amplitude = 0.35;
  c[code(Condition::BrR)].modulation_depth = 0.35;
  c[code(Condition::BrR)].current_sideband = 0.12;
  c[code(Condition::MR)].harmonic_gain = {1.0, 2.6, 1.8, 1.0, 1.0};
  c[code(Condition::MR)].channel_phase_deg = 150.0;
  c[code(Condition::UR)].harmonic_gain = {2.8, 1.0, 1.0, 1.0, 1.0};
  c[code(Condition::PL)].current_gain = 1.6;
  c[code(Condition::PL)].current_harmonics = {0.30, 0.10};
  c[code(Condition::PL)].line_vibration = 0.9;
  c[code(Condition::UV)].current_gain = 1.25;
  c[code(Condition::UV)].current_harmonics = {0.10, 0.18};
  c[code(Condition::UV)].line_vibration = 0.45;
  return p;
}

SignalParameters SyntheticProfile::parameters(Condition c, Regime r) const {
  const double load_frac = (regime_load(r) - 0.06) / (0.7 - 0.06);
  SignalParameters s;
  s.signature = conditions.at(code(c));
  s.shaft_hz = regime_rpm(r) / 60.0;
  s.slip = 0.015 + 0.025 * load_frac;
  const double amp = 1.0 + 0.3 * load_frac;
  for (std::size_t h = 0; h < 5; ++h) s.harmonic_amplitude[h] = amp * base_harmonics[h] * s.signature.harmonic_gain[h];
  s.channel_phase_rad = {0.0, s.signature.channel_phase_deg * std::numbers::pi / 180.0, 0.0};
  s.modulation_depth = s.signature.modulation_depth;
  s.noise_level = vibration_noise * (1.0 + 0.2 * load_frac);
  return s;
}

std::string SyntheticProfile::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "version=" << version << "\nline_hz=" << line_hz << "\nbase_harmonics=";
  for (std::size_t h = 0; h < 5; ++h) os << (h ? "," : "") << base_harmonics[h];
  os << "\nvibration_noise=" << vibration_noise << "\ncurrent_noise=" << current_noise
     << "\nburst_resonance_hz=" << burst_resonance_hz << "\nburst_decay_per_s=" << burst_decay_per_s
     << "\nbearing_defect_order=" << bearing_defect_order << "\n";
  for (Condition cond : kAllConditions) {
    const auto& s = conditions[code(cond)];
    const std::string k = "condition." + std::string(condition_name(cond)) + ".";
    os << k << "harmonic_gain=";
    for (std::size_t h = 0; h < 5; ++h) os << (h ? "," : "") << s.harmonic_gain[h];
    os << "\n" << k << "channel_asymmetry=" << s.channel_asymmetry << "\n"
       << k << "channel_phase_deg=" << s.channel_phase_deg << "\n"
       << k << "sideband_amplitude=" << s.sideband_amplitude << "\n"
       << k << "modulation_depth=" << s.modulation_depth << "\n"
       << k << "burst_amplitude=" << s.burst_amplitude << "\n"
       << k << "line_vibration=" << s.line_vibration << "\n"
       << k << "current_gain=" << s.current_gain << "\n"
       << k << "current_harmonics=" << s.current_harmonics[0] << "," << s.current_harmonics[1] << "\n"
       << k << "current_sideband=" << s.current_sideband << "\n";
  }
  return os.str();
}

Tensor generate_synthetic(const SyntheticProfile& profile, Condition condition, Regime regime, double seconds,
                          int sample_rate, std::uint64_t seed) {
  require(seconds > 0.0, ErrorCode::Contract, "recording length must be positive");
  require(sample_rate > 0, ErrorCode::Contract, "sample rate must be positive");
  const auto samples = static_cast<std::size_t>(std::floor(seconds * sample_rate));
  require(samples > 0, ErrorCode::Contract, "recording is shorter than one sample");

  const SignalParameters p = profile.parameters(condition, regime);
  const ConditionSignature& sig = p.signature;
  const double load_frac = (regime_load(regime) - 0.06) / (0.7 - 0.06);
  const double line = profile.line_hz;
  const double slip_hz = 2.0 * p.slip * line;

  Rng rng(seed);
  std::array<double, 5> harmonic_phase{};
  for (double& ph : harmonic_phase) ph = kTwoPi * rng.uniform();
  const double sb_phase_lo = kTwoPi * rng.uniform();
  const double sb_phase_hi = kTwoPi * rng.uniform();
  const double lv_phase = kTwoPi * rng.uniform();
  const double mod_phase = kTwoPi * rng.uniform();
  const double line_phase = kTwoPi * rng.uniform();
  const double burst_offset = rng.uniform();
  Rng noise = rng.split(1);

  const double impact_period = 1.0 / (profile.bearing_defect_order * p.shaft_hz);
  const double current_amp = sig.current_gain * (1.0 + 0.6 * load_frac);
  const double lv_amp = sig.line_vibration * (1.0 + 0.5 * load_frac);

  Tensor out(Shape{kChannels, samples});
  double* ch1 = out.raw();
  double* ch2 = ch1 + samples;
  double* ch3 = ch2 + samples;
  for (std::size_t i = 0; i < samples; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double envelope = 1.0 + p.modulation_depth * std::sin(kTwoPi * slip_hz * t + mod_phase);
    double v1 = 0.0, v2 = 0.0;
    for (std::size_t h = 0; h < 5; ++h) {
      const double arg = kTwoPi * static_cast<double>(h + 1) * p.shaft_hz * t + harmonic_phase[h];
      v1 += p.harmonic_amplitude[h] * std::sin(arg);
      v2 += p.harmonic_amplitude[h] * std::sin(arg - p.channel_phase_rad[1]);
    }
    v1 *= envelope;
    v2 *= envelope * sig.channel_asymmetry;
    if (sig.sideband_amplitude > 0.0) {
      const double lo = std::sin(kTwoPi * (p.shaft_hz - slip_hz) * t + sb_phase_lo);
      const double hi = std::sin(kTwoPi * (p.shaft_hz + slip_hz) * t + sb_phase_hi);
      v1 += sig.sideband_amplitude * (lo + hi);
      v2 += sig.sideband_amplitude * (lo - hi);
    }
    if (lv_amp > 0.0) {
      const double lv = lv_amp * std::sin(kTwoPi * 2.0 * line * t + lv_phase);
      v1 += lv;
      v2 += lv;
    }
    if (sig.burst_amplitude > 0.0) {
      // The current impact and the previous one (later ones have decayed away).
      const double since = std::fmod(t + burst_offset * impact_period, impact_period);
      double b = 0.0;
      for (double tau : {since, since + impact_period})
        b += std::exp(-profile.burst_decay_per_s * tau) * std::sin(kTwoPi * profile.burst_resonance_hz * tau);
      v1 += sig.burst_amplitude * b;
      v2 += 0.7 * sig.burst_amplitude * b;
    }
    const double lp = kTwoPi * line * t + line_phase;
    double c = std::sin(lp) + sig.current_harmonics[0] * std::sin(3.0 * lp) + sig.current_harmonics[1] * std::sin(5.0 * lp);
    c *= current_amp;
    if (sig.current_sideband > 0.0)
      c += sig.current_sideband * current_amp *
           (std::sin(kTwoPi * line * (1.0 - 2.0 * p.slip) * t) + std::sin(kTwoPi * line * (1.0 + 2.0 * p.slip) * t));
    ch1[i] = v1 + p.noise_level * noise.normal();
    ch2[i] = v2 + p.noise_level * noise.normal();
    ch3[i] = c + profile.current_noise * noise.normal();
  }
  return out;
}

WindowDataset window_and_normalize(const Tensor& raw, Condition condition, Regime regime) {
  require(raw.rank() == 2 && raw.shape()[0] == kChannels, ErrorCode::Shape,
          "raw recording must be (3,T), got " + shape_string(raw.shape()));
  const std::size_t total = raw.shape()[1];
  require(total >= kWindowLength, ErrorCode::Contract,
          "recording has " + std::to_string(total) + " samples, fewer than one window");
  std::array<double, kChannels> inv_max{};
  for (std::size_t c = 0; c < kChannels; ++c) {
    const double* ch = raw.raw() + c * total;
    double m = 0.0;
    for (std::size_t i = 0; i < total; ++i) m = std::max(m, std::fabs(ch[i]));
    require(m > 0.0, ErrorCode::DegenerateData, "channel " + std::to_string(c + 1) + " is all zeros");
    inv_max[c] = 1.0 / m;
  }
  const std::size_t count = total / kWindowLength;
  WindowDataset ds;
  ds.windows = Tensor(Shape{count, kChannels, kWindowLength});
  for (std::size_t w = 0; w < count; ++w) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      const double* src = raw.raw() + c * total + w * kWindowLength;
      double* dst = ds.windows.raw() + (w * kChannels + c) * kWindowLength;
      // Clamp guards against x * (1/max) rounding just past 1.
      for (std::size_t i = 0; i < kWindowLength; ++i) dst[i] = std::clamp(src[i] * inv_max[c], -1.0, 1.0);
    }
    ds.labels.push_back(condition);
    ds.regimes.push_back(regime);
  }
  ds.validate();
  return ds;
}

WindowDataset generate_dataset(const SyntheticProfile& profile, double seconds, std::uint64_t seed, int sample_rate) {
  WindowDataset all;
  std::vector<double> data;
  for (Regime r : kAllRegimes)
    for (Condition c : kAllConditions) {
      const std::uint64_t rec_seed = Rng::mix(seed * 0x100 + code(r) * kNumConditions + code(c));
      const WindowDataset part = window_and_normalize(generate_synthetic(profile, c, r, seconds, sample_rate, rec_seed), c, r);
      data.insert(data.end(), part.windows.data().begin(), part.windows.data().end());
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
      all.regimes.insert(all.regimes.end(), part.regimes.begin(), part.regimes.end());
    }
  all.windows = Tensor(Shape{all.labels.size(), kChannels, kWindowLength}, std::move(data));
  return all;
}

WindowDataset filter_subset(const WindowDataset& ds, const ConditionSet& conditions, const RegimeSet& regimes) {
  require(!conditions.empty() && !regimes.empty(), ErrorCode::Contract, "filter sets must be non-empty");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (std::find(conditions.begin(), conditions.end(), ds.labels[i]) != conditions.end() &&
        std::find(regimes.begin(), regimes.end(), ds.regimes[i]) != regimes.end())
      keep.push_back(i);
  require(!keep.empty(), ErrorCode::EmptySubset, "no windows match " + condition_set_string(conditions));
  return ds.select(keep);
}

std::pair<WindowDataset, WindowDataset> train_test_split(const WindowDataset& ds, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::Contract, "split fraction must lie in (0, 1)");
  std::map<std::size_t, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.size(); ++i) strata[code(ds.regimes[i]) * kNumConditions + code(ds.labels[i])].push_back(i);
  std::vector<bool> in_train(ds.size(), false);
  const Rng base(seed);
  for (auto& [key, idx] : strata) {
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (n_train == 0 || n_train == idx.size())
      fail(ErrorCode::Split, "stratum (" + std::string(condition_name(static_cast<Condition>(key % kNumConditions))) +
                                 ", " + std::string(regime_name(static_cast<Regime>(key / kNumConditions))) + ") with " +
                                 std::to_string(idx.size()) + " windows is too small to split");
    Rng rng = base.split(key);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = true;
  }
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < ds.size(); ++i) (in_train[i] ? train : test).push_back(i);
  return {ds.select(train), ds.select(test)};
}

// ---------------------------------------------------------------------------
// Dataset file: "FTDS", u32 version, u32 window count, u8 channels (=3), u16 length (=256),
// then per window u8 condition, u8 regime, 3*256 f64 (all little-endian).

std::vector<std::uint8_t> encode_dataset(const WindowDataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.tag("FTDS");
  w.uint<std::uint32_t>(kDatasetFormatVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.uint<std::uint8_t>(static_cast<std::uint8_t>(kChannels));
  w.uint<std::uint16_t>(static_cast<std::uint16_t>(kWindowLength));
  const std::size_t per = kChannels * kWindowLength;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(code(ds.labels[i])));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(code(ds.regimes[i])));
    for (std::size_t j = 0; j < per; ++j) w.f64(ds.windows[i * per + j]);
  }
  return w.buffer();
}

WindowDataset decode_dataset(std::vector<std::uint8_t> bytes, const std::string& what) {
  detail::ByteReader r(std::move(bytes), what);
  r.expect_tag("FTDS");
  std::size_t at = r.offset();
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kDatasetFormatVersion) r.error(at, "version", "unsupported version " + std::to_string(version));
  const auto count = r.uint<std::uint32_t>("window count");
  at = r.offset();
  const auto channels = r.uint<std::uint8_t>("channels");
  if (channels != kChannels) r.error(at, "channels", "expected 3, got " + std::to_string(channels));
  at = r.offset();
  const auto length = r.uint<std::uint16_t>("length");
  if (length != kWindowLength) r.error(at, "length", "expected 256, got " + std::to_string(length));
  const std::size_t per = kChannels * kWindowLength;
  if (r.remaining() / (2 + 8 * per) < count) r.error(r.offset(), "windows", "truncated file");
  WindowDataset ds;
  std::vector<double> data(count * per);
  for (std::uint32_t i = 0; i < count; ++i) {
    at = r.offset();
    const auto cond = r.uint<std::uint8_t>("condition code");
    if (cond >= kNumConditions) fail(ErrorCode::Range, what + ": condition code " + std::to_string(cond) + " at offset " + std::to_string(at));
    at = r.offset();
    const auto reg = r.uint<std::uint8_t>("regime code");
    if (reg >= kNumRegimes) fail(ErrorCode::Range, what + ": regime code " + std::to_string(reg) + " at offset " + std::to_string(at));
    ds.labels.push_back(static_cast<Condition>(cond));
    ds.regimes.push_back(static_cast<Regime>(reg));
    for (std::size_t j = 0; j < per; ++j) data[i * per + j] = r.f64("samples");
  }
  if (!r.at_end()) r.error(r.offset(), "trailer", "unexpected trailing bytes");
  ds.windows = Tensor(Shape{count, kChannels, kWindowLength}, std::move(data));
  ds.validate();
  return ds;
}

void save_dataset(const WindowDataset& ds, const std::string& path) {
  detail::ByteWriter w;
  const auto bytes = encode_dataset(ds);
  w.bytes(bytes.data(), bytes.size());
  w.write_file(path);
}

WindowDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(std::move(data), "dataset file '" + path + "'");
}

WindowDataset import_csv(const std::string& csv_path, const std::string& metadata_path) {
  std::ifstream meta(metadata_path);
  if (!meta) fail(ErrorCode::Io, "cannot open '" + metadata_path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Format, metadata_path + ": expected key=value, got '" + t + "'");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  for (const char* key : {"condition", "regime", "sample_rate"})
    if (!kv.count(key)) fail(ErrorCode::Format, metadata_path + ": missing field '" + key + "'");
  const auto condition = parse_condition(kv["condition"]);
  if (!condition) fail(ErrorCode::Range, metadata_path + ": unknown condition '" + kv["condition"] + "'");
  const auto regime = parse_regime(kv["regime"]);
  if (!regime) fail(ErrorCode::Range, metadata_path + ": unknown regime '" + kv["regime"] + "'");
  int rate = 0;
  try {
    rate = std::stoi(kv["sample_rate"]);
  } catch (const std::exception&) {
    fail(ErrorCode::Format, metadata_path + ": field 'sample_rate' is not an integer");
  }
  if (rate <= 0) fail(ErrorCode::Format, metadata_path + ": field 'sample_rate' must be positive");

  std::ifstream csv(csv_path);
  if (!csv) fail(ErrorCode::Io, "cannot open '" + csv_path + "'");
  std::array<std::vector<double>, kChannels> channels;
  std::size_t line_no = 0;
  while (std::getline(csv, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (line_no == 1 && !fields.empty() && fields[0] == "time") continue;
    if (fields.size() != 4)
      fail(ErrorCode::Format, csv_path + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                  " columns, expected time,ch1,ch2,ch3");
    for (std::size_t c = 0; c < kChannels; ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(fields[c + 1], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[c + 1].size() || !std::isfinite(v))
        fail(ErrorCode::Format, csv_path + ": line " + std::to_string(line_no) + " column ch" + std::to_string(c + 1) +
                                    " is not a finite number");
      channels[c].push_back(v);
    }
  }
  const std::size_t total = channels[0].size();
  Tensor raw(Shape{kChannels, total});
  for (std::size_t c = 0; c < kChannels; ++c) std::copy(channels[c].begin(), channels[c].end(), raw.raw() + c * total);
  return window_and_normalize(raw, *condition, *regime);
}

}  // namespace fedtwins
