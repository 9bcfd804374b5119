#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedtwins/tensor.hpp"

namespace fedtwins {

// Health conditions. Codes are stable: they index confusion-matrix axes and file records.
enum class Condition : std::uint8_t { N = 0, FB = 1, BoR = 2, BrR = 3, MR = 4, UR = 5, PL = 6, UV = 7 };
inline constexpr std::size_t kNumConditions = 8;
inline constexpr std::array<Condition, kNumConditions> kAllConditions{
    Condition::N, Condition::FB, Condition::BoR, Condition::BrR, Condition::MR, Condition::UR, Condition::PL, Condition::UV};

// Operating regimes: {2000, 3000} RPM x {0.06, 0.7} N*m load.
enum class Regime : std::uint8_t { R2L = 0, R2H = 1, R3L = 2, R3H = 3 };
inline constexpr std::size_t kNumRegimes = 4;
inline constexpr std::array<Regime, kNumRegimes> kAllRegimes{Regime::R2L, Regime::R2H, Regime::R3L, Regime::R3H};

inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kWindowLength = 256;
inline constexpr int kDefaultSampleRate = 12000;

std::string_view condition_name(Condition c);
std::optional<Condition> parse_condition(std::string_view name);
std::string_view regime_name(Regime r);  // "2L", "2H", "3L", "3H"
std::optional<Regime> parse_regime(std::string_view name);  // also accepts "R2L" etc.
double regime_rpm(Regime r);
double regime_load(Regime r);
inline std::size_t code(Condition c) { return static_cast<std::size_t>(c); }
inline std::size_t code(Regime r) { return static_cast<std::size_t>(r); }

using ConditionSet = std::vector<Condition>;
using RegimeSet = std::vector<Regime>;
// "{N, PL}", order as given.
std::string condition_set_string(const ConditionSet& set);

struct WindowDataset {
  Tensor windows{Shape{0, kChannels, kWindowLength}};
  std::vector<Condition> labels;
  std::vector<Regime> regimes;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  // Checks shape agreement, the [-1, 1] range and that no window is constant.
  void validate() const;
  // Rows `indices` as a (n,3,256) batch.
  Tensor gather(std::span<const std::size_t> indices) const;
  WindowDataset select(std::span<const std::size_t> indices) const;
  void append(const WindowDataset& other);
  std::vector<std::size_t> label_codes() const;

  friend bool operator==(const WindowDataset&, const WindowDataset&) = default;
};

// Per-condition signature applied on top of the shared machine model.
struct ConditionSignature {
  std::array<double, 5> harmonic_gain{1, 1, 1, 1, 1};  // shaft harmonics 1x..5x
  double channel_asymmetry = 1.0;                      // channel-2 amplitude relative to channel 1
  double channel_phase_deg = 90.0;                     // channel-2 phase lag
  double sideband_amplitude = 0.0;                     // sidebands at 1x +/- 2*slip*line
  double modulation_depth = 0.0;                       // amplitude modulation at slip-pole frequency
  double burst_amplitude = 0.0;                        // bearing-defect resonance bursts
  double line_vibration = 0.0;                         // 2x line frequency electromagnetic vibration
  double current_gain = 1.0;                           // channel-3 fundamental amplitude
  std::array<double, 2> current_harmonics{0.04, 0.02}; // channel-3 3rd and 5th line harmonics
  double current_sideband = 0.0;                       // channel-3 sidebands at line*(1 +/- 2*slip)
};

// Parameters of one (condition, regime) recording.
struct SignalParameters {
  double shaft_hz = 0;
  std::array<double, 5> harmonic_amplitude{};
  std::array<double, 3> channel_phase_rad{};
  double modulation_depth = 0;
  double noise_level = 0;
  double slip = 0;
  ConditionSignature signature;
};

struct SyntheticProfile {
  std::uint32_t version = 1;
  double line_hz = 60.0;
  std::array<double, 5> base_harmonics{1.0, 0.45, 0.25, 0.15, 0.08};
  double vibration_noise = 0.35;
  double current_noise = 0.05;
  double burst_resonance_hz = 2800.0;
  double burst_decay_per_s = 450.0;
  double bearing_defect_order = 3.58;  // impacts per shaft revolution
  std::array<ConditionSignature, kNumConditions> conditions{};

  static SyntheticProfile default_profile();
  SignalParameters parameters(Condition c, Regime r) const;
  // key=value text describing every field; the profile is reproducible from (version, text).
  std::string describe() const;
};

// Raw 3-channel recording [3, floor(seconds * sample_rate)].
Tensor generate_synthetic(const SyntheticProfile& profile, Condition condition, Regime regime, double seconds,
                          int sample_rate, std::uint64_t seed);

// Per-channel max-abs normalization of the whole recording, then non-overlapping 256-sample windows.
WindowDataset window_and_normalize(const Tensor& raw, Condition condition, Regime regime);

// Every (condition, regime) pair, regime-major. Recording seeds derive from `seed` and the pair.
WindowDataset generate_dataset(const SyntheticProfile& profile, double seconds, std::uint64_t seed,
                               int sample_rate = kDefaultSampleRate);

WindowDataset filter_subset(const WindowDataset& ds, const ConditionSet& conditions, const RegimeSet& regimes);

// Stratified by (condition, regime); both halves keep dataset order.
std::pair<WindowDataset, WindowDataset> train_test_split(const WindowDataset& ds, double fraction, std::uint64_t seed);

// Dataset file ("FTDS").
void save_dataset(const WindowDataset& ds, const std::string& path);
WindowDataset load_dataset(const std::string& path);
std::vector<std::uint8_t> encode_dataset(const WindowDataset& ds);
WindowDataset decode_dataset(std::vector<std::uint8_t> bytes, const std::string& what = "dataset file");

// CSV recording with columns time,ch1,ch2,ch3 and a key=value sidecar
// (condition, regime, sample_rate).
WindowDataset import_csv(const std::string& csv_path, const std::string& metadata_path);

}  // namespace fedtwins
