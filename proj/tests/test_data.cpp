#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedtwins/data.hpp"
#include "support/errors.hpp"
#include "support/oracles.hpp"

using namespace fedtwins;
using testing::error_code_of;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fedtwins_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

const SyntheticProfile& profile() {
  static const SyntheticProfile p = SyntheticProfile::default_profile();
  return p;
}

// Channel-1 energy in a band, summed over a few non-overlapping 2048-sample frames.
double channel_band_energy(Condition c, Regime r, double f_lo, double f_hi) {
  const Tensor raw = generate_synthetic(profile(), c, r, 0.7, kDefaultSampleRate, 99);
  const std::size_t total = raw.shape()[1];
  double e = 0.0;
  for (std::size_t start = 0; start + 2048 <= total; start += 2048)
    e += oracle::band_energy(raw.raw() + start, 2048, kDefaultSampleRate, f_lo, f_hi);
  return e;
}

const WindowDataset& small_dataset() {
  static const WindowDataset ds = generate_dataset(profile(), 0.5, 3);
  return ds;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("names round-trip") {
    for (Condition c : kAllConditions) CHECK(parse_condition(condition_name(c)) == c);
    for (Regime r : kAllRegimes) {
      CHECK(parse_regime(regime_name(r)) == r);
      CHECK(parse_regime("R" + std::string(regime_name(r))) == r);
    }
    CHECK(!parse_condition("XX"));
    CHECK(!parse_regime("4L"));
    CHECK(regime_rpm(Regime::R3L) == 3000);
    CHECK(regime_load(Regime::R2H) == 0.7);
    CHECK(condition_set_string({Condition::N, Condition::PL}) == "{N, PL}");
  }

  TEST_CASE("recording length and window count") {
    const Tensor raw = generate_synthetic(profile(), Condition::N, Regime::R2L, 1.0, kDefaultSampleRate, 1);
    CHECK(raw.shape() == Shape{3, 12000});
    CHECK(window_and_normalize(raw, Condition::N, Regime::R2L).size() == 46);

    Rng rng(1);
    const Tensor tiny = oracle::random_tensor({3, 512}, rng);
    const WindowDataset two = window_and_normalize(tiny, Condition::FB, Regime::R3H);
    CHECK(two.size() == 2);
    CHECK(two.labels == std::vector<Condition>{Condition::FB, Condition::FB});
    CHECK(window_and_normalize(oracle::random_tensor({3, 767}, rng), Condition::N, Regime::R2L).size() == 2);
    CHECK(error_code_of([&] { window_and_normalize(oracle::random_tensor({3, 255}, rng), Condition::N, Regime::R2L); }) ==
          ErrorCode::Contract);
    CHECK(error_code_of([&] { window_and_normalize(Tensor(Shape{3, 512}), Condition::N, Regime::R2L); }) ==
          ErrorCode::DegenerateData);
    CHECK(error_code_of([&] { window_and_normalize(Tensor(Shape{2, 512}), Condition::N, Regime::R2L); }) ==
          ErrorCode::Shape);
  }

  TEST_CASE("a minute of recording gives 2812 windows") {
    const Tensor raw = generate_synthetic(profile(), Condition::UV, Regime::R3L, 60.0, kDefaultSampleRate, 5);
    CHECK(raw.shape()[1] == 720000);
    CHECK(window_and_normalize(raw, Condition::UV, Regime::R3L).size() == 2812);
  }

  TEST_CASE("normalized windows lie in [-1, 1] with each channel reaching its peak") {
    const Tensor raw = generate_synthetic(profile(), Condition::BoR, Regime::R2H, 1.0, kDefaultSampleRate, 2);
    const WindowDataset ds = window_and_normalize(raw, Condition::BoR, Regime::R2H);
    std::array<double, 3> peak{};
    for (std::size_t w = 0; w < ds.size(); ++w)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 256; ++t) {
          const double v = ds.windows.at(w, c, t);
          CHECK(std::fabs(v) <= 1.0);
          peak[c] = std::max(peak[c], std::fabs(v));
        }
    // The peak can sit in the discarded tail; otherwise it is exactly 1.
    for (double p : peak) CHECK(p > 0.9);
  }

  TEST_CASE("synthetic recordings are reproducible and seed dependent") {
    const Tensor a = generate_synthetic(profile(), Condition::MR, Regime::R2L, 0.1, kDefaultSampleRate, 4);
    CHECK(a == generate_synthetic(profile(), Condition::MR, Regime::R2L, 0.1, kDefaultSampleRate, 4));
    CHECK(a != generate_synthetic(profile(), Condition::MR, Regime::R2L, 0.1, kDefaultSampleRate, 5));
    CHECK(a.all_finite());
  }

  TEST_CASE("faulty bearing adds resonance energy around 2.8 kHz") {
    for (Regime r : kAllRegimes) {
      const double fb = channel_band_energy(Condition::FB, r, 2000, 3600);
      const double n = channel_band_energy(Condition::N, r, 2000, 3600);
      INFO("regime " << regime_name(r) << " ratio " << fb / n);
      CHECK(fb > 2.0 * n);
    }
  }

  TEST_CASE("shaft rotation dominates the low band at the regime speed") {
    // 3000 rpm puts the first shaft harmonic at 50 Hz; 2000 rpm at about 33 Hz.
    const double at50 = channel_band_energy(Condition::N, Regime::R3L, 44, 56);
    const double off = channel_band_energy(Condition::N, Regime::R3L, 60, 72);
    CHECK(at50 > 10.0 * off);
    const double at33 = channel_band_energy(Condition::N, Regime::R2L, 28, 39);
    CHECK(at33 > 10.0 * channel_band_energy(Condition::N, Regime::R2L, 44, 56));
  }

  TEST_CASE("condition signatures are pairwise distinct") {
    std::set<std::string> seen;
    const std::string text = profile().describe();
    for (Condition c : kAllConditions) {
      const std::string prefix = "condition." + std::string(condition_name(c)) + ".";
      std::string block;
      std::size_t pos = 0;
      while ((pos = text.find(prefix, pos)) != std::string::npos) {
        const std::size_t end = text.find('\n', pos);
        block += text.substr(pos + prefix.size(), end - pos - prefix.size()) + ";";
        pos = end;
      }
      CHECK(!block.empty());
      seen.insert(block);
    }
    CHECK(seen.size() == kNumConditions);
  }

  TEST_CASE("dataset covers every condition and regime in order") {
    const WindowDataset& ds = small_dataset();
    CHECK(ds.size() == 32 * 23);
    CHECK(ds.windows.shape() == Shape{ds.size(), 3, 256});
    CHECK(ds.labels.front() == Condition::N);
    CHECK(ds.regimes.front() == Regime::R2L);
    CHECK(ds.labels.back() == Condition::UV);
    CHECK(ds.regimes.back() == Regime::R3H);
    CHECK(generate_dataset(profile(), 0.5, 3) == ds);
    CHECK(!error_code_of([&] { ds.validate(); }));
  }

  TEST_CASE("filtering") {
    const WindowDataset& ds = small_dataset();
    const ConditionSet set{Condition::PL, Condition::N};
    const WindowDataset f = filter_subset(ds, set, {Regime::R2H});
    CHECK(f.size() == 2 * 23);
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(f.regimes[i] == Regime::R2H);
      CHECK((f.labels[i] == Condition::N || f.labels[i] == Condition::PL));
    }
    CHECK(filter_subset(f, set, {Regime::R2H}) == f);  // idempotent
    CHECK(error_code_of([&] { filter_subset(f, {Condition::UV}, {Regime::R2H}); }) == ErrorCode::EmptySubset);
    CHECK(error_code_of([&] { filter_subset(f, {}, {Regime::R2H}); }) == ErrorCode::Contract);
  }

  TEST_CASE("stratified split") {
    const WindowDataset& ds = small_dataset();
    const auto [train, test] = train_test_split(ds, 0.8, 11);
    CHECK(train.size() + test.size() == ds.size());
    // 23 windows per stratum -> round(18.4) = 18 train, 5 test.
    CHECK(train.size() == 32 * 18);
    std::array<int, 32> per{};
    for (std::size_t i = 0; i < test.size(); ++i) ++per[code(test.regimes[i]) * 8 + code(test.labels[i])];
    for (int n : per) CHECK(n == 5);
    const auto [train2, test2] = train_test_split(ds, 0.8, 11);
    CHECK(train2 == train);
    CHECK(train_test_split(ds, 0.8, 12).first != train);
    // Halves are disjoint: together they hold every window exactly once.
    WindowDataset joined = train;
    joined.append(test);
    CHECK(joined.size() == ds.size());
    CHECK(error_code_of([&] { train_test_split(ds, 0.01, 1); }) == ErrorCode::Split);
    CHECK(error_code_of([&] { train_test_split(ds, 1.0, 1); }) == ErrorCode::Contract);
  }

  TEST_CASE("dataset files round-trip and reject corruption") {
    const WindowDataset ds = filter_subset(small_dataset(), {Condition::BrR, Condition::UR}, {Regime::R3L});
    const auto path = scratch("set.ftds").string();
    save_dataset(ds, path);
    CHECK(load_dataset(path) == ds);
    const auto bytes = encode_dataset(ds);
    for (std::size_t n = 0; n < bytes.size(); n += 97) {
      std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(n));
      CHECK(error_code_of([&] { decode_dataset(cut); }) == ErrorCode::Format);
    }
    auto bad_tag = bytes;
    bad_tag[1] = '?';
    CHECK(error_code_of([&] { decode_dataset(bad_tag); }) == ErrorCode::Format);
    WindowDataset out_of_range = ds;
    out_of_range.windows[0] = 1.5;
    CHECK(error_code_of([&] { out_of_range.validate(); }) == ErrorCode::DegenerateData);
    CHECK(error_code_of([&] { load_dataset(scratch("nope.ftds").string()); }) == ErrorCode::Io);
  }

  TEST_CASE("CSV recordings import like generated ones") {
    const Tensor raw = generate_synthetic(profile(), Condition::PL, Regime::R2H, 0.1, kDefaultSampleRate, 8);
    const auto csv = scratch("rec.csv"), meta = scratch("rec.meta");
    {
      std::ofstream out(csv);
      out.precision(17);
      out << "time,ch1,ch2,ch3\n";
      for (std::size_t t = 0; t < raw.shape()[1]; ++t)
        out << t / 12000.0 << "," << raw.at(0, t) << "," << raw.at(1, t) << "," << raw.at(2, t) << "\n";
      std::ofstream m(meta);
      m << "condition=PL\nregime=2H\nsample_rate=12000\n";
    }
    const WindowDataset imported = import_csv(csv.string(), meta.string());
    CHECK(imported == window_and_normalize(raw, Condition::PL, Regime::R2H));

    {
      std::ofstream m(meta);
      m << "condition=ZZ\nregime=2H\nsample_rate=12000\n";
    }
    CHECK(error_code_of([&] { import_csv(csv.string(), meta.string()); }) == ErrorCode::Range);
    {
      std::ofstream m(meta);
      m << "condition=PL\nregime=2H\n";
    }
    CHECK(error_code_of([&] { import_csv(csv.string(), meta.string()); }) == ErrorCode::Format);
    {
      std::ofstream m(meta);
      m << "condition=PL\nregime=2H\nsample_rate=12000\n";
      std::ofstream out(csv);
      out << "0,0.1,0.2\n";
    }
    CHECK(error_code_of([&] { import_csv(csv.string(), meta.string()); }) == ErrorCode::Format);
  }
}
