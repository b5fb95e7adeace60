#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "csdasa/eeg_imaging.hpp"
#include "csdasa/rng.hpp"

using namespace csdasa;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> sine(double freq_hz, double fs, std::size_t n, double amplitude = 1.0,
                         double phase = 0.0) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = amplitude * std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / fs + phase);
  return out;
}

}  // namespace

TEST_SUITE("eeg_imaging") {

TEST_CASE("band power: a 10 Hz tone lands in alpha") {
  const double fs = 128.0;
  auto sig = sine(10.0, fs, 128);
  const double theta = band_power(sig, {4.0, 7.0}, fs);
  const double alpha = band_power(sig, {8.0, 13.0}, fs);
  const double beta = band_power(sig, {13.0, 30.0}, fs);
  CHECK(alpha > 10.0 * theta);
  CHECK(alpha > 10.0 * beta);
}

TEST_CASE("band power: zero signal, quadratic amplitude scaling") {
  const double fs = 128.0;
  std::vector<double> zeros(128, 0.0);
  for (const Band& b : kDefaultBands) CHECK(band_power(zeros, b, fs) == 0.0);

  auto a1 = sine(10.0, fs, 128, 1.0);
  auto a2 = sine(10.0, fs, 128, 2.0);
  const double p1 = band_power(a1, {8.0, 13.0}, fs);
  const double p2 = band_power(a2, {8.0, 13.0}, fs);
  CHECK(p2 / p1 == doctest::Approx(4.0).epsilon(0.01));
}

TEST_CASE("band power: config errors") {
  auto sig = sine(5.0, 64.0, 64);
  CHECK_THROWS_AS(band_power(sig, {13.0, 40.0}, 64.0), ConfigError);  // beyond Nyquist
  CHECK_THROWS_AS(band_power(sig, {7.0, 4.0}, 64.0), ConfigError);
  // 8 samples at 64 Hz: 8 Hz bins, nothing inside [4,7)
  std::vector<double> tiny(8, 1.0);
  CHECK_THROWS_AS(band_power(tiny, {4.0, 7.0}, 64.0), ConfigError);
}

TEST_CASE("projection: pole, equator point, antipode") {
  const auto origin = project_azimuthal_equidistant({0.0, 0.0, 1.0});
  CHECK(origin[0] == 0.0);
  CHECK(origin[1] == 0.0);

  const auto eq = project_azimuthal_equidistant({1.0, 0.0, 0.0});
  CHECK(eq[0] == doctest::Approx(kPi / 2.0).epsilon(1e-15));
  CHECK(eq[1] == doctest::Approx(0.0).epsilon(1e-15));

  CHECK_THROWS_AS(project_azimuthal_equidistant({0.0, 0.0, -1.0}), ConfigError);
  CHECK_THROWS_AS(project_azimuthal_equidistant({0.5, 0.5, 0.5}), DataError);  // not unit
}

TEST_CASE("projection preserves angular distance from the pole") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    double x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double norm = std::sqrt(x * x + y * y + z * z);
    if (norm < 1e-3) continue;
    x /= norm;
    y /= norm;
    z /= norm;
    if (z <= -1.0 + 1e-9) continue;
    const auto p = project_azimuthal_equidistant({x, y, z});
    const double radius = std::sqrt(p[0] * p[0] + p[1] * p[1]);
    CHECK(std::fabs(radius - std::acos(std::clamp(z, -1.0, 1.0))) <= 1e-12);
  }
}

TEST_CASE("interpolation: constant field, exactness at nodes, symmetric midpoint") {
  std::vector<GridPoint> constant{{0.3, 0.2, 5.0}, {-0.4, 0.1, 5.0}, {0.0, -0.5, 5.0},
                                  {0.2, 0.4, 5.0}, {-0.2, -0.2, 5.0}};
  Tensor uniform = interpolate_to_grid(constant, {9, 9});
  for (double v : uniform.data()) CHECK(v == doctest::Approx(5.0).epsilon(1e-12));

  // center node of an odd grid sits exactly at (0,0)
  std::vector<GridPoint> with_center{{0.0, 0.0, 42.0}, {0.5, 0.5, 1.0}, {-0.5, 0.4, 2.0},
                                     {0.4, -0.5, 3.0}};
  Tensor exact = interpolate_to_grid(with_center, {9, 9});
  CHECK(exact.at({4, 4}) == doctest::Approx(42.0).epsilon(1e-9));

  // two points, equidistant center node: symmetric weights give the mean
  std::vector<GridPoint> pair{{-0.5, 0.0, 0.0}, {0.5, 0.0, 1.0}};
  Tensor mid = interpolate_to_grid(pair, {5, 5});
  CHECK(mid.at({2, 2}) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("interpolation: duplicate handling and convexity") {
  std::vector<GridPoint> conflicting{{0.1, 0.1, 1.0}, {0.1, 0.1, 2.0}, {-0.3, 0.2, 0.0}};
  CHECK_THROWS_AS(interpolate_to_grid(conflicting, {4, 4}), DataError);

  std::vector<GridPoint> agreeing{{0.1, 0.1, 1.0}, {0.1, 0.1, 1.0}, {-0.3, 0.2, 0.0},
                                  {0.4, -0.2, 0.5}};
  CHECK_NOTHROW(interpolate_to_grid(agreeing, {4, 4}));

  Rng rng(17);
  std::vector<GridPoint> pts;
  double lo = 1e30, hi = -1e30;
  for (int i = 0; i < 12; ++i) {
    GridPoint p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.normal()};
    lo = std::min(lo, p.value);
    hi = std::max(hi, p.value);
    pts.push_back(p);
  }
  Tensor img = interpolate_to_grid(pts, {16, 16});
  for (double v : img.data()) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("montage: synthetic cap and file round trip") {
  ElectrodeMontage cap = ElectrodeMontage::synthetic_cap(64);
  REQUIRE(cap.size() == 64);
  for (const auto& e : cap.electrodes()) {
    const double n2 = e.position[0] * e.position[0] + e.position[1] * e.position[1] +
                      e.position[2] * e.position[2];
    CHECK(std::fabs(std::sqrt(n2) - 1.0) <= 1e-6);
  }

  const auto path = std::filesystem::temp_directory_path() / "csdasa_montage_test.txt";
  {
    std::ofstream out(path);
    out << "# test montage\n";
    out << "Cz 0 0 2\n";   // normalized on load
    out << "C3 -1 0 1\n";
    out << "C4 1 0 1\n";
  }
  ElectrodeMontage loaded = ElectrodeMontage::from_file(path);
  REQUIRE(loaded.size() == 3);
  CHECK(loaded.electrodes()[0].position[2] == doctest::Approx(1.0).epsilon(1e-12));

  {
    std::ofstream out(path);
    out << "Cz 0 0 1\nCz 1 0 0\n";
  }
  CHECK_THROWS_AS(ElectrodeMontage::from_file(path), DataError);
  std::filesystem::remove(path);
}

TEST_CASE("build_multiframe: paper-shaped output and zero input") {
  ElectrodeMontage cap = ElectrodeMontage::synthetic_cap(16);
  ImagingConfig cfg;
  cfg.frames = 7;
  cfg.window_len = 64;
  cfg.sample_rate = 128.0;
  cfg.grid = {32, 32};

  std::vector<std::vector<double>> trial(16, std::vector<double>(7 * 64, 0.0));
  MultiFrameEEGImage img = build_multiframe(trial, cap, cfg, 2);
  CHECK(img.frames.shape() == Shape{7, 3, 32, 32});
  CHECK(img.label == 2);
  for (double v : img.frames.data()) CHECK(v == 0.0);

  std::vector<std::vector<double>> too_short(16, std::vector<double>(7 * 64 - 1, 0.0));
  CHECK_THROWS_AS(build_multiframe(too_short, cap, cfg, 0), DataError);
  std::vector<std::vector<double>> wrong_count(15, std::vector<double>(7 * 64, 0.0));
  CHECK_THROWS_AS(build_multiframe(wrong_count, cap, cfg, 0), DataError);
}

TEST_CASE("build_multiframe: stationary signals give identical frames") {
  ElectrodeMontage cap = ElectrodeMontage::synthetic_cap(12);
  ImagingConfig cfg;
  cfg.frames = 4;
  cfg.window_len = 64;
  cfg.sample_rate = 128.0;
  cfg.grid = {8, 8};

  // 8 Hz tone: period 16 samples divides the window, so every window sees
  // identical data
  std::vector<std::vector<double>> trial;
  for (int e = 0; e < 12; ++e)
    trial.push_back(sine(8.0, cfg.sample_rate, 4 * 64, 1.0 + 0.1 * e));
  MultiFrameEEGImage img = build_multiframe(trial, cap, cfg);
  CHECK_FALSE(img.has_label);

  const std::int64_t frame_len = 3 * 8 * 8;
  for (std::int64_t f = 1; f < 4; ++f)
    for (std::int64_t i = 0; i < frame_len; ++i)
      CHECK(std::fabs(img.frames.data()[f * frame_len + i] - img.frames.data()[i]) <= 1e-6);
}

TEST_CASE("build_multiframe is equivariant under electrode permutation") {
  ElectrodeMontage cap = ElectrodeMontage::synthetic_cap(10);
  ImagingConfig cfg;
  cfg.frames = 2;
  cfg.window_len = 64;
  cfg.sample_rate = 128.0;
  cfg.grid = {8, 8};

  Rng rng(23);
  std::vector<std::vector<double>> trial;
  for (int e = 0; e < 10; ++e) {
    auto s = sine(6.0 + e, cfg.sample_rate, 2 * 64, 1.0 + 0.2 * e);
    for (double& v : s) v += 0.05 * rng.normal();
    trial.push_back(std::move(s));
  }
  MultiFrameEEGImage base = build_multiframe(trial, cap, cfg);

  std::vector<std::size_t> perm{7, 2, 9, 0, 4, 1, 8, 3, 6, 5};
  std::vector<Electrode> shuffled_el;
  std::vector<std::vector<double>> shuffled_trial;
  for (std::size_t p : perm) {
    shuffled_el.push_back(cap.electrodes()[p]);
    shuffled_trial.push_back(trial[p]);
  }
  MultiFrameEEGImage permuted =
      build_multiframe(shuffled_trial, ElectrodeMontage::from_electrodes(shuffled_el), cfg);

  for (std::size_t i = 0; i < base.frames.data().size(); ++i)
    CHECK(std::fabs(base.frames.data()[i] - permuted.frames.data()[i]) <= 1e-12);
}

TEST_CASE("normalization: source moments, idempotence, constant channels") {
  ElectrodeMontage cap = ElectrodeMontage::synthetic_cap(8);
  ImagingConfig cfg;
  cfg.frames = 2;
  cfg.window_len = 64;
  cfg.sample_rate = 128.0;
  cfg.grid = {6, 6};

  Rng rng(31);
  SubjectDomain domain;
  domain.subject_id = "S1";
  GridInterpolator interp = make_montage_interpolator(cap, cfg.grid);
  for (int s = 0; s < 6; ++s) {
    std::vector<std::vector<double>> trial;
    for (int e = 0; e < 8; ++e) {
      auto sig = sine(10.0, cfg.sample_rate, 2 * 64, 0.5 + rng.uniform());
      auto low = sine(5.0, cfg.sample_rate, 2 * 64, 0.3 + 0.2 * rng.uniform());
      for (std::size_t i = 0; i < sig.size(); ++i) sig[i] += low[i] + 0.1 * rng.normal();
      trial.push_back(std::move(sig));
    }
    domain.samples.push_back(build_multiframe(trial, interp, cfg, s % 4));
  }

  ChannelStats stats = fit_channel_stats(domain);
  SubjectDomain normed = normalize_images(domain, stats);
  ChannelStats after = fit_channel_stats(normed);
  for (std::size_t c = 0; c < after.mean.size(); ++c) {
    CHECK(std::fabs(after.mean[c]) <= 1e-9);
    CHECK(std::fabs(after.stddev[c] - 1.0) <= 1e-9);
  }

  // already-standardized data passes through unchanged
  SubjectDomain twice = normalize_images(normed, after);
  for (std::size_t s = 0; s < twice.samples.size(); ++s)
    for (std::size_t i = 0; i < twice.samples[s].frames.data().size(); ++i)
      CHECK(std::fabs(twice.samples[s].frames.data()[i] -
                      normed.samples[s].frames.data()[i]) <= 1e-9);

  // constant channel collapses to zeros and is flagged
  SubjectDomain flat;
  flat.subject_id = "S2";
  for (int s = 0; s < 3; ++s) {
    MultiFrameEEGImage img;
    img.frames = Tensor::full({2, 3, 4, 4}, 7.5);
    img.label = 0;
    img.has_label = true;
    flat.samples.push_back(img);
  }
  ChannelStats flat_stats = fit_channel_stats(flat);
  CHECK(flat_stats.any_centered_only());
  SubjectDomain flat_normed = normalize_images(flat, flat_stats);
  for (double v : flat_normed.samples[0].frames.data()) CHECK(v == 0.0);

  // labeled-first ordering
  SubjectDomain bad;
  bad.subject_id = "S3";
  MultiFrameEEGImage unlabeled;
  unlabeled.frames = Tensor::zeros({1, 1, 2, 2});
  MultiFrameEEGImage labeled;
  labeled.frames = Tensor::zeros({1, 1, 2, 2});
  labeled.label = 1;
  labeled.has_label = true;
  bad.samples = {unlabeled, labeled};
  CHECK_THROWS_AS(bad.check_label_order(), DataError);
}

}  // TEST_SUITE
