#include "csdasa/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "csdasa/rng.hpp"

namespace csdasa {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct SubjectShift {
  std::vector<double> gain;   // per band
  std::vector<double> bias;   // per band
  double rotation_rad = 0.0;
};

std::array<double, 3> rotate_z(const std::array<double, 3>& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]};
}

}  // namespace

std::vector<SubjectDomain> synth_subjects(const SynthConfig& config) {
  if (config.n_subjects < 2) throw ConfigError("synth: need at least two subjects");
  if (config.n_per_subject < 1) throw ConfigError("synth: need at least one sample per subject");
  if (config.n_classes < 2 || config.n_classes > 4) {
    throw ConfigError("synth: class count must be in [2,4]");
  }
  const auto& bands = config.imaging.bands;
  if (bands.empty()) throw ConfigError("synth: no frequency bands");

  const ElectrodeMontage montage = ElectrodeMontage::synthetic_cap(config.electrodes);
  const GridInterpolator interpolator =
      make_montage_interpolator(montage, config.imaging.grid);

  // class anchors: four scalp directions at ~50 degrees polar angle
  std::vector<std::array<double, 3>> anchors;
  const double polar = 50.0 * kPi / 180.0;
  for (int k = 0; k < config.n_classes; ++k) {
    const double az = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(config.n_classes);
    anchors.push_back({std::sin(polar) * std::cos(az), std::sin(polar) * std::sin(az),
                       std::cos(polar)});
  }

  // per-subject shift coefficients, drawn once from the seed and scaled by
  // the shift magnitudes
  Rng shift_rng(Rng::mix(config.seed, 0x5348494654ULL));  // "SHIFT" stream
  std::vector<SubjectShift> shifts;
  for (int s = 0; s < config.n_subjects; ++s) {
    SubjectShift sh;
    sh.rotation_rad = config.shift.rotation_deg * kPi / 180.0 * shift_rng.uniform(-1.0, 1.0);
    for (std::size_t b = 0; b < bands.size(); ++b) {
      sh.gain.push_back(std::max(0.05, 1.0 + config.shift.gain * shift_rng.uniform(-1.0, 1.0)));
      sh.bias.push_back(config.shift.band_bias * shift_rng.uniform(0.0, 1.0));
    }
    shifts.push_back(std::move(sh));
  }

  const std::size_t trial_len = static_cast<std::size_t>(config.imaging.frames) *
                                static_cast<std::size_t>(config.imaging.window_len);
  const double fs = config.imaging.sample_rate;
  const double bump_sharpness = 6.0;
  const double base_amp = 1.0;
  const double bump_strength = 1.6;

  // every class gets a unique band mixture so no spatial remapping can alias
  // one class onto another (classes must stay identifiable under rotation)
  const double band_mix[4][3] = {{1.00, 0.25, 0.25},
                                 {0.25, 1.00, 0.25},
                                 {0.25, 0.25, 1.00},
                                 {0.60, 0.60, 0.15}};

  std::vector<SubjectDomain> subjects;
  subjects.reserve(static_cast<std::size_t>(config.n_subjects));
  for (int s = 0; s < config.n_subjects; ++s) {
    SubjectDomain domain;
    domain.subject_id = "S" + std::to_string(s + 1);
    domain.samples.reserve(static_cast<std::size_t>(config.n_per_subject));

    // rotated class anchors for this subject
    std::vector<std::array<double, 3>> subject_anchors;
    for (const auto& a : anchors) subject_anchors.push_back(rotate_z(a, shifts[s].rotation_rad));

    for (int i = 0; i < config.n_per_subject; ++i) {
      const int label = i % config.n_classes;  // balanced
      Rng rng(Rng::mix(config.seed, static_cast<std::uint64_t>(s) + 1,
                       static_cast<std::uint64_t>(i) + 1));

      // per-sample oscillator state: frequency inside the band, random phase
      std::vector<double> freq(bands.size()), phase_base(bands.size());
      for (std::size_t b = 0; b < bands.size(); ++b) {
        const double center = 0.5 * (bands[b].lo_hz + bands[b].hi_hz);
        const double span = 0.25 * (bands[b].hi_hz - bands[b].lo_hz);
        freq[b] = center + span * rng.uniform(-1.0, 1.0);
        phase_base[b] = rng.uniform(0.0, 2.0 * kPi);
      }

      std::vector<std::vector<double>> trial(montage.size());
      for (std::size_t e = 0; e < montage.size(); ++e) {
        const auto& pos = montage.electrodes()[e].position;
        const double closeness =
            pos[0] * subject_anchors[static_cast<std::size_t>(label)][0] +
            pos[1] * subject_anchors[static_cast<std::size_t>(label)][1] +
            pos[2] * subject_anchors[static_cast<std::size_t>(label)][2];
        const double bump = std::exp(bump_sharpness * (closeness - 1.0));

        std::vector<double>& series = trial[e];
        series.assign(trial_len, 0.0);
        for (std::size_t b = 0; b < bands.size(); ++b) {
          const double class_weight =
              band_mix[label][std::min<std::size_t>(b, 2)];
          double amp = base_amp * 0.2 + bump_strength * class_weight * bump;
          amp = amp * shifts[s].gain[b] + shifts[s].bias[b];
          amp *= 1.0 + 0.1 * rng.normal();  // trial-to-trial variability
          const double ph = phase_base[b] + rng.uniform(0.0, 2.0 * kPi);
          const double w = 2.0 * kPi * freq[b] / fs;
          for (std::size_t tt = 0; tt < trial_len; ++tt) {
            series[tt] += amp * std::sin(w * static_cast<double>(tt) + ph);
          }
        }
        for (std::size_t tt = 0; tt < trial_len; ++tt) {
          series[tt] += config.noise * rng.normal();
        }
      }
      domain.samples.push_back(build_multiframe(trial, interpolator, config.imaging, label));
    }
    subjects.push_back(std::move(domain));
  }
  return subjects;
}

}  // namespace csdasa
