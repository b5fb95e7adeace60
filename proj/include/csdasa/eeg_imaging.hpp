#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csdasa/tensor.hpp"

namespace csdasa {

struct Band {
  double lo_hz;
  double hi_hz;  // exclusive
};

// theta, alpha, beta
inline const std::vector<Band> kDefaultBands{{4.0, 7.0}, {8.0, 13.0}, {13.0, 30.0}};

struct Electrode {
  std::string name;
  std::array<double, 3> position;  // unit sphere
};

class ElectrodeMontage {
 public:
  // Text lines `name x y z`, whitespace separated; positions are normalized
  // onto the unit sphere on load. Blank lines and lines starting with '#'
  // are skipped.
  static ElectrodeMontage from_file(const std::filesystem::path& path);
  static ElectrodeMontage from_electrodes(std::vector<Electrode> electrodes);

  // Deterministic golden-spiral cap over the upper sphere; a stand-in for a
  // real 64-channel layout.
  static ElectrodeMontage synthetic_cap(int count = 64);

  const std::vector<Electrode>& electrodes() const { return electrodes_; }
  std::size_t size() const { return electrodes_.size(); }

 private:
  std::vector<Electrode> electrodes_;
};

// Mean squared spectral magnitude over the band's frequency bins, from a
// Hann-windowed periodogram of the whole signal.
double band_power(std::span<const double> signal, Band band, double sample_rate);

// All bands in one pass over the DFT bins (what build_multiframe uses).
std::vector<double> band_powers(std::span<const double> signal, const std::vector<Band>& bands,
                                double sample_rate);

// Azimuthal equidistant projection with the pole at (0,0,1): planar radius
// equals the angular distance from the pole, azimuth is preserved.
std::array<double, 2> project_azimuthal_equidistant(const std::array<double, 3>& pos);

struct GridSpec {
  int width = 32;
  int height = 32;
};

struct GridPoint {
  double x;
  double y;
  double value;
};

// Inverse-distance-weighted interpolation (power 2, k = 4 nearest) of
// scattered samples onto a regular grid over the montage's bounding square.
// Exact at data points; nodes outside the convex hull take the nearest
// point's value. Neighbor indices and weights depend only on the geometry,
// so they are precomputed once and reused across frames.
class GridInterpolator {
 public:
  GridInterpolator(const std::vector<std::array<double, 2>>& points, GridSpec grid);

  // values[i] belongs to points[i]; returns a [w,h] tensor where pixel (i,j)
  // samples (x_i, y_j) of the bounding square.
  Tensor interpolate(std::span<const double> values) const;

  GridSpec grid() const { return grid_; }

 private:
  GridSpec grid_;
  std::size_t n_points_;
  // per node: up to 4 (point index, weight) pairs, weights already normalized
  std::vector<std::array<int, 4>> node_index_;
  std::vector<std::array<double, 4>> node_weight_;
};

// One-shot convenience over GridInterpolator.
Tensor interpolate_to_grid(const std::vector<GridPoint>& points, GridSpec grid);

struct MultiFrameEEGImage {
  Tensor frames;  // [t,c,w,h]
  int label = -1;
  bool has_label = false;
};

struct SubjectDomain {
  std::string subject_id;
  std::vector<MultiFrameEEGImage> samples;  // labeled samples first

  std::size_t labeled_count() const;
  std::size_t unlabeled_count() const { return samples.size() - labeled_count(); }
  // Labeled samples must precede unlabeled ones.
  void check_label_order() const;
};

struct ImagingConfig {
  int frames = 7;
  int window_len = 64;
  double sample_rate = 128.0;
  std::vector<Band> bands = kDefaultBands;
  GridSpec grid{};
};

// trial[e] is electrode e's series. Frame i is computed on the i-th
// consecutive non-overlapping window of window_len samples.
MultiFrameEEGImage build_multiframe(const std::vector<std::vector<double>>& trial,
                                    const ElectrodeMontage& montage, const ImagingConfig& config,
                                    int label = -1);

// Same, with the interpolator prebuilt (the montage projection is fixed, so
// callers generating many trials reuse it).
MultiFrameEEGImage build_multiframe(const std::vector<std::vector<double>>& trial,
                                    const GridInterpolator& interpolator,
                                    const ImagingConfig& config, int label = -1);

GridInterpolator make_montage_interpolator(const ElectrodeMontage& montage, GridSpec grid);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;          // 1.0 where the channel was constant
  std::vector<bool> centered_only;     // true where stddev collapsed
  bool any_centered_only() const;
};

// Per-channel moments over every frame/pixel of the domain.
ChannelStats fit_channel_stats(const SubjectDomain& domain);

// Standardize with the given (source) statistics; pass the source's own stats
// for the source domain and reuse them for the target so no target statistics
// leak into training.
SubjectDomain normalize_images(const SubjectDomain& domain, const ChannelStats& stats);

}  // namespace csdasa
