#include "csdasa/eeg_imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unordered_set>

namespace csdasa {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

// ---------------------------------------------------------------------------
// montage
// ---------------------------------------------------------------------------

ElectrodeMontage ElectrodeMontage::from_electrodes(std::vector<Electrode> electrodes) {
  if (electrodes.empty()) throw DataError("montage: no electrodes");
  std::unordered_set<std::string> names;
  for (auto& e : electrodes) {
    if (!names.insert(e.name).second) throw DataError("montage: duplicate electrode " + e.name);
    const double norm = std::sqrt(e.position[0] * e.position[0] + e.position[1] * e.position[1] +
                                  e.position[2] * e.position[2]);
    if (norm < 1e-9) throw DataError("montage: zero position for electrode " + e.name);
    for (double& v : e.position) v /= norm;
  }
  ElectrodeMontage m;
  m.electrodes_ = std::move(electrodes);
  return m;
}

ElectrodeMontage ElectrodeMontage::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("montage: cannot open " + path.string());
  std::vector<Electrode> electrodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name) || name[0] == '#') continue;
    Electrode e;
    e.name = name;
    if (!(ls >> e.position[0] >> e.position[1] >> e.position[2])) {
      throw DataError("montage: malformed line " + std::to_string(line_no) + " in " +
                      path.string());
    }
    electrodes.push_back(std::move(e));
  }
  return from_electrodes(std::move(electrodes));
}

ElectrodeMontage ElectrodeMontage::synthetic_cap(int count) {
  if (count < 3) throw ConfigError("montage: synthetic cap needs at least 3 electrodes");
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  std::vector<Electrode> electrodes;
  electrodes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    // z from near-vertex down the cap; azimuth by golden angle
    const double z = 0.98 - 0.93 * static_cast<double>(i) / static_cast<double>(count - 1);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * static_cast<double>(i);
    char name[16];
    std::snprintf(name, sizeof(name), "E%02d", i + 1);
    electrodes.push_back({name, {r * std::cos(a), r * std::sin(a), z}});
  }
  return from_electrodes(std::move(electrodes));
}

// ---------------------------------------------------------------------------
// band power
// ---------------------------------------------------------------------------

std::vector<double> band_powers(std::span<const double> signal, const std::vector<Band>& bands,
                                double sample_rate) {
  if (signal.size() < 2) throw DataError("band_power: signal too short");
  if (!(sample_rate > 0.0)) throw ConfigError("band_power: sample rate must be positive");
  const double nyquist = sample_rate / 2.0;
  for (const Band& b : bands) {
    if (!(b.lo_hz >= 0.0) || !(b.hi_hz > b.lo_hz)) {
      throw ConfigError("band_power: invalid band");
    }
    if (b.hi_hz > nyquist + 1e-9) {
      throw ConfigError("band_power: band extends beyond the Nyquist frequency");
    }
  }

  const std::size_t n = signal.size();
  std::vector<double> window(n);
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                      static_cast<double>(n - 1)));
    wsum += window[i];
  }
  const double norm = 1.0 / (wsum * wsum);
  const double bin_hz = sample_rate / static_cast<double>(n);

  std::vector<double> powers(bands.size(), 0.0);
  std::vector<int> counts(bands.size(), 0);
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k <= half; ++k) {
    const double f = bin_hz * static_cast<double>(k);
    bool wanted = false;
    for (const Band& b : bands) {
      if (f >= b.lo_hz && f < b.hi_hz) {
        wanted = true;
        break;
      }
    }
    if (!wanted) continue;
    double re = 0.0, im = 0.0;
    const double step = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = step * static_cast<double>(i);
      const double v = window[i] * signal[i];
      re += v * std::cos(a);
      im += v * std::sin(a);
    }
    const double p = (re * re + im * im) * norm;
    for (std::size_t bi = 0; bi < bands.size(); ++bi) {
      if (f >= bands[bi].lo_hz && f < bands[bi].hi_hz) {
        powers[bi] += p;
        ++counts[bi];
      }
    }
  }
  for (std::size_t bi = 0; bi < bands.size(); ++bi) {
    if (counts[bi] == 0) {
      throw ConfigError("band_power: window too short to resolve the band");
    }
    powers[bi] /= static_cast<double>(counts[bi]);
  }
  return powers;
}

double band_power(std::span<const double> signal, Band band, double sample_rate) {
  return band_powers(signal, {band}, sample_rate)[0];
}

// ---------------------------------------------------------------------------
// projection
// ---------------------------------------------------------------------------

std::array<double, 2> project_azimuthal_equidistant(const std::array<double, 3>& pos) {
  const double norm = std::sqrt(pos[0] * pos[0] + pos[1] * pos[1] + pos[2] * pos[2]);
  if (std::fabs(norm - 1.0) > 1e-6) {
    throw DataError("projection: position is not on the unit sphere");
  }
  const double z = std::clamp(pos[2], -1.0, 1.0);
  if (z <= -1.0 + 1e-12) {
    throw ConfigError("projection: the pole's antipode has no defined azimuth");
  }
  const double theta = std::acos(z);
  if (theta == 0.0) return {0.0, 0.0};
  const double phi = std::atan2(pos[1], pos[0]);
  return {theta * std::cos(phi), theta * std::sin(phi)};
}

// ---------------------------------------------------------------------------
// interpolation
// ---------------------------------------------------------------------------

namespace {

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a,
             const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew monotone chain; empty result when the points are degenerate
// (fewer than 3 distinct non-collinear points).
std::vector<std::array<double, 2>> convex_hull(std::vector<std::array<double, 2>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const std::size_t n = pts.size();
  if (n < 3) return {};
  std::vector<std::array<double, 2>> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) return {};
  return hull;
}

bool inside_hull(const std::vector<std::array<double, 2>>& hull, double x, double y) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    if (cross(a, b, {x, y}) < -1e-12) return false;
  }
  return true;
}

}  // namespace

GridInterpolator::GridInterpolator(const std::vector<std::array<double, 2>>& points,
                                   GridSpec grid)
    : grid_(grid), n_points_(points.size()) {
  if (points.empty()) throw DataError("interpolation: no points");
  if (grid.width < 1 || grid.height < 1) throw ConfigError("interpolation: empty grid");
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      const double dx = points[i][0] - points[j][0];
      const double dy = points[i][1] - points[j][1];
      if (dx * dx + dy * dy < 1e-18) {
        throw DataError("interpolation: duplicate point coordinates");
      }
    }
  }

  // bounding square, 5% padded
  double r_max = 0.0;
  for (const auto& p : points) r_max = std::max(r_max, std::max(std::fabs(p[0]), std::fabs(p[1])));
  if (r_max == 0.0) r_max = 1.0;
  const double extent = r_max * 1.05;

  const auto hull = convex_hull(points);

  const std::int64_t w = grid.width, h = grid.height;
  node_index_.resize(static_cast<std::size_t>(w * h));
  node_weight_.resize(static_cast<std::size_t>(w * h));

  const std::size_t k_used = std::min<std::size_t>(4, points.size());
  std::vector<std::pair<double, int>> dist(points.size());
  for (std::int64_t i = 0; i < w; ++i) {
    const double x = (w == 1) ? 0.0 : -extent + 2.0 * extent * static_cast<double>(i) /
                                          static_cast<double>(w - 1);
    for (std::int64_t j = 0; j < h; ++j) {
      const double y = (h == 1) ? 0.0 : -extent + 2.0 * extent * static_cast<double>(j) /
                                            static_cast<double>(h - 1);
      for (std::size_t p = 0; p < points.size(); ++p) {
        const double dx = x - points[p][0];
        const double dy = y - points[p][1];
        dist[p] = {dx * dx + dy * dy, static_cast<int>(p)};
      }
      std::sort(dist.begin(), dist.end());

      auto& idx = node_index_[static_cast<std::size_t>(i * h + j)];
      auto& wgt = node_weight_[static_cast<std::size_t>(i * h + j)];
      idx.fill(-1);
      wgt.fill(0.0);

      const bool clamp_to_nearest =
          dist[0].first < 1e-18 || (!hull.empty() && !inside_hull(hull, x, y));
      if (clamp_to_nearest) {
        idx[0] = dist[0].second;
        wgt[0] = 1.0;
        continue;
      }
      double total = 0.0;
      for (std::size_t p = 0; p < k_used; ++p) {
        idx[p] = dist[p].second;
        wgt[p] = 1.0 / dist[p].first;  // 1/d^2
        total += wgt[p];
      }
      for (std::size_t p = 0; p < k_used; ++p) wgt[p] /= total;
    }
  }
}

Tensor GridInterpolator::interpolate(std::span<const double> values) const {
  if (values.size() != n_points_) {
    throw DimensionError("interpolation: " + std::to_string(values.size()) + " values for " +
                         std::to_string(n_points_) + " points");
  }
  std::vector<double> out(node_index_.size(), 0.0);
  for (std::size_t n = 0; n < node_index_.size(); ++n) {
    double acc = 0.0;
    for (std::size_t p = 0; p < 4; ++p) {
      const int i = node_index_[n][p];
      if (i < 0) break;
      acc += node_weight_[n][p] * values[static_cast<std::size_t>(i)];
    }
    out[n] = acc;
  }
  return Tensor::from_data({grid_.width, grid_.height}, std::move(out));
}

Tensor interpolate_to_grid(const std::vector<GridPoint>& points, GridSpec grid) {
  // coincident coordinates are fine when they agree on the value (the
  // duplicate is dropped); conflicting values are unanswerable
  std::vector<std::array<double, 2>> xy;
  std::vector<double> values;
  xy.reserve(points.size());
  values.reserve(points.size());
  for (const auto& p : points) {
    bool duplicate = false;
    for (std::size_t i = 0; i < xy.size(); ++i) {
      const double dx = xy[i][0] - p.x, dy = xy[i][1] - p.y;
      if (dx * dx + dy * dy < 1e-18) {
        if (values[i] != p.value) {
          throw DataError("interpolation: duplicate coordinates with differing values");
        }
        duplicate = true;
        break;
      }
    }
    if (duplicate) continue;
    xy.push_back({p.x, p.y});
    values.push_back(p.value);
  }
  return GridInterpolator(xy, grid).interpolate(values);
}

GridInterpolator make_montage_interpolator(const ElectrodeMontage& montage, GridSpec grid) {
  std::vector<std::array<double, 2>> xy;
  xy.reserve(montage.size());
  for (const auto& e : montage.electrodes()) xy.push_back(project_azimuthal_equidistant(e.position));
  return GridInterpolator(xy, grid);
}

// ---------------------------------------------------------------------------
// multi-frame construction
// ---------------------------------------------------------------------------

MultiFrameEEGImage build_multiframe(const std::vector<std::vector<double>>& trial,
                                    const GridInterpolator& interpolator,
                                    const ImagingConfig& config, int label) {
  if (trial.empty()) throw DataError("build_multiframe: no electrode series");
  const std::size_t needed =
      static_cast<std::size_t>(config.frames) * static_cast<std::size_t>(config.window_len);
  for (const auto& series : trial) {
    if (series.size() < needed) {
      throw DataError("build_multiframe: trial has " + std::to_string(series.size()) +
                      " samples, needs " + std::to_string(needed));
    }
  }
  if (config.frames < 1) throw ConfigError("build_multiframe: needs at least one frame");

  const std::int64_t t = config.frames;
  const std::int64_t c = static_cast<std::int64_t>(config.bands.size());
  const std::int64_t w = config.grid.width, h = config.grid.height;
  const std::size_t n_el = trial.size();

  std::vector<double> frames(static_cast<std::size_t>(t * c * w * h));
  std::vector<double> powers(n_el * config.bands.size());
  std::vector<double> values(n_el);
  for (std::int64_t fi = 0; fi < t; ++fi) {
    const std::size_t off = static_cast<std::size_t>(fi) * static_cast<std::size_t>(config.window_len);
    for (std::size_t e = 0; e < n_el; ++e) {
      const auto bp = band_powers({trial[e].data() + off, static_cast<std::size_t>(config.window_len)},
                                  config.bands, config.sample_rate);
      for (std::size_t bi = 0; bi < bp.size(); ++bi) powers[e * bp.size() + bi] = bp[bi];
    }
    for (std::int64_t bi = 0; bi < c; ++bi) {
      for (std::size_t e = 0; e < n_el; ++e)
        values[e] = powers[e * static_cast<std::size_t>(c) + static_cast<std::size_t>(bi)];
      Tensor img = interpolator.interpolate(values);
      std::copy_n(img.data().data(), w * h,
                  frames.data() + static_cast<std::size_t>((fi * c + bi) * w * h));
    }
  }

  MultiFrameEEGImage image;
  image.frames = Tensor::from_data({t, c, w, h}, std::move(frames));
  image.label = label;
  image.has_label = label >= 0;
  return image;
}

MultiFrameEEGImage build_multiframe(const std::vector<std::vector<double>>& trial,
                                    const ElectrodeMontage& montage, const ImagingConfig& config,
                                    int label) {
  if (trial.size() != montage.size()) {
    throw DataError("build_multiframe: " + std::to_string(trial.size()) + " series for " +
                    std::to_string(montage.size()) + " electrodes");
  }
  return build_multiframe(trial, make_montage_interpolator(montage, config.grid), config, label);
}

// ---------------------------------------------------------------------------
// subject domains and normalization
// ---------------------------------------------------------------------------

std::size_t SubjectDomain::labeled_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.has_label) ++n;
  }
  return n;
}

void SubjectDomain::check_label_order() const {
  bool seen_unlabeled = false;
  for (const auto& s : samples) {
    if (!s.has_label) {
      seen_unlabeled = true;
    } else if (seen_unlabeled) {
      throw DataError("subject " + subject_id + ": labeled sample after unlabeled samples");
    }
  }
}

bool ChannelStats::any_centered_only() const {
  return std::any_of(centered_only.begin(), centered_only.end(), [](bool b) { return b; });
}

ChannelStats fit_channel_stats(const SubjectDomain& domain) {
  if (domain.samples.empty()) throw DataError("normalize: empty domain " + domain.subject_id);
  const Shape& s0 = domain.samples.front().frames.shape();
  const std::int64_t c = s0[1];
  const std::int64_t plane = s0[2] * s0[3];
  const std::int64_t t = s0[0];

  ChannelStats stats;
  stats.mean.assign(static_cast<std::size_t>(c), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(c), 0.0);
  stats.centered_only.assign(static_cast<std::size_t>(c), false);

  std::vector<double> sq(static_cast<std::size_t>(c), 0.0);
  std::int64_t count = 0;
  for (const auto& sample : domain.samples) {
    if (sample.frames.shape() != s0) throw DataError("normalize: inconsistent sample shapes");
    const double* d = sample.frames.data().data();
    for (std::int64_t fi = 0; fi < t; ++fi)
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double* p = d + (fi * c + ci) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          stats.mean[static_cast<std::size_t>(ci)] += p[i];
          sq[static_cast<std::size_t>(ci)] += p[i] * p[i];
        }
      }
    count += t * plane;
  }
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const auto i = static_cast<std::size_t>(ci);
    stats.mean[i] /= static_cast<double>(count);
    const double var = sq[i] / static_cast<double>(count) - stats.mean[i] * stats.mean[i];
    if (var < 1e-24) {
      stats.stddev[i] = 1.0;
      stats.centered_only[i] = true;
      std::cerr << "normalize: channel " << ci << " of subject " << domain.subject_id
                << " has zero variance; centering only\n";
    } else {
      stats.stddev[i] = std::sqrt(var);
    }
  }
  return stats;
}

SubjectDomain normalize_images(const SubjectDomain& domain, const ChannelStats& stats) {
  if (domain.samples.empty()) throw DataError("normalize: empty domain " + domain.subject_id);
  const Shape& s0 = domain.samples.front().frames.shape();
  const std::int64_t c = s0[1];
  if (static_cast<std::size_t>(c) != stats.mean.size()) {
    throw DimensionError("normalize: stats cover " + std::to_string(stats.mean.size()) +
                         " channels, domain has " + std::to_string(c));
  }
  const std::int64_t plane = s0[2] * s0[3];
  const std::int64_t t = s0[0];

  SubjectDomain out;
  out.subject_id = domain.subject_id;
  out.samples.reserve(domain.samples.size());
  for (const auto& sample : domain.samples) {
    std::vector<double> d(sample.frames.data().begin(), sample.frames.data().end());
    for (std::int64_t fi = 0; fi < t; ++fi)
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const auto i = static_cast<std::size_t>(ci);
        double* p = d.data() + (fi * c + ci) * plane;
        const double inv = 1.0 / stats.stddev[i];
        for (std::int64_t px = 0; px < plane; ++px) p[px] = (p[px] - stats.mean[i]) * inv;
      }
    MultiFrameEEGImage img;
    img.frames = Tensor::from_data(s0, std::move(d));
    img.label = sample.label;
    img.has_label = sample.has_label;
    out.samples.push_back(std::move(img));
  }
  return out;
}

}  // namespace csdasa
