#pragma once

// Weighting schemes m_E that collapse a d'_E curve into one figure of merit:
// <d'> = sum_E m_E d'_E.

#include <algorithm>
#include <array>
#include <sstream>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "foviq/detectability.hpp"
#include "foviq/stimulus.hpp"

namespace foviq {

enum class WeightScheme { Average, DPrimeWeighted, EtClosest, TimeClosest };

inline std::string to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::Average: return "avg";
    case WeightScheme::DPrimeWeighted: return "dprime";
    case WeightScheme::EtClosest: return "et";
    default: return "time";
  }
}

inline WeightScheme parse_weight_scheme(const std::string& s) {
  if (s == "avg") return WeightScheme::Average;
  if (s == "dprime") return WeightScheme::DPrimeWeighted;
  if (s == "et") return WeightScheme::EtClosest;
  if (s == "time") return WeightScheme::TimeClosest;
  throw InvalidArgument("unknown weighting scheme '" + s + "' (expected avg|dprime|et|time)");
}

struct WeightVector {
  std::vector<double> ecc_bins;
  std::vector<double> weights;
  WeightScheme scheme = WeightScheme::Average;
  std::string provenance;
};

/// Parses "start:step:stop" (stop inclusive) into bin left edges.
inline std::vector<double> parse_bins(const std::string& spec) {
  double start = 0, step = 0, stop = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> start >> c1 >> step >> c2 >> stop) || c1 != ':' || c2 != ':' || !in.eof())
    throw InvalidArgument("bins must look like start:step:stop, got '" + spec + "'");
  if (!(step > 0.0) || stop < start) throw InvalidArgument("bins need step > 0 and stop >= start");
  std::vector<double> bins;
  const auto n = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) bins.push_back(start + double(i) * step);
  return bins;
}

/// Bin k covers [bins[k], bins[k+1]); the last bin takes everything beyond.
inline std::size_t bin_index(double ecc, const std::vector<double>& bins) {
  auto it = std::upper_bound(bins.begin(), bins.end(), ecc);
  if (it == bins.begin()) return 0;
  return static_cast<std::size_t>(std::distance(bins.begin(), it)) - 1;
}

/// Bins 0, step, ... up to the largest eccentricity in a w x h display
/// (its diagonal, the farthest a location can sit from a fixation).
inline std::vector<double> display_bins(std::size_t w, std::size_t h, double px_per_deg, double step = 1.0) {
  const double e = std::hypot(double(w), double(h)) / px_per_deg;
  std::vector<double> bins;
  for (double b = 0.0; b <= e + 1e-12; b += step) bins.push_back(b);
  return bins;
}

inline WeightVector average_weights(const std::vector<double>& ecc_bins) {
  if (ecc_bins.empty()) throw InvalidArgument("average_weights: no bins");
  WeightVector wv;
  wv.ecc_bins = ecc_bins;
  wv.weights.assign(ecc_bins.size(), 1.0 / double(ecc_bins.size()));
  wv.scheme = WeightScheme::Average;
  wv.provenance = "uniform over " + std::to_string(ecc_bins.size()) + " bins";
  return wv;
}

/// m_E = d'_E / sum d'_E.
inline WeightVector dprime_weights(const DPrimeCurve& curve) {
  if (curve.dprime.empty()) throw InvalidArgument("dprime_weights: empty curve");
  double total = 0.0;
  for (double d : curve.dprime) {
    if (d < 0.0) throw InvalidArgument("dprime_weights: negative d'");
    total += d;
  }
  if (!(total > 0.0)) throw DegenerateError("dprime_weights: all-zero d' curve");
  WeightVector wv;
  wv.ecc_bins = curve.ecc_bins;
  for (double d : curve.dprime) wv.weights.push_back(d / total);
  wv.scheme = WeightScheme::DPrimeWeighted;
  wv.provenance = "normalized " + to_string(curve.method) + " d' of " + to_string(curve.model) + "/" +
                  to_string(curve.signal) + "/" + to_string(curve.modality);
  return wv;
}

// ---------------------------------------------------------------------------
// Eye-tracking closest fixation

struct RecordedFixation {
  double x = 0.0;  // px
  double y = 0.0;  // px
  std::size_t slice = 0;
  double duration_ms = 0.0;
};

struct FixationTrial {
  std::string trial_id;
  Modality modality = Modality::TwoD;
  bool signal_present = false;
  std::optional<std::array<double, 3>> signal_xyz;  // x px, y px, slice
  std::vector<RecordedFixation> fixations;
};

struct FixationLog {
  std::vector<FixationTrial> trials;
};

/// Smallest in-plane distance (px) from any fixation to (x, y).
inline double min_fixation_distance(const std::vector<RecordedFixation>& fixations, double x, double y) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : fixations) best = std::min(best, std::hypot(f.x - x, f.y - y));
  return best;
}

/// Histogram of each signal-present trial's closest-fixation eccentricity.
/// Trials without fixations are skipped and counted in the provenance.
inline WeightVector et_closest_fix_weights(const FixationLog& log, const std::vector<double>& ecc_bins,
                                           double px_per_deg) {
  validate_bins(ecc_bins);
  if (!(px_per_deg > 0.0)) throw InvalidArgument("px_per_deg must be positive");
  std::vector<double> counts(ecc_bins.size(), 0.0);
  std::size_t used = 0, skipped = 0, present = 0;
  for (const auto& t : log.trials) {
    if (!t.signal_present) continue;
    ++present;
    if (!t.signal_xyz) throw DataError("trial " + t.trial_id + " is signal-present without a location");
    if (t.fixations.empty()) {
      ++skipped;
      continue;
    }
    const double d = min_fixation_distance(t.fixations, (*t.signal_xyz)[0], (*t.signal_xyz)[1]);
    counts[bin_index(d / px_per_deg, ecc_bins)] += 1.0;
    ++used;
  }
  if (present == 0) throw InvalidArgument("et_closest_fix_weights: no signal-present trials");
  if (used == 0) throw InvalidArgument("et_closest_fix_weights: no signal-present trial has fixations");
  if (skipped) warn(std::to_string(skipped) + " signal-present trial(s) without fixations skipped");
  WeightVector wv;
  wv.ecc_bins = ecc_bins;
  for (double c : counts) wv.weights.push_back(c / double(used));
  wv.scheme = WeightScheme::EtClosest;
  wv.provenance = "eye tracking: " + std::to_string(used) + " trials used, " + std::to_string(skipped) +
                  " skipped without fixations";
  return wv;
}

// ---------------------------------------------------------------------------
// Timing-based closest fixation

struct SearchTimingParams {
  double median_fixation_time_ms = 250.0;
  double median_response_time_s = 3.16;
  std::size_t display_w = 1024;
  std::size_t display_h = 820;
  std::size_t n_slices = 1;
  double px_per_deg = 36.0;

  void validate() const {
    if (!(median_fixation_time_ms > 0.0) || !(median_response_time_s > 0.0) || display_w == 0 ||
        display_h == 0 || n_slices == 0 || !(px_per_deg > 0.0))
      throw InvalidArgument("search timing parameters must all be positive");
  }
};

struct FixationCount {
  std::size_t total = 1;
  std::size_t per_slice = 1;  // equals total for 2D
};

/// round(response / fixation time), at least 1; 3D spreads the total over
/// slices with at least one fixation each.
inline FixationCount estimate_fixation_count(const SearchTimingParams& p, Modality modality) {
  p.validate();
  const double ratio = p.median_response_time_s * 1000.0 / p.median_fixation_time_ms;
  FixationCount c;
  c.total = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio)));
  c.per_slice = modality == Modality::TwoD ? c.total : std::max<std::size_t>(1, c.total / p.n_slices);
  return c;
}

struct GridPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Rows x cols grid whose aspect best matches h/w among shapes with no empty
/// row or column; fixations sit at cell centers, first `count` in row-major order.
inline std::vector<GridPoint> grid_fixations(std::size_t count, std::size_t display_w, std::size_t display_h) {
  if (count == 0) throw InvalidArgument("grid_fixations: count must be at least 1");
  if (display_w == 0 || display_h == 0) throw InvalidArgument("grid_fixations: empty display");
  const double target = double(display_h) / double(display_w);
  std::size_t best_r = 1, best_c = count;
  double best_err = std::numeric_limits<double>::infinity();
  std::size_t best_cells = std::numeric_limits<std::size_t>::max();
  for (std::size_t r = 1; r <= count; ++r) {
    const std::size_t c = (count + r - 1) / r;  // fewest columns that fit
    if ((r - 1) * c >= count) continue;          // empty last row
    const double err = std::abs(double(r) / double(c) - target);
    if (err < best_err - 1e-12 || (std::abs(err - best_err) <= 1e-12 && r * c < best_cells)) {
      best_r = r;
      best_c = c;
      best_err = err;
      best_cells = r * c;
    }
  }
  std::vector<GridPoint> pts;
  for (std::size_t i = 0; i < best_r && pts.size() < count; ++i)
    for (std::size_t j = 0; j < best_c && pts.size() < count; ++j)
      pts.push_back({(double(j) + 0.5) * double(display_w) / double(best_c),
                     (double(i) + 0.5) * double(display_h) / double(best_r)});
  return pts;
}

/// Distance (px) from each pixel center to its nearest grid fixation.
inline Volume closest_fixation_map(const std::vector<GridPoint>& fixations, std::size_t w, std::size_t h) {
  Volume d({w, h, 1});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& f : fixations)
        best = std::min(best, std::hypot(double(x) + 0.5 - f.x, double(y) + 0.5 - f.y));
      d(x, y) = best;
    }
  return d;
}

/// Fraction of display pixels whose closest-fixation eccentricity falls in
/// each bin, for fixations on the timing-derived grid (per slice in 3D).
inline WeightVector time_closest_fix_weights(const SearchTimingParams& p, Modality modality,
                                             const std::vector<double>& ecc_bins) {
  validate_bins(ecc_bins);
  const FixationCount count = estimate_fixation_count(p, modality);
  const auto grid = grid_fixations(count.per_slice, p.display_w, p.display_h);
  const Volume dist = closest_fixation_map(grid, p.display_w, p.display_h);
  std::vector<double> counts(ecc_bins.size(), 0.0);
  for (double d : dist.values()) counts[bin_index(d / p.px_per_deg, ecc_bins)] += 1.0;
  WeightVector wv;
  wv.ecc_bins = ecc_bins;
  const double total = double(dist.size());
  for (double c : counts) wv.weights.push_back(c / total);
  wv.scheme = WeightScheme::TimeClosest;
  wv.provenance = "timing: " + std::to_string(count.per_slice) + " grid fixation(s)" +
                  (modality == Modality::ThreeD ? " per slice" : "") + " on " + std::to_string(p.display_w) +
                  "x" + std::to_string(p.display_h);
  return wv;
}

/// <d'> = sum m_E d'_E.
inline double aggregate_dprime(const DPrimeCurve& curve, const WeightVector& weights) {
  if (curve.ecc_bins.size() != weights.ecc_bins.size() || curve.dprime.size() != weights.weights.size())
    throw InvalidArgument("aggregate_dprime: curve and weights use different bins");
  for (std::size_t i = 0; i < curve.ecc_bins.size(); ++i)
    if (std::abs(curve.ecc_bins[i] - weights.ecc_bins[i]) > 1e-9)
      throw InvalidArgument("aggregate_dprime: curve and weights use different bins");
  return std::inner_product(curve.dprime.begin(), curve.dprime.end(), weights.weights.begin(), 0.0);
}

}  // namespace foviq
