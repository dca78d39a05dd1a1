#pragma once

// Desk-scale foveated search model: eccentricity-dependent template responses
// at every candidate location for each fixation, equal-variance Gaussian
// likelihood ratios multiplied across fixations, max-rule decision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "foviq/detectability.hpp"
#include "foviq/fft.hpp"
#include "foviq/rng.hpp"
#include "foviq/stimulus.hpp"
#include "foviq/templates.hpp"
#include "foviq/weighting.hpp"

namespace foviq {

enum class ScanpathSource { Recorded, GridSynthetic };

struct Fixation {
  double x = 0.0;  // px
  double y = 0.0;  // px
  std::size_t slice = 0;
  friend bool operator==(const Fixation&, const Fixation&) = default;
};

struct Scanpath {
  std::vector<Fixation> fixations;
  ScanpathSource source = ScanpathSource::Recorded;
};

/// Candidate locations: every `stride`-th pixel in x and y, on every slice.
struct LocationGrid {
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t stride = 1;

  std::size_t size() const { return nx * ny * nz; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (k * ny + j) * nx + i; }
  Location at(std::size_t idx) const {
    const std::size_t i = idx % nx, j = (idx / nx) % ny, k = idx / (nx * ny);
    return {i * stride, j * stride, k};
  }
};

inline LocationGrid make_location_grid(Dims volume, std::size_t stride) {
  if (stride == 0) throw InvalidArgument("stride must be positive");
  if (volume.w % stride || volume.h % stride)
    warn("stride " + std::to_string(stride) + " does not divide display " + volume.str() +
         "; trailing locations dropped");
  return {volume.w / stride, volume.h / stride, volume.d, stride};
}

/// Equal-variance Gaussian log likelihood ratio: d' z - d'^2 / 2 with
/// z = (lambda - mu_n) / sigma_lambda.
inline double log_likelihood_ratio(double lambda, double mu_n, double sigma_lambda, double dprime) {
  if (!(sigma_lambda > 0.0)) throw DegenerateError("likelihood ratio needs sigma_lambda > 0");
  const double z = (lambda - mu_n) / sigma_lambda;
  return dprime * z - 0.5 * dprime * dprime;
}

/// Total decision-variable sd for a bin (external plus internal noise).
inline double total_sigma(const BinStats& s, double internal_k) {
  return s.sigma_ext * std::sqrt(1.0 + internal_k * internal_k);
}

inline double to_likelihood_ratio(double lambda, const BinStats& s, double internal_k) {
  return std::exp(log_likelihood_ratio(lambda, s.mu_n, total_sigma(s, internal_k), s.dprime));
}

/// Background-only calibration of (mu_n, sigma_ext) per bin from `patches`
/// patches, with d'_E = w.s / (sigma_ext sqrt(1 + K^2)). Stored in the set.
inline void calibrate_bin_stats(EccentricityTemplateSet& set, const SignalProfile& signal,
                                const BackgroundModel& background, std::size_t patches = 2000,
                                std::uint64_t seed = 0) {
  if (patches < 2) throw InvalidArgument("calibration needs at least two background patches");
  const Volume sig = signal_in_window(signal, set.modality, set.window);
  PatchSampler sampler(background, set.template_dims(), seed);
  const std::size_t nb = set.bins();
  std::vector<std::vector<double>> resp(nb, std::vector<double>(patches));
  for (std::size_t i = 0; i < patches; ++i) {
    const Volume p = sampler.next();
    for (std::size_t b = 0; b < nb; ++b) resp[b][i] = decision_variable(set.templates[b], p);
  }
  set.bin_stats.assign(nb, {});
  for (std::size_t b = 0; b < nb; ++b) {
    const auto m = detail::moments(resp[b]);
    auto& st = set.bin_stats[b];
    st.mu_n = m.mean;
    st.sigma_ext = std::sqrt(m.var);
    if (!(st.sigma_ext > 0.0)) throw DegenerateError("calibration: zero background response variance");
    st.dprime = with_internal_noise(decision_variable(set.templates[b], sig) / st.sigma_ext, set.internal_noise_K);
  }
}

/// Per-bin template spectra laid out for circular correlation on one
/// stimulus grid (template center on the grid origin).
class TemplateSpectra {
 public:
  TemplateSpectra(const EccentricityTemplateSet& set, Dims grid) : grid_(grid) {
    const Dims t = set.template_dims();
    if (t.w > grid.w || t.h > grid.h || t.d > grid.d)
      throw InvalidArgument("template " + t.str() + " larger than stimulus " + grid.str());
    for (const auto& w : set.templates) {
      std::vector<double> placed(grid.size(), 0.0);
      for (std::size_t z = 0; z < t.d; ++z)
        for (std::size_t y = 0; y < t.h; ++y)
          for (std::size_t x = 0; x < t.w; ++x) {
            const std::size_t gx = (x + grid.w - t.w / 2) % grid.w;
            const std::size_t gy = (y + grid.h - t.h / 2) % grid.h;
            const std::size_t gz = (z + grid.d - t.d / 2) % grid.d;
            placed[(gz * grid.h + gy) * grid.w + gx] = w(x, y, z);
          }
      ComplexBuffer spec = rfft(placed, grid);
      for (auto& c : spec) c = std::conj(c);
      spectra_.push_back(std::move(spec));
    }
    template_dims_ = t;
  }

  const Dims& grid() const { return grid_; }
  const Dims& template_dims() const { return template_dims_; }
  std::size_t bins() const { return spectra_.size(); }
  const ComplexBuffer& operator[](std::size_t b) const { return spectra_[b]; }

 private:
  Dims grid_;
  Dims template_dims_;
  std::vector<ComplexBuffer> spectra_;
};

/// Template responses of one stimulus at every candidate location, for each
/// bin's template. Bins are computed lazily.
class ResponseField {
 public:
  ResponseField(const Volume& stimulus, const TemplateSpectra& spectra, std::size_t stride)
      : spectra_(&spectra), grid_(make_location_grid(stimulus.dims(), stride)) {
    if (stimulus.dims() != spectra.grid())
      throw InvalidArgument("stimulus " + stimulus.dims().str() + " does not match template spectra grid " +
                            spectra.grid().str());
    stimulus_spec_ = rfft(stimulus.values(), stimulus.dims());
    maps_.resize(spectra.bins());
    const Dims t = spectra.template_dims();
    covered_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i)
      covered_[i] = box_fits(stimulus.dims(), t, grid_.at(i));
  }

  const LocationGrid& grid() const { return grid_; }
  const Dims& template_dims() const { return spectra_->template_dims(); }
  bool covered(std::size_t idx) const { return covered_[idx]; }

  double response(std::size_t bin, std::size_t idx) {
    if (maps_[bin].empty()) compute(bin);
    return maps_[bin][idx];
  }

 private:
  void compute(std::size_t bin) {
    const Dims g = spectra_->grid();
    ComplexBuffer prod(stimulus_spec_.size());
    const auto& w = (*spectra_)[bin];
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = stimulus_spec_[i] * w[i];
    RealBuffer corr = irfft(std::move(prod), g);
    const double inv = 1.0 / double(g.size());
    auto& m = maps_[bin];
    m.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      const Location p = grid_.at(i);
      m[i] = corr[(p.z * g.h + p.y) * g.w + p.x] * inv;
    }
  }

  const TemplateSpectra* spectra_;
  LocationGrid grid_;
  ComplexBuffer stimulus_spec_;
  std::vector<std::vector<double>> maps_;
  std::vector<bool> covered_;
};

struct ResponseMap {
  LocationGrid grid;
  Fixation fixation;
  double px_per_deg = 36.0;
  std::vector<double> lambda;        // per location; meaningful where covered
  std::vector<std::uint8_t> covered;  // 1 where the location was evaluated
  std::vector<std::size_t> bin;       // eccentricity bin used per location

  /// In-plane distance from a location to the fixation, in dva.
  double ecc_of(std::size_t idx) const {
    const Location p = grid.at(idx);
    return std::hypot(double(p.x) - fixation.x, double(p.y) - fixation.y) / px_per_deg;
  }
};

/// Responses for one fixation: every location whose template slab contains
/// the fixated slice and whose template box fits in the stimulus gets
/// w_E(p).g_p plus internal noise, with E the in-plane distance to the fixation.
inline ResponseMap response_map(ResponseField& field, const Fixation& fixation,
                                const EccentricityTemplateSet& set, Rng& rng) {
  if (set.bin_stats.size() != set.bins())
    throw DataError("response_map: template set has no background calibration");
  ResponseMap r;
  r.grid = field.grid();
  r.fixation = fixation;
  r.px_per_deg = set.px_per_deg;
  r.lambda.assign(r.grid.size(), 0.0);
  r.covered.assign(r.grid.size(), 0);
  r.bin.assign(r.grid.size(), 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t plane = r.grid.nx * r.grid.ny;
  if (fixation.slice >= r.grid.nz) return r;
  // A template centered on slice z spans z - td/2 .. z - td/2 + td - 1.
  const std::size_t td = field.template_dims().d;
  const std::size_t z_hi = std::min(r.grid.nz - 1, fixation.slice + td / 2);
  const std::size_t z_lo = fixation.slice + td / 2 >= td - 1 ? fixation.slice + td / 2 - (td - 1) : 0;
  for (std::size_t i = z_lo * plane; i < (z_hi + 1) * plane; ++i) {
    if (!field.covered(i)) continue;
    const std::size_t b = bin_index(r.ecc_of(i), set.ecc_bins);
    const double internal_sd = set.internal_noise_K * set.bin_stats[b].sigma_ext;
    r.lambda[i] = field.response(b, i) + internal_sd * normal(rng);
    r.covered[i] = 1;
    r.bin[i] = b;
  }
  return r;
}

/// Log likelihood ratios; uncovered locations hold 0 (LR 1).
struct LrMap {
  LocationGrid grid;
  std::vector<double> log_lr;
  std::vector<std::uint8_t> covered;
};

inline LrMap likelihood_map(const ResponseMap& r, const EccentricityTemplateSet& set) {
  LrMap m{r.grid, std::vector<double>(r.grid.size(), 0.0), r.covered};
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    if (!r.covered[i]) continue;
    const auto& st = set.bin_stats[r.bin[i]];
    m.log_lr[i] = log_likelihood_ratio(r.lambda[i], st.mu_n, total_sigma(st, set.internal_noise_K), st.dprime);
  }
  return m;
}

/// Per-location product of likelihood ratios (sum of logs).
inline LrMap integrate_fixations(std::span<const LrMap> maps) {
  if (maps.empty()) throw InvalidArgument("integrate_fixations: no maps");
  LrMap out{maps.front().grid, std::vector<double>(maps.front().log_lr.size(), 0.0),
            std::vector<std::uint8_t>(maps.front().log_lr.size(), 0)};
  for (const auto& m : maps) {
    if (m.log_lr.size() != out.log_lr.size()) throw InvalidArgument("integrate_fixations: geometry mismatch");
    for (std::size_t i = 0; i < m.log_lr.size(); ++i) {
      out.log_lr[i] += m.log_lr[i];
      out.covered[i] |= m.covered[i];
    }
  }
  return out;
}

struct TrialVerdict {
  std::string trial_id;
  double max_lr = 1.0;
  double log_max_lr = 0.0;
  bool decision = false;
  Location argmax;
  bool truth = false;
  std::vector<double> per_fixation_trace;  // max log LR after each fixation
};

/// Max over evaluated locations; first in row-major order on ties. A map
/// with no evaluated location yields LR 1 at the first location.
inline TrialVerdict decide(const LrMap& map, double threshold) {
  if (map.log_lr.empty()) throw InvalidArgument("decide: empty map");
  TrialVerdict v;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  bool any = false;
  for (std::size_t i = 0; i < map.log_lr.size(); ++i) {
    if (!map.covered[i]) continue;
    if (!any || map.log_lr[i] > best) {
      best = map.log_lr[i];
      arg = i;
      any = true;
    }
  }
  if (!any) best = 0.0;
  v.log_max_lr = best;
  v.max_lr = std::exp(best);
  v.argmax = map.grid.at(arg);
  v.decision = v.max_lr >= threshold;
  return v;
}

/// Grid fixations per slice (timing-derived counts), visited in slice order.
/// `volume_slices` defaults to params.n_slices; `jitter_px` > 0 perturbs
/// fixations with seeded Gaussian noise.
inline Scanpath synthesize_scanpath(const SearchTimingParams& params, Modality modality, std::uint64_t seed = 0,
                                    std::size_t volume_slices = 0, double jitter_px = 0.0) {
  const FixationCount count = estimate_fixation_count(params, modality);
  const auto grid = grid_fixations(count.per_slice, params.display_w, params.display_h);
  const std::size_t slices = modality == Modality::TwoD ? 1 : (volume_slices ? volume_slices : params.n_slices);
  Scanpath sp;
  sp.source = ScanpathSource::GridSynthetic;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, jitter_px > 0.0 ? jitter_px : 1.0);
  for (std::size_t z = 0; z < slices; ++z)
    for (const auto& g : grid) {
      Fixation f{g.x, g.y, z};
      if (jitter_px > 0.0) {
        f.x = std::clamp(f.x + normal(rng), 0.0, double(params.display_w));
        f.y = std::clamp(f.y + normal(rng), 0.0, double(params.display_h));
      }
      sp.fixations.push_back(f);
    }
  return sp;
}

struct FsmOptions {
  std::size_t stride = 4;
  double threshold = 1.0;
  bool keep_trace = false;
};

/// Runs the search model on stimuli sharing one grid, caching template spectra.
class FsmRunner {
 public:
  FsmRunner(const EccentricityTemplateSet& set, FsmOptions options) : set_(&set), options_(options) {
    if (set.bin_stats.size() != set.bins()) throw DataError("FSM needs a calibrated template set");
  }

  TrialVerdict run_trial(const TrialStimulus& stimulus, const Scanpath& scanpath, std::uint64_t seed) {
    if (scanpath.fixations.empty()) throw InvalidArgument("scanpath must be non-empty");
    if (!spectra_ || spectra_->grid() != stimulus.data.dims())
      spectra_.emplace(*set_, stimulus.data.dims());
    ResponseField field(stimulus.data, *spectra_, options_.stride);
    LrMap total;
    std::vector<double> trace;
    for (std::size_t f = 0; f < scanpath.fixations.size(); ++f) {
      const auto& fix = scanpath.fixations[f];
      if (fix.x < 0 || fix.y < 0 || fix.x > double(stimulus.data.width()) ||
          fix.y > double(stimulus.data.height()) || fix.slice >= stimulus.data.depth())
        throw InvalidArgument("fixation outside the stimulus");
      Rng rng = make_rng(seed, f);
      LrMap m = likelihood_map(response_map(field, fix, *set_, rng), *set_);
      if (f == 0) {
        total = std::move(m);
      } else {
        const LrMap pair[2] = {std::move(total), std::move(m)};
        total = integrate_fixations(pair);
      }
      if (options_.keep_trace) trace.push_back(decide(total, options_.threshold).log_max_lr);
    }
    TrialVerdict v = decide(total, options_.threshold);
    v.trial_id = stimulus.trial_id;
    v.truth = stimulus.signal_present;
    v.per_fixation_trace = std::move(trace);
    return v;
  }

 private:
  const EccentricityTemplateSet* set_;
  FsmOptions options_;
  std::optional<TemplateSpectra> spectra_;
};

struct BatchResult {
  std::vector<TrialVerdict> verdicts;
  double dprime = 0.0;            // from log max-LR distributions, pooled sd
  double auc = 0.5;               // area under the max-LR ROC
  double proportion_correct = 0.0;
  double hit_rate = 0.0;
  double false_alarm_rate = 0.0;
};

/// Mann-Whitney area under the ROC curve (ties count half).
inline double roc_area(std::span<const double> present, std::span<const double> absent) {
  if (present.empty() || absent.empty()) throw InvalidArgument("roc_area needs both classes");
  double acc = 0.0;
  for (double p : present)
    for (double a : absent) acc += p > a ? 1.0 : (p == a ? 0.5 : 0.0);
  return acc / (double(present.size()) * double(absent.size()));
}

inline BatchResult summarize(std::vector<TrialVerdict> verdicts) {
  BatchResult r;
  std::vector<double> present, absent;
  std::size_t correct = 0, hits = 0, fas = 0;
  for (const auto& v : verdicts) {
    (v.truth ? present : absent).push_back(v.log_max_lr);
    correct += v.decision == v.truth;
    if (v.truth && v.decision) ++hits;
    if (!v.truth && v.decision) ++fas;
  }
  r.proportion_correct = verdicts.empty() ? 0.0 : double(correct) / double(verdicts.size());
  if (!present.empty()) r.hit_rate = double(hits) / double(present.size());
  if (!absent.empty()) r.false_alarm_rate = double(fas) / double(absent.size());
  if (present.size() >= 2 && absent.size() >= 2) {
    r.dprime = empirical_dprime(present, absent);
    r.auc = roc_area(present, absent);
  }
  r.verdicts = std::move(verdicts);
  return r;
}

/// One scanpath per stimulus; trial i uses child seed i of `seed`.
inline BatchResult run_batch(std::span<const TrialStimulus> stimuli, std::span<const Scanpath> scanpaths,
                             const EccentricityTemplateSet& set, const FsmOptions& options, std::uint64_t seed) {
  if (stimuli.size() != scanpaths.size()) throw InvalidArgument("run_batch needs one scanpath per stimulus");
  FsmRunner runner(set, options);
  std::vector<TrialVerdict> verdicts;
  for (std::size_t i = 0; i < stimuli.size(); ++i)
    verdicts.push_back(runner.run_trial(stimuli[i], scanpaths[i], child_seed(seed, i)));
  return summarize(std::move(verdicts));
}

// ---------------------------------------------------------------------------
// Synthetic trials

/// Draws seeded search trials: a background volume, and for present trials a
/// signal at a random candidate location where both the signal and the
/// template box fit. 2D trials are extracted from the volume.
class SyntheticTrials {
 public:
  SyntheticTrials(BackgroundModel background, SignalProfile signal, Modality modality, Dims template_dims,
                  std::size_t stride, std::uint64_t seed)
      : bg_(background), signal_(std::move(signal)), modality_(modality), seed_(seed) {
    if (background.dims.d == 1) {
      if (modality == Modality::ThreeD) throw InvalidArgument("3D trials need a background with depth > 1");
      signal_.voxels = signal_.central_slice();
    }
    const LocationGrid grid = make_location_grid(background.dims, stride);
    Dims box{std::max(template_dims.w, signal_.voxels.width()), std::max(template_dims.h, signal_.voxels.height()),
             std::max(modality == Modality::ThreeD ? template_dims.d : 1, signal_.voxels.depth())};
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Location p = grid.at(i);
      if (box_fits(background.dims, box, p)) candidates_.push_back(p);
    }
    if (candidates_.empty()) throw InvalidArgument("no candidate location can hold the signal and template");
  }

  TrialStimulus make(std::size_t index, bool present) const {
    Rng rng = make_rng(seed_, index);
    const std::uint64_t volume_seed = rng();
    Volume vol = bg_.sample(volume_seed).voxels;
    TrialStimulus t;
    if (present) {
      const Location at = candidates_[std::uniform_int_distribution<std::size_t>(0, candidates_.size() - 1)(rng)];
      t = insert_signal(vol, signal_, at);
    } else {
      t = absent_trial(std::move(vol));
    }
    t.trial_id = std::to_string(index);
    if (modality_ == Modality::TwoD && t.data.depth() > 1) t = extract_2d(t, rng());
    return t;
  }

 private:
  BackgroundModel bg_;
  SignalProfile signal_;
  Modality modality_;
  std::uint64_t seed_;
  std::vector<Location> candidates_;
};

}  // namespace foviq
