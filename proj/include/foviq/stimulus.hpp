#pragma once

// Power-law noise volumes, MCALC/MASS signal profiles, signal insertion and
// 2D trial extraction.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "foviq/array3.hpp"
#include "foviq/fft.hpp"
#include "foviq/rng.hpp"

namespace foviq {

struct NoiseParams {
  Dims dims{256, 256, 1};
  double mean = 128.0;
  double sd = 25.0;
  /// Exponent of the noise *power* spectrum (power ~ f^exponent).
  double exponent = -2.8;
  std::uint64_t seed = 0;
};

struct NoiseVolume {
  Volume voxels;
  double mean = 0.0;
  double sd = 0.0;
  double exponent = 0.0;
  std::uint64_t seed = 0;

  const Dims& dims() const { return voxels.dims(); }
};

namespace detail {

inline void validate_noise_params(const NoiseParams& p) {
  if (p.dims.w == 0 || p.dims.h == 0 || p.dims.d == 0)
    throw InvalidArgument("noise volume dims must be positive, got " + p.dims.str());
  if (p.dims.size() < 2) throw InvalidArgument("noise volume needs at least two voxels");
  if (!(p.sd > 0.0)) throw InvalidArgument("noise sd must be positive");
  if (!std::isfinite(p.exponent) || !std::isfinite(p.mean))
    throw InvalidArgument("noise mean and exponent must be finite");
}

/// Radial frequency index sqrt(u^2 + v^2 + w^2) for bin (x, y, z).
inline double radial_index(Dims dims, std::size_t x, std::size_t y, std::size_t z) {
  const double u = frequency_index(x, dims.w);
  const double v = frequency_index(y, dims.h);
  const double w = frequency_index(z, dims.d);
  return std::sqrt(u * u + v * v + w * w);
}

}  // namespace detail

/// White Gaussian field shaped to a power spectrum f^exponent over raw
/// frequency indexes, DC removed, then affinely renormalized to (mean, sd).
inline NoiseVolume generate_noise_volume(const NoiseParams& p) {
  detail::validate_noise_params(p);
  if (p.exponent > 0.0)
    warn("noise exponent " + std::to_string(p.exponent) + " > 0 boosts high frequencies");

  const Dims dims = p.dims;
  Rng rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(dims.size());
  for (auto& v : white) v = normal(rng);

  ComplexBuffer spec = rfft(white, dims);
  const std::size_t hw = dims.w / 2 + 1;
  const double amp_exp = p.exponent / 2.0;
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < hw; ++x) {
        const double f = detail::radial_index(dims, x, y, z);
        spec[(z * dims.h + y) * hw + x] *= f > 0.0 ? std::pow(f, amp_exp) : 0.0;
      }
  RealBuffer field = irfft(std::move(spec), dims);

  const double n = static_cast<double>(dims.size());
  const double mu = std::accumulate(field.begin(), field.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : field) ss += (v - mu) * (v - mu);
  const double sample_sd = std::sqrt(ss / n);
  if (!(sample_sd > 0.0)) throw DegenerateError("filtered noise field has zero variance");

  NoiseVolume out;
  out.voxels = Volume(dims);
  const double scale = p.sd / sample_sd;
  for (std::size_t i = 0; i < field.size(); ++i) out.voxels[i] = (field[i] - mu) * scale + p.mean;
  out.mean = p.mean;
  out.sd = p.sd;
  out.exponent = p.exponent;
  out.seed = p.seed;
  return out;
}

/// Expected noise power per DFT bin for fields from generate_noise_volume:
/// lambda_k = c * f_k^exponent, lambda_0 = 0, with c chosen so that the mean
/// of lambda equals sd^2 (the per-voxel variance). This is the eigenvalue
/// spectrum of the periodic (circulant) covariance of the field.
inline Volume noise_power_spectrum(Dims dims, double sd, double exponent) {
  detail::validate_noise_params({dims, 0.0, sd, exponent, 0});
  Volume nps(dims);
  double total = 0.0;
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        const double f = detail::radial_index(dims, x, y, z);
        const double v = f > 0.0 ? std::pow(f, exponent) : 0.0;
        nps(x, y, z) = v;
        total += v;
      }
  const double c = sd * sd * static_cast<double>(dims.size()) / total;
  for (auto& v : nps.values()) v *= c;
  return nps;
}

/// Power spectrum of a single z-slice of a stationary 3D field: the mean of
/// the 3D spectrum over the slice-axis frequency.
inline Volume slice_power_spectrum(const Volume& nps3) {
  const Dims d = nps3.dims();
  Volume out({d.w, d.h, 1});
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t i = 0; i < d.plane(); ++i) out[i] += nps3[z * d.plane() + i];
  for (auto& v : out.values()) v /= static_cast<double>(d.d);
  return out;
}

// ---------------------------------------------------------------------------
// Signals

enum class SignalKind { Mcalc, Mass };

inline std::string to_string(SignalKind k) { return k == SignalKind::Mcalc ? "mcalc" : "mass"; }

inline SignalKind parse_signal_kind(const std::string& s) {
  if (s == "mcalc" || s == "MCALC") return SignalKind::Mcalc;
  if (s == "mass" || s == "MASS") return SignalKind::Mass;
  throw InvalidArgument("unknown signal kind '" + s + "' (expected mcalc|mass)");
}

struct SignalOptions {
  double px_per_deg = 36.0;
  /// Through-plane voxel size in units of in-plane pixels (1 = isotropic).
  double slice_thickness_px = 1.0;
  double amplitude = 83.0;
  /// MCALC sphere diameter in degrees of visual angle.
  double mcalc_diameter_deg = 0.13;
  /// MASS extent: three standard deviations, in degrees of visual angle.
  double mass_three_sigma_deg = 0.66;
};

struct SignalProfile {
  SignalKind kind = SignalKind::Mcalc;
  /// Additive increments; the center voxel sits at (w/2, h/2, d/2).
  Volume voxels;
  double peak_amplitude = 0.0;
  double angular_size = 0.0;
  double px_per_deg = 0.0;
  double slice_thickness_px = 1.0;

  /// MASS standard deviation in pixels (zero for MCALC).
  double sigma_px() const {
    return kind == SignalKind::Mass ? angular_size / 3.0 * px_per_deg : 0.0;
  }
  /// In-plane cross-section through the center voxel.
  Volume central_slice() const { return voxels.slice(voxels.depth() / 2); }
};

/// Rasterizes an MCALC sphere or MASS Gaussian, cropped to the smallest box
/// holding every value above 1e-3 of the peak.
inline SignalProfile make_signal(SignalKind kind, const SignalOptions& opt = {}) {
  if (!(opt.px_per_deg > 0.0)) throw InvalidArgument("px_per_deg must be positive");
  if (!(opt.slice_thickness_px > 0.0)) throw InvalidArgument("slice thickness must be positive");
  if (!(opt.amplitude > 0.0)) throw InvalidArgument("signal amplitude must be positive");

  SignalProfile sig;
  sig.kind = kind;
  sig.peak_amplitude = opt.amplitude;
  sig.px_per_deg = opt.px_per_deg;
  sig.slice_thickness_px = opt.slice_thickness_px;
  const double t = opt.slice_thickness_px;

  if (kind == SignalKind::Mcalc) {
    const double diameter_px = opt.mcalc_diameter_deg * opt.px_per_deg;
    if (diameter_px < 1.0)
      throw InvalidArgument("MCALC diameter " + std::to_string(diameter_px) +
                            " px is below one pixel; increase px_per_deg");
    sig.angular_size = opt.mcalc_diameter_deg;
    const double r = diameter_px / 2.0;
    const auto n = static_cast<std::size_t>(std::floor(r));
    const auto nz = static_cast<std::size_t>(std::floor(r / t));
    sig.voxels = Volume({2 * n + 1, 2 * n + 1, 2 * nz + 1});
    for (std::size_t z = 0; z <= 2 * nz; ++z)
      for (std::size_t y = 0; y <= 2 * n; ++y)
        for (std::size_t x = 0; x <= 2 * n; ++x) {
          const double dx = double(x) - double(n), dy = double(y) - double(n);
          const double dz = (double(z) - double(nz)) * t;
          if (dx * dx + dy * dy + dz * dz <= r * r) sig.voxels(x, y, z) = opt.amplitude;
        }
    return sig;
  }

  sig.angular_size = opt.mass_three_sigma_deg;
  const double sigma = opt.mass_three_sigma_deg / 3.0 * opt.px_per_deg;
  if (!(sigma > 0.0)) throw InvalidArgument("MASS extent must be positive");
  const double reach = sigma * std::sqrt(2.0 * std::log(1000.0));
  // Largest integer offset k with k*step < reach (strictly above 1e-3 of peak).
  auto half_extent = [reach](double step) {
    return static_cast<std::size_t>(std::max(0.0, std::ceil(reach / step) - 1.0));
  };
  const std::size_t n = half_extent(1.0);
  const std::size_t nz = half_extent(t);
  sig.voxels = Volume({2 * n + 1, 2 * n + 1, 2 * nz + 1});
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t z = 0; z <= 2 * nz; ++z)
    for (std::size_t y = 0; y <= 2 * n; ++y)
      for (std::size_t x = 0; x <= 2 * n; ++x) {
        const double dx = double(x) - double(n), dy = double(y) - double(n);
        const double dz = (double(z) - double(nz)) * t;
        sig.voxels(x, y, z) = opt.amplitude * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2s2);
      }
  return sig;
}

// ---------------------------------------------------------------------------
// Trials

enum class Modality { TwoD, ThreeD };

inline std::string to_string(Modality m) { return m == Modality::TwoD ? "2d" : "3d"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "2d" || s == "2D") return Modality::TwoD;
  if (s == "3d" || s == "3D") return Modality::ThreeD;
  throw InvalidArgument("unknown modality '" + s + "' (expected 2d|3d)");
}

struct Location {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t z = 0;
  friend bool operator==(const Location&, const Location&) = default;
};

struct TrialStimulus {
  Volume data;
  bool signal_present = false;
  std::optional<Location> signal_location;
  Modality modality = Modality::TwoD;
  std::string trial_id;
};

inline TrialStimulus absent_trial(Volume data, std::string trial_id = {}) {
  TrialStimulus t;
  t.modality = data.depth() == 1 ? Modality::TwoD : Modality::ThreeD;
  t.data = std::move(data);
  t.trial_id = std::move(trial_id);
  return t;
}

/// True when a box of `box` dims centered (at box/2) on `at` lies inside `dims`.
inline bool box_fits(Dims dims, Dims box, Location at) {
  auto fits = [](std::size_t c, std::size_t extent, std::size_t limit) {
    return c >= extent / 2 && c - extent / 2 + extent <= limit;
  };
  return fits(at.x, box.w, dims.w) && fits(at.y, box.h, dims.h) && fits(at.z, box.d, dims.d);
}

/// Voxelwise addition of `signal` centered at `at`. The input is not modified.
inline TrialStimulus insert_signal(const Volume& volume, const Volume& signal, Location at) {
  if (!box_fits(volume.dims(), signal.dims(), at))
    throw InvalidArgument("signal box " + signal.dims().str() + " does not fit in volume " +
                          volume.dims().str() + " at (" + std::to_string(at.x) + "," +
                          std::to_string(at.y) + "," + std::to_string(at.z) + ")");
  TrialStimulus t;
  t.data = volume;
  const auto& s = signal.dims();
  const std::size_t x0 = at.x - s.w / 2, y0 = at.y - s.h / 2, z0 = at.z - s.d / 2;
  for (std::size_t z = 0; z < s.d; ++z)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) t.data(x0 + x, y0 + y, z0 + z) += signal(x, y, z);
  t.signal_present = true;
  t.signal_location = at;
  t.modality = volume.depth() == 1 ? Modality::TwoD : Modality::ThreeD;
  return t;
}

inline TrialStimulus insert_signal(const Volume& volume, const SignalProfile& signal, Location at) {
  return insert_signal(volume, signal.voxels, at);
}

/// 2D trial from a 3D one: the slice through the signal center, or a
/// uniformly drawn slice (seeded) when the signal is absent.
inline TrialStimulus extract_2d(const TrialStimulus& trial, std::uint64_t seed) {
  if (trial.modality != Modality::ThreeD)
    throw InvalidArgument("extract_2d expects a 3D trial");
  std::size_t z = 0;
  if (trial.signal_present) {
    if (!trial.signal_location) throw DataError("signal-present trial without a location");
    z = trial.signal_location->z;
  } else {
    Rng rng(seed);
    z = std::uniform_int_distribution<std::size_t>(0, trial.data.depth() - 1)(rng);
  }
  TrialStimulus out;
  out.data = trial.data.slice(z);
  out.signal_present = trial.signal_present;
  if (trial.signal_location) out.signal_location = Location{trial.signal_location->x, trial.signal_location->y, 0};
  out.modality = Modality::TwoD;
  out.trial_id = trial.trial_id;
  return out;
}

// ---------------------------------------------------------------------------
// Background model shared by template estimation, d' and search runs

/// Statistical description of the power-law backgrounds trials are drawn from.
struct BackgroundModel {
  Dims dims{256, 256, 20};
  double mean = 128.0;
  double sd = 25.0;
  double exponent = -2.8;

  NoiseVolume sample(std::uint64_t seed) const {
    return generate_noise_volume({dims, mean, sd, exponent, seed});
  }
  /// Power spectrum of full volumes.
  Volume nps() const { return noise_power_spectrum(dims, sd, exponent); }
  /// Power spectrum seen by a template of the given modality: one slice for
  /// 2D trials (which are slices of volumes), the full volume for 3D.
  Volume nps_for(Modality m) const {
    Volume full = nps();
    return m == Modality::TwoD && dims.d > 1 ? slice_power_spectrum(full) : full;
  }
};

/// Deterministic stream of background patches of a fixed shape, cut on a
/// non-overlapping lattice from successive seeded noise volumes (2D patches
/// are cut from every slice).
class PatchSampler {
 public:
  PatchSampler(BackgroundModel model, Dims patch, std::uint64_t root_seed)
      : model_(model), patch_(patch), root_(root_seed) {
    if (patch.w > model.dims.w || patch.h > model.dims.h || patch.d > model.dims.d)
      throw InvalidArgument("patch " + patch.str() + " does not fit in background " + model.dims.str());
    auto offsets = [](std::size_t extent, std::size_t size) {
      const std::size_t n = extent / size;
      std::vector<std::size_t> o;
      for (std::size_t i = 0; i < n; ++i)
        o.push_back(n == 1 ? (extent - size) / 2 : i * (extent - size) / (n - 1));
      return o;
    };
    xs_ = offsets(model.dims.w, patch.w);
    ys_ = offsets(model.dims.h, patch.h);
    zs_ = offsets(model.dims.d, patch.d);
  }

  std::size_t patches_per_volume() const { return xs_.size() * ys_.size() * zs_.size(); }

  Volume next() {
    if (cursor_ == 0) current_ = model_.sample(child_seed(root_, volume_index_++)).voxels;
    const std::size_t per_z = xs_.size() * ys_.size();
    const std::size_t iz = cursor_ / per_z, rem = cursor_ % per_z;
    Volume p = crop(current_, xs_[rem % xs_.size()], ys_[rem / xs_.size()], zs_[iz], patch_);
    cursor_ = (cursor_ + 1) % patches_per_volume();
    return p;
  }

 private:
  BackgroundModel model_;
  Dims patch_;
  std::uint64_t root_;
  std::vector<std::size_t> xs_, ys_, zs_;
  Volume current_;
  std::size_t cursor_ = 0;
  std::uint64_t volume_index_ = 0;
};

}  // namespace foviq
