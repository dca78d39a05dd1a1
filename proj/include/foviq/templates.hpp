#pragma once

// Eccentricity-dependent observer templates: foveated CHO Gabor channel banks
// and foveated NPWE eye filters, per-bin template construction, 3D stacking.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "foviq/array3.hpp"
#include "foviq/fft.hpp"
#include "foviq/stimulus.hpp"

namespace foviq {

/// Channel-size growth with eccentricity E (dva): 1 + 0.7063 E^1.6953.
inline double scaling_factor(double eccentricity) {
  if (!(eccentricity >= 0.0)) throw InvalidArgument("eccentricity must be non-negative");
  constexpr double alpha = 0.7063;
  constexpr double beta = 1.6953;
  return 1.0 + alpha * std::pow(eccentricity, beta);
}

/// Gabor parameterization used for every channel.
struct GaborConvention {
  std::vector<double> foveal_freqs{16.0, 8.0, 4.0, 2.0, 1.0, 0.5};  // cycles/dva
  int orientations = 8;
  double bandwidth_octaves = 1.0;  // full width at half maximum, in frequency
  double min_freq = 0.15;          // channels below this are dropped

  /// Spatial sd (dva) of the circular envelope for center frequency f.
  double envelope_sigma(double f) const {
    const double r = std::pow(2.0, bandwidth_octaves);
    const double fwhm = 2.0 * f * (r - 1.0) / (r + 1.0);
    const double sigma_f = fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    return 1.0 / (2.0 * std::numbers::pi * sigma_f);
  }
};

struct ChannelBank {
  double eccentricity = 0.0;
  double px_per_deg = 0.0;
  Dims window{0, 0, 1};
  std::vector<double> center_freqs;  // one entry per channel
  std::vector<double> orientations;  // radians, one entry per channel
  /// Channel profiles as columns, each flattened over `window`.
  Eigen::MatrixXd U;

  std::size_t size() const { return static_cast<std::size_t>(U.cols()); }
};

/// Even-phase Gabor profile on a window centered at (w/2, h/2).
inline Volume gabor_profile(Dims window, double px_per_deg, double freq, double theta,
                            double sigma_deg) {
  Volume g({window.w, window.h, 1});
  const double c = std::cos(theta), s = std::sin(theta);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t y = 0; y < window.h; ++y)
    for (std::size_t x = 0; x < window.w; ++x) {
      const double dx = (double(x) - double(window.w / 2)) / px_per_deg;
      const double dy = (double(y) - double(window.h / 2)) / px_per_deg;
      const double env = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma_deg * sigma_deg));
      g(x, y) = env * std::cos(two_pi * freq * (dx * c + dy * s));
    }
  return g;
}

/// Foveal channel set with frequencies divided, and envelopes multiplied,
/// by scaling_factor(E). Channels under the cutoff are removed.
inline ChannelBank gabor_channel_bank(double eccentricity, double px_per_deg, Dims window,
                                      const GaborConvention& conv = {}) {
  if (!(px_per_deg > 0.0)) throw InvalidArgument("px_per_deg must be positive");
  if (window.w == 0 || window.h == 0) throw InvalidArgument("channel window must be non-empty");
  const double scale = scaling_factor(eccentricity);
  ChannelBank bank;
  bank.eccentricity = eccentricity;
  bank.px_per_deg = px_per_deg;
  bank.window = {window.w, window.h, 1};

  std::vector<Volume> profiles;
  for (double f0 : conv.foveal_freqs) {
    const double f = f0 / scale;
    if (f < conv.min_freq) continue;
    const double sigma = conv.envelope_sigma(f0) * scale;
    for (int k = 0; k < conv.orientations; ++k) {
      const double theta = std::numbers::pi * k / conv.orientations;
      profiles.push_back(gabor_profile(bank.window, px_per_deg, f, theta, sigma));
      bank.center_freqs.push_back(f);
      bank.orientations.push_back(theta);
    }
  }
  if (profiles.empty())
    throw EmptyBankError("no Gabor channel survives the " + std::to_string(conv.min_freq) +
                         " c/deg cutoff at eccentricity " + std::to_string(eccentricity));
  const auto n = static_cast<Eigen::Index>(bank.window.size());
  bank.U.resize(n, static_cast<Eigen::Index>(profiles.size()));
  for (std::size_t c = 0; c < profiles.size(); ++c)
    bank.U.col(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const Eigen::VectorXd>(profiles[c].storage().data(), n);
  return bank;
}

// ---------------------------------------------------------------------------
// Eye filter

struct EyeFilterParams {
  double alpha = 0.83;
  double beta = 0.35;
  double gamma = 0.4;
  double n = 2.2;
};

struct EyeFilter {
  double eccentricity = 0.0;
  EyeFilterParams params;

  /// Eccentricity factor max(E, 1)^n; the fovea uses the 1 dva filter.
  double effective_factor() const { return std::pow(std::max(eccentricity, 1.0), params.n); }

  double gain(double rho) const {
    if (!(rho >= 0.0)) throw InvalidArgument("eye filter frequency must be non-negative");
    const double x = rho * effective_factor();
    return std::pow(x, params.alpha) * std::exp(-params.beta * std::pow(x, params.gamma));
  }

  /// Frequency (c/dva) of maximal gain.
  double peak_frequency() const {
    const double x = std::pow(params.alpha / (params.beta * params.gamma), 1.0 / params.gamma);
    return x / effective_factor();
  }
};

inline EyeFilter eye_filter(double eccentricity, const EyeFilterParams& params = {}) {
  if (!(eccentricity >= 0.0)) throw InvalidArgument("eccentricity must be non-negative");
  return EyeFilter{eccentricity, params};
}

/// Radial frequency (c/dva) of DFT bin (x, y) on a w x h grid.
inline double radial_frequency(std::size_t x, std::size_t y, Dims grid, double px_per_deg) {
  const double u = frequency_index(x, grid.w) * px_per_deg / double(grid.w);
  const double v = frequency_index(y, grid.h) * px_per_deg / double(grid.h);
  return std::sqrt(u * u + v * v);
}

using GainFunction = std::function<double(double)>;

/// NPWE template: the signal passed twice through the filter,
/// IDFT( gain(rho)^2 * DFT(signal) ).
inline Volume npwe_template(const Volume& signal_slice, const GainFunction& gain, double px_per_deg) {
  if (signal_slice.depth() != 1) throw InvalidArgument("npwe_template expects a 2D slice");
  const Dims g = signal_slice.dims();
  ComplexBuffer spec = fft(signal_slice);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x) {
      const double a = gain(radial_frequency(x, y, g, px_per_deg));
      spec[y * g.w + x] *= a * a;
    }
  ComplexBuffer back = fft(spec, g, FftDirection::Backward);
  Volume out(g);
  const double inv = 1.0 / double(g.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = back[i].real() * inv;
  return out;
}

inline Volume npwe_template(const Volume& signal_slice, const EyeFilter& filter, double px_per_deg) {
  return npwe_template(signal_slice, [&](double rho) { return filter.gain(rho); }, px_per_deg);
}

// ---------------------------------------------------------------------------
// CHO

/// Ridge added to a channel covariance: 1e-6 * trace / dim.
inline double channel_ridge(const Eigen::MatrixXd& cov) {
  return 1e-6 * cov.trace() / static_cast<double>(cov.rows());
}

/// w = U (Kc + eps I)^-1 U^t s, with Kc the channel-space covariance U^t K U.
inline Volume cho_template(const ChannelBank& bank, const Volume& signal_slice,
                           const Eigen::MatrixXd& channel_cov) {
  const auto n = static_cast<Eigen::Index>(signal_slice.size());
  if (signal_slice.depth() != 1 || n != bank.U.rows())
    throw InvalidArgument("cho_template: signal slice does not match the channel window");
  if (channel_cov.rows() != bank.U.cols() || channel_cov.cols() != bank.U.cols())
    throw InvalidArgument("cho_template: channel covariance must be square with one row per channel");

  Eigen::MatrixXd reg = channel_cov;
  reg.diagonal().array() += channel_ridge(channel_cov);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14))
    throw NumericalFailure("cho_template: regularized channel covariance is singular");

  Eigen::Map<const Eigen::VectorXd> s(signal_slice.storage().data(), n);
  const Eigen::VectorXd v = ldlt.solve(bank.U.transpose() * s);
  if (!v.allFinite()) throw NumericalFailure("cho_template: non-finite channel weights");
  const Eigen::VectorXd w = bank.U * v;
  return Volume(signal_slice.dims(), std::vector<double>(w.data(), w.data() + w.size()));
}

/// Sample covariance of channel responses over background-only patches.
inline Eigen::MatrixXd channel_covariance_from_samples(const ChannelBank& bank,
                                                       std::span<const Volume> patches) {
  const auto c = static_cast<std::size_t>(bank.U.cols());
  if (patches.size() < 10 * c)
    throw InvalidArgument("channel covariance needs at least 10x channel count (" +
                          std::to_string(10 * c) + ") background samples, got " +
                          std::to_string(patches.size()));
  const auto n = static_cast<Eigen::Index>(patches.size());
  Eigen::MatrixXd resp(n, bank.U.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = patches[static_cast<std::size_t>(i)];
    if (p.size() != static_cast<std::size_t>(bank.U.rows()))
      throw InvalidArgument("background patch does not match the channel window");
    resp.row(i) = (bank.U.transpose() *
                   Eigen::Map<const Eigen::VectorXd>(p.storage().data(), bank.U.rows()))
                      .transpose();
  }
  const Eigen::RowVectorXd mean = resp.colwise().mean();
  resp.rowwise() -= mean;
  return resp.transpose() * resp / static_cast<double>(n - 1);
}

/// Exact channel covariance U^t K U for stationary periodic noise with
/// power spectrum `nps` (2D, at least as large as the channel window).
inline Eigen::MatrixXd channel_covariance_from_nps(const ChannelBank& bank, const Volume& nps) {
  const Dims grid = nps.dims();
  if (grid.d != 1 || grid.w < bank.window.w || grid.h < bank.window.h)
    throw InvalidArgument("channel_covariance_from_nps: spectrum grid smaller than channel window");
  const auto c = bank.U.cols();
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXcd F(n, c);
  for (Eigen::Index k = 0; k < c; ++k) {
    ComplexBuffer padded(grid.size());
    for (std::size_t y = 0; y < bank.window.h; ++y)
      for (std::size_t x = 0; x < bank.window.w; ++x)
        padded[y * grid.w + x] = bank.U(static_cast<Eigen::Index>(y * bank.window.w + x), k);
    ComplexBuffer f = fft(padded, grid);
    for (Eigen::Index i = 0; i < n; ++i) F(i, k) = f[static_cast<std::size_t>(i)];
  }
  Eigen::Map<const Eigen::VectorXd> lam(nps.storage().data(), n);
  const Eigen::MatrixXcd weighted = lam.asDiagonal() * F;
  return (F.adjoint() * weighted).real() / static_cast<double>(n);
}

/// Stacks equally sized 2D templates into one 3D template (one slice each).
inline Volume stack_3d(std::span<const Volume> slices) {
  if (slices.empty()) throw InvalidArgument("stack_3d: no slices");
  const Dims first = slices.front().dims();
  Volume out({first.w, first.h, slices.size()});
  for (std::size_t z = 0; z < slices.size(); ++z) {
    const Dims d = slices[z].dims();
    if (d.d != 1 || d.w != first.w || d.h != first.h)
      throw InvalidArgument("stack_3d: slice " + std::to_string(z) + " has dims " + d.str() +
                            ", expected " + Dims{first.w, first.h, 1}.str());
    std::copy(slices[z].storage().begin(), slices[z].storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(z * first.plane()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Template sets

enum class ObserverModel { Fcho, Fnpwe };

inline std::string to_string(ObserverModel m) { return m == ObserverModel::Fcho ? "fcho" : "fnpwe"; }

inline ObserverModel parse_observer_model(const std::string& s) {
  if (s == "fcho" || s == "FCHO") return ObserverModel::Fcho;
  if (s == "fnpwe" || s == "FNPWE") return ObserverModel::Fnpwe;
  throw InvalidArgument("unknown observer model '" + s + "' (expected fcho|fnpwe)");
}

/// Internal-noise multiplier K for each foveated model.
inline double internal_noise_k(ObserverModel m) { return m == ObserverModel::Fcho ? 2.78 : 15.13; }

/// Background-only calibration of one bin's decision variable.
struct BinStats {
  double mu_n = 0.0;       // mean response on background
  double sigma_ext = 0.0;  // sd of the template response to external noise
  double dprime = 0.0;     // detectability including internal noise
};

struct EccentricityTemplateSet {
  ObserverModel model = ObserverModel::Fcho;
  SignalKind signal = SignalKind::Mcalc;
  Modality modality = Modality::TwoD;
  std::vector<double> ecc_bins;
  std::vector<Volume> templates;  // one per bin, window.w x window.h x signal depth
  double internal_noise_K = 0.0;
  double px_per_deg = 36.0;
  double slice_thickness_px = 1.0;
  Dims window{64, 64, 1};
  GaborConvention gabor;
  EyeFilterParams eye;
  std::vector<BinStats> bin_stats;  // empty until calibrated

  std::size_t bins() const { return ecc_bins.size(); }
  Dims template_dims() const { return templates.empty() ? Dims{0, 0, 0} : templates.front().dims(); }
};

/// Background description for template construction: either raw patches
/// (sample channel covariance) or a stationary 2D power spectrum (exact).
using BackgroundStats = std::variant<std::vector<Volume>, Volume>;

struct TemplateOptions {
  double px_per_deg = 36.0;
  std::size_t window = 64;  // grown to fit the signal when needed
  GaborConvention gabor;
  EyeFilterParams eye;
};

inline void validate_bins(const std::vector<double>& bins) {
  if (bins.empty()) throw InvalidArgument("eccentricity bins must be non-empty");
  if (bins.front() != 0.0) throw InvalidArgument("first eccentricity bin must be 0");
  for (std::size_t i = 1; i < bins.size(); ++i)
    if (!(bins[i] > bins[i - 1])) throw InvalidArgument("eccentricity bins must be strictly increasing");
}

/// Square window side used for a signal: at least `requested`, even, and
/// large enough to hold the signal box.
inline std::size_t template_window_side(const SignalProfile& signal, std::size_t requested) {
  std::size_t side = std::max({requested, signal.voxels.width(), signal.voxels.height()});
  if (side % 2) ++side;
  return side;
}

/// In-plane signal slices used by a template of the given modality, each
/// embedded in the template window.
inline std::vector<Volume> signal_slices(const SignalProfile& signal, Modality modality, Dims window) {
  std::vector<Volume> out;
  if (modality == Modality::TwoD) {
    out.push_back(embed_centered(signal.central_slice(), window));
  } else {
    for (std::size_t z = 0; z < signal.voxels.depth(); ++z)
      out.push_back(embed_centered(signal.voxels.slice(z), window));
  }
  return out;
}

/// Signal in template coordinates (window x window x template depth).
inline Volume signal_in_window(const SignalProfile& signal, Modality modality, Dims window) {
  return stack_3d(signal_slices(signal, modality, window));
}

/// One template per eccentricity bin, built with cho_template (FCHO) or
/// npwe_template (FNPWE); 3D templates stack per-slice 2D templates.
inline EccentricityTemplateSet build_template_set(ObserverModel model, const SignalProfile& signal,
                                                  Modality modality, const BackgroundStats& background,
                                                  std::vector<double> ecc_bins,
                                                  const TemplateOptions& opt = {}) {
  validate_bins(ecc_bins);
  const std::size_t side = template_window_side(signal, opt.window);
  const Dims window{side, side, 1};

  EccentricityTemplateSet set;
  set.model = model;
  set.signal = signal.kind;
  set.modality = modality;
  set.ecc_bins = std::move(ecc_bins);
  set.internal_noise_K = internal_noise_k(model);
  set.px_per_deg = opt.px_per_deg;
  set.slice_thickness_px = signal.slice_thickness_px;
  set.window = window;
  set.gabor = opt.gabor;
  set.eye = opt.eye;

  const auto slices = signal_slices(signal, modality, window);
  for (double e : set.ecc_bins) {
    std::vector<Volume> per_slice;
    if (model == ObserverModel::Fcho) {
      const ChannelBank bank = gabor_channel_bank(e, opt.px_per_deg, window, opt.gabor);
      const Eigen::MatrixXd kc = std::visit(
          [&](const auto& bg) -> Eigen::MatrixXd {
            using T = std::decay_t<decltype(bg)>;
            if constexpr (std::is_same_v<T, Volume>)
              return channel_covariance_from_nps(bank, bg);
            else
              return channel_covariance_from_samples(bank, bg);
          },
          background);
      for (const auto& s : slices) per_slice.push_back(cho_template(bank, s, kc));
    } else {
      const EyeFilter filter = eye_filter(e, opt.eye);
      for (const auto& s : slices) per_slice.push_back(npwe_template(s, filter, opt.px_per_deg));
    }
    set.templates.push_back(stack_3d(per_slice));
  }
  return set;
}

}  // namespace foviq
