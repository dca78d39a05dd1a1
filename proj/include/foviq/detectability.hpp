#pragma once

// Decision variables and the three routes to d': Monte Carlo (empirical),
// template covariance (analytic) and stationary-noise Fourier sums.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "foviq/array3.hpp"
#include "foviq/fft.hpp"
#include "foviq/rng.hpp"
#include "foviq/stimulus.hpp"
#include "foviq/templates.hpp"

namespace foviq {

/// lambda = sum w*g over all voxels.
inline double decision_variable(std::span<const double> w, std::span<const double> g) {
  if (w.size() != g.size())
    throw InvalidArgument("decision_variable: template has " + std::to_string(w.size()) +
                          " voxels, patch has " + std::to_string(g.size()));
  return std::inner_product(w.begin(), w.end(), g.begin(), 0.0);
}

inline double decision_variable(const Volume& w, const Volume& g) {
  if (w.dims() != g.dims())
    throw InvalidArgument("decision_variable: shape mismatch " + w.dims().str() + " vs " + g.dims().str());
  return decision_variable(w.values(), g.values());
}

/// lambda + eps with eps ~ Normal(0, (K sigma_lambda)^2).
inline double add_internal_noise(double lambda, double sigma_lambda, double k, Rng& rng) {
  if (!(sigma_lambda >= 0.0) || !(k >= 0.0))
    throw InvalidArgument("internal noise needs sigma_lambda >= 0 and K >= 0");
  const double sd = k * sigma_lambda;
  if (sd == 0.0) return lambda;
  return lambda + std::normal_distribution<double>(0.0, sd)(rng);
}

/// d' after adding internal noise of sd K*sigma_lambda to a Gaussian
/// decision variable.
inline double with_internal_noise(double dprime, double k) { return dprime / std::sqrt(1.0 + k * k); }

enum class SampleClass { Signal, Noise };

struct DecisionSample {
  double lambda = 0.0;
  SampleClass cls = SampleClass::Noise;
  double eccentricity_bin = 0.0;
};

namespace detail {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

inline Moments moments(std::span<const double> v) {
  Moments m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.var = ss / double(v.size() - 1);
  return m;
}

}  // namespace detail

/// (mean_s - mean_n) / sqrt((var_s + var_n) / 2).
inline double empirical_dprime(std::span<const double> signal, std::span<const double> noise) {
  if (signal.size() < 2 || noise.size() < 2)
    throw InvalidArgument("empirical_dprime needs at least two samples per class");
  for (double x : signal)
    if (!std::isfinite(x)) throw InvalidArgument("empirical_dprime: non-finite decision variable");
  for (double x : noise)
    if (!std::isfinite(x)) throw InvalidArgument("empirical_dprime: non-finite decision variable");
  const auto s = detail::moments(signal), n = detail::moments(noise);
  const double pooled = std::sqrt((s.var + n.var) / 2.0);
  if (!(pooled > 0.0)) throw DegenerateError("empirical_dprime: zero pooled variance");
  return (s.mean - n.mean) / pooled;
}

inline double empirical_dprime(std::span<const DecisionSample> samples) {
  std::vector<double> s, n;
  for (const auto& d : samples) (d.cls == SampleClass::Signal ? s : n).push_back(d.lambda);
  return empirical_dprime(s, n);
}

/// w^t s / sqrt(w^t K w) with an explicit covariance matrix over the
/// flattened template support, divided by sqrt(1+K_int^2).
inline double analytic_dprime(const Volume& w, const Volume& s, const Eigen::MatrixXd& cov,
                              double internal_k = 0.0) {
  const auto n = static_cast<Eigen::Index>(w.size());
  if (w.dims() != s.dims()) throw InvalidArgument("analytic_dprime: template/signal shape mismatch");
  if (cov.rows() != n || cov.cols() != n)
    throw InvalidArgument("analytic_dprime: covariance dimension does not match the template");
  Eigen::Map<const Eigen::VectorXd> wv(w.storage().data(), n), sv(s.storage().data(), n);
  const double var = wv.dot(cov * wv);
  if (!(var > 0.0)) throw DegenerateError("analytic_dprime: zero template variance");
  return with_internal_noise(wv.dot(sv) / std::sqrt(var), internal_k);
}

namespace detail {

/// Copies `a` into a zero grid of `grid` dims, anchored at the origin.
inline std::vector<double> pad_to(const Volume& a, Dims grid) {
  const Dims d = a.dims();
  if (d.w > grid.w || d.h > grid.h || d.d > grid.d)
    throw InvalidArgument("array " + d.str() + " does not fit on spectrum grid " + grid.str());
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t z = 0; z < d.d; ++z)
    for (std::size_t y = 0; y < d.h; ++y)
      for (std::size_t x = 0; x < d.w; ++x) out[(z * grid.h + y) * grid.w + x] = a(x, y, z);
  return out;
}

}  // namespace detail

/// w^t K w for stationary periodic noise: K w is applied in the spatial
/// domain as a circular convolution with the autocovariance.
inline double template_variance(const Volume& w, const Volume& nps) {
  const Dims grid = nps.dims();
  const auto wp = detail::pad_to(w, grid);
  ComplexBuffer spec = rfft(wp, grid);
  const std::size_t hw = grid.w / 2 + 1;
  for (std::size_t z = 0; z < grid.d; ++z)
    for (std::size_t y = 0; y < grid.h; ++y)
      for (std::size_t x = 0; x < hw; ++x) spec[(z * grid.h + y) * hw + x] *= nps(x, y, z);
  RealBuffer kw = irfft(std::move(spec), grid);
  double acc = 0.0;
  for (std::size_t i = 0; i < wp.size(); ++i) acc += wp[i] * kw[i];
  return acc / double(grid.size());
}

/// Spatial-domain d' for stationary noise described by its power spectrum.
inline double analytic_dprime(const Volume& w, const Volume& s, const Volume& nps, double internal_k = 0.0) {
  if (w.dims() != s.dims()) throw InvalidArgument("analytic_dprime: template/signal shape mismatch");
  const double var = template_variance(w, nps);
  if (!(var > 0.0)) throw DegenerateError("analytic_dprime: zero template variance");
  return with_internal_noise(decision_variable(w, s) / std::sqrt(var), internal_k);
}

/// Fourier-domain d' on one DFT grid:
///   Re sum conj(W) S  /  sqrt( N * sum |W|^2 nps ).
/// Spectra are unnormalized DFTs; nps holds per-bin noise power (mean = voxel variance).
inline double fourier_dprime(std::span<const Complex> W, std::span<const Complex> S,
                             std::span<const double> nps) {
  if (W.size() != S.size() || W.size() != nps.size())
    throw InvalidArgument("fourier_dprime: spectra must share one frequency grid");
  Complex num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < W.size(); ++k) {
    if (nps[k] < 0.0) throw InvalidArgument("fourier_dprime: negative noise power");
    num += std::conj(W[k]) * S[k];
    den += std::norm(W[k]) * nps[k];
  }
  if (std::abs(num.imag()) > 1e-8 * std::max(1.0, std::abs(num.real())))
    throw NumericalFailure("fourier_dprime: template/signal cross spectrum is not real");
  if (!(den > 0.0)) throw DegenerateError("fourier_dprime: zero template variance");
  return num.real() / std::sqrt(double(W.size()) * den);
}

inline double fourier_dprime(const Volume& w, const Volume& s, const Volume& nps, double internal_k = 0.0) {
  if (w.dims() != s.dims()) throw InvalidArgument("fourier_dprime: template/signal shape mismatch");
  const Dims grid = nps.dims();
  auto to_complex = [&](const Volume& a) {
    const auto p = detail::pad_to(a, grid);
    ComplexBuffer c(p.begin(), p.end());
    return fft(c, grid);
  };
  const auto W = to_complex(w), S = to_complex(s);
  return with_internal_noise(fourier_dprime(W, S, nps.values()), internal_k);
}

// ---------------------------------------------------------------------------
// Curves

enum class DPrimeMethod { Empirical, Analytic, Fourier };

inline std::string to_string(DPrimeMethod m) {
  switch (m) {
    case DPrimeMethod::Empirical: return "empirical";
    case DPrimeMethod::Analytic: return "analytic";
    default: return "fourier";
  }
}

inline DPrimeMethod parse_dprime_method(const std::string& s) {
  if (s == "empirical") return DPrimeMethod::Empirical;
  if (s == "analytic") return DPrimeMethod::Analytic;
  if (s == "fourier") return DPrimeMethod::Fourier;
  throw InvalidArgument("unknown d' method '" + s + "' (expected empirical|analytic|fourier)");
}

struct DPrimeCurve {
  ObserverModel model = ObserverModel::Fcho;
  SignalKind signal = SignalKind::Mcalc;
  Modality modality = Modality::TwoD;
  DPrimeMethod method = DPrimeMethod::Fourier;
  std::vector<double> ecc_bins;
  std::vector<double> dprime;
  std::size_t n_trials = 0;  // per class and bin, empirical only
  std::uint64_t seed = 0;
};

/// Decision variables for `trials` signal-present and `trials` signal-absent
/// patches per bin. Every bin sees the same background draws; internal noise
/// is drawn per trial from child seeds of `seed`.
struct EmpiricalResponses {
  std::vector<std::vector<double>> signal;  // [bin][trial]
  std::vector<std::vector<double>> noise;
};

inline EmpiricalResponses empirical_responses(const EccentricityTemplateSet& set, const SignalProfile& signal,
                                              const BackgroundModel& background, std::size_t trials,
                                              std::uint64_t seed, bool internal_noise = true) {
  const Dims tdims = set.template_dims();
  const Volume sig = signal_in_window(signal, set.modality, set.window);
  BackgroundModel bg = background;
  if (set.modality == Modality::TwoD) bg.dims.d = std::max<std::size_t>(bg.dims.d, 1);
  PatchSampler sampler(bg, tdims, child_seed(seed, 0));

  const std::size_t nb = set.bins();
  EmpiricalResponses r;
  r.signal.assign(nb, std::vector<double>(trials));
  r.noise.assign(nb, std::vector<double>(trials));
  std::vector<double> signal_resp(nb);
  for (std::size_t b = 0; b < nb; ++b) signal_resp[b] = decision_variable(set.templates[b], sig);

  for (std::size_t t = 0; t < trials; ++t) {
    const Volume present_bg = sampler.next();
    const Volume absent_bg = sampler.next();
    for (std::size_t b = 0; b < nb; ++b) {
      // Linear observer: w.(g + s) = w.g + w.s
      r.signal[b][t] = decision_variable(set.templates[b], present_bg) + signal_resp[b];
      r.noise[b][t] = decision_variable(set.templates[b], absent_bg);
    }
  }
  if (internal_noise && set.internal_noise_K > 0.0) {
    for (std::size_t b = 0; b < nb; ++b) {
      const double sd_s = std::sqrt(detail::moments(r.signal[b]).var);
      const double sd_n = std::sqrt(detail::moments(r.noise[b]).var);
      const double sigma = std::sqrt((sd_s * sd_s + sd_n * sd_n) / 2.0);
      for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = make_rng(child_seed(seed, 1 + b), t);
        r.signal[b][t] = add_internal_noise(r.signal[b][t], sigma, set.internal_noise_K, rng);
        r.noise[b][t] = add_internal_noise(r.noise[b][t], sigma, set.internal_noise_K, rng);
      }
    }
  }
  return r;
}

/// Per-bin d' by the chosen method; internal noise per the set's K.
inline DPrimeCurve dprime_curve(const EccentricityTemplateSet& set, const SignalProfile& signal,
                                const BackgroundModel& background, DPrimeMethod method,
                                std::size_t trials = 0, std::uint64_t seed = 0) {
  if (set.templates.size() != set.bins() || set.templates.empty())
    throw DataError("template set must hold one template per eccentricity bin");
  if (signal.kind != set.signal)
    throw InvalidArgument("signal kind " + to_string(signal.kind) + " does not match template set (" +
                          to_string(set.signal) + ")");
  DPrimeCurve curve;
  curve.model = set.model;
  curve.signal = set.signal;
  curve.modality = set.modality;
  curve.method = method;
  curve.ecc_bins = set.ecc_bins;
  curve.seed = seed;

  if (method == DPrimeMethod::Empirical) {
    if (trials < 100) throw InvalidArgument("empirical d' curves need at least 100 trials");
    curve.n_trials = trials;
    const auto r = empirical_responses(set, signal, background, trials, seed);
    for (std::size_t b = 0; b < set.bins(); ++b) curve.dprime.push_back(empirical_dprime(r.signal[b], r.noise[b]));
    return curve;
  }

  const Volume nps = background.nps_for(set.modality);
  const Volume sig = signal_in_window(signal, set.modality, set.window);
  for (const auto& w : set.templates) {
    curve.dprime.push_back(method == DPrimeMethod::Analytic
                               ? analytic_dprime(w, sig, nps, set.internal_noise_K)
                               : fourier_dprime(w, sig, nps, set.internal_noise_K));
  }
  return curve;
}

}  // namespace foviq
