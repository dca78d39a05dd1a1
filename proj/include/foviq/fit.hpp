#pragma once

// Gaussian negative log-likelihood of reference (human) d' values given model
// predictions.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foviq/error.hpp"
#include "foviq/stimulus.hpp"

namespace foviq {

struct ReferencePoint {
  SignalKind signal = SignalKind::Mcalc;
  Modality modality = Modality::TwoD;
  double human_dprime = 0.0;
  double stderr_ = 0.0;  // > 0
};

struct Prediction {
  SignalKind signal = SignalKind::Mcalc;
  Modality modality = Modality::TwoD;
  double model_dprime = 0.0;
};

/// -log N(human; model, stderr^2).
inline double neg_log_likelihood(double human, double stderr_, double model) {
  if (!(stderr_ > 0.0) || !std::isfinite(stderr_)) throw InvalidArgument("stderr must be positive");
  const double r = (human - model) / stderr_;
  return 0.5 * std::log(2.0 * std::numbers::pi * stderr_ * stderr_) + 0.5 * r * r;
}

inline double neg_log_likelihood(const ReferencePoint& ref, double model_dprime) {
  return neg_log_likelihood(ref.human_dprime, ref.stderr_, model_dprime);
}

enum class FitMode { Raw, Ratio };

inline std::string to_string(FitMode m) { return m == FitMode::Raw ? "raw" : "ratio"; }

inline FitMode parse_fit_mode(const std::string& s) {
  if (s == "raw") return FitMode::Raw;
  if (s == "ratio") return FitMode::Ratio;
  throw InvalidArgument("unknown fit mode '" + s + "' (expected raw|ratio)");
}

namespace detail {

template <class T>
const T* find_point(std::span<const T> pts, SignalKind s, Modality m) {
  for (const auto& p : pts)
    if (p.signal == s && p.modality == m) return &p;
  return nullptr;
}

}  // namespace detail

struct FitTerm {
  std::string label;  // e.g. "mcalc/2d" or "mcalc:mass/2d"
  double human = 0.0;
  double stderr_ = 0.0;
  double model = 0.0;
  double nll = 0.0;
};

struct FitResult {
  FitMode mode = FitMode::Raw;
  std::vector<FitTerm> terms;
  double total = 0.0;
};

/// Raw mode: one term per reference point with a matching prediction.
/// Ratio mode: per modality, the MCALC/MASS d' ratio; its stderr is
/// propagated to first order from the two reference stderrs.
inline FitResult fit(std::span<const ReferencePoint> refs, std::span<const Prediction> preds,
                     FitMode mode = FitMode::Raw) {
  if (refs.empty()) throw InvalidArgument("no reference points");
  FitResult out;
  out.mode = mode;
  if (mode == FitMode::Raw) {
    for (const auto& r : refs) {
      const Prediction* p = detail::find_point(preds, r.signal, r.modality);
      if (!p) throw DataError("no prediction for " + to_string(r.signal) + "/" + to_string(r.modality));
      const double nll = neg_log_likelihood(r, p->model_dprime);
      out.terms.push_back({to_string(r.signal) + "/" + to_string(r.modality), r.human_dprime, r.stderr_,
                           p->model_dprime, nll});
      out.total += nll;
    }
    return out;
  }
  for (Modality m : {Modality::TwoD, Modality::ThreeD}) {
    const ReferencePoint* a = detail::find_point(refs, SignalKind::Mcalc, m);
    const ReferencePoint* b = detail::find_point(refs, SignalKind::Mass, m);
    if (!a && !b) continue;
    if (!a || !b) throw DataError("ratio fit needs both signals for " + to_string(m));
    const Prediction* pa = detail::find_point(preds, SignalKind::Mcalc, m);
    const Prediction* pb = detail::find_point(preds, SignalKind::Mass, m);
    if (!pa || !pb) throw DataError("ratio fit needs predictions for both signals in " + to_string(m));
    if (b->human_dprime == 0.0 || pb->model_dprime == 0.0) throw NumericalFailure("MASS d' of zero in ratio fit");
    for (const ReferencePoint* r : {a, b})
      if (!(r->stderr_ > 0.0)) throw InvalidArgument("stderr must be positive");
    const double human = a->human_dprime / b->human_dprime;
    const double se = std::abs(human) * std::hypot(a->stderr_ / a->human_dprime, b->stderr_ / b->human_dprime);
    const double model = pa->model_dprime / pb->model_dprime;
    const double nll = neg_log_likelihood(human, se, model);
    out.terms.push_back({"mcalc:mass/" + to_string(m), human, se, model, nll});
    out.total += nll;
  }
  if (out.terms.empty()) throw DataError("ratio fit found no modality with both signals");
  return out;
}

}  // namespace foviq
