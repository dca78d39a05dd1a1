#pragma once

// Thin RAII layer over FFTW3. Plans are created once per (shape, kind) with
// FFTW_ESTIMATE and cached; execution on fftw_malloc-aligned buffers is
// thread-safe, plan creation is serialized behind a mutex.

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <new>
#include <span>
#include <tuple>
#include <vector>

#include "foviq/array3.hpp"

namespace foviq {

using Complex = std::complex<double>;

template <class T>
struct FftwAllocator {
  using value_type = T;
  FftwAllocator() = default;
  template <class U>
  FftwAllocator(const FftwAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    void* p = fftw_malloc(n * sizeof(T));
    if (!p && n) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { fftw_free(p); }

  template <class U>
  bool operator==(const FftwAllocator<U>&) const noexcept { return true; }
};

using ComplexBuffer = std::vector<Complex, FftwAllocator<Complex>>;
using RealBuffer = std::vector<double, FftwAllocator<double>>;

enum class FftDirection { Forward = FFTW_FORWARD, Backward = FFTW_BACKWARD };

/// Number of complex coefficients kept by a real-to-complex transform.
inline std::size_t half_spectrum_size(Dims d) { return d.d * d.h * (d.w / 2 + 1); }

namespace detail {

enum class PlanKind { C2CForward, C2CBackward, R2C, C2R };

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(PlanKind kind, Dims dims) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(static_cast<int>(kind), dims.w, dims.h, dims.d);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;

    const int n0 = static_cast<int>(dims.d), n1 = static_cast<int>(dims.h),
              n2 = static_cast<int>(dims.w);
    fftw_plan plan = nullptr;
    switch (kind) {
      case PlanKind::C2CForward:
      case PlanKind::C2CBackward: {
        ComplexBuffer a(dims.size()), b(dims.size());
        plan = fftw_plan_dft_3d(n0, n1, n2, reinterpret_cast<fftw_complex*>(a.data()),
                                reinterpret_cast<fftw_complex*>(b.data()),
                                kind == PlanKind::C2CForward ? FFTW_FORWARD : FFTW_BACKWARD,
                                FFTW_ESTIMATE);
        break;
      }
      case PlanKind::R2C: {
        RealBuffer a(dims.size());
        ComplexBuffer b(half_spectrum_size(dims));
        plan = fftw_plan_dft_r2c_3d(n0, n1, n2, a.data(), reinterpret_cast<fftw_complex*>(b.data()),
                                    FFTW_ESTIMATE);
        break;
      }
      case PlanKind::C2R: {
        ComplexBuffer a(half_spectrum_size(dims));
        RealBuffer b(dims.size());
        plan = fftw_plan_dft_c2r_3d(n0, n1, n2, reinterpret_cast<fftw_complex*>(a.data()), b.data(),
                                    FFTW_ESTIMATE);
        break;
      }
    }
    if (!plan) throw NumericalFailure("FFTW could not create a plan for " + dims.str());
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::tuple<int, std::size_t, std::size_t, std::size_t>, fftw_plan> plans_;
};

inline void check_dims(Dims dims) {
  if (dims.size() == 0) throw InvalidArgument("fft: zero-sized dims");
}

}  // namespace detail

/// Unnormalized complex DFT over a 3D grid (x fastest).
inline ComplexBuffer fft(std::span<const Complex> in, Dims dims,
                         FftDirection dir = FftDirection::Forward) {
  detail::check_dims(dims);
  if (in.size() != dims.size()) throw InvalidArgument("fft: input size does not match dims");
  ComplexBuffer src(in.begin(), in.end());
  ComplexBuffer out(dims.size());
  auto plan = detail::PlanCache::instance().get(
      dir == FftDirection::Forward ? detail::PlanKind::C2CForward : detail::PlanKind::C2CBackward,
      dims);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(src.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Complex DFT of a real array (full spectrum).
inline ComplexBuffer fft(const Volume& v) {
  ComplexBuffer c(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) c[i] = v[i];
  return fft(c, v.dims());
}

/// Real-to-complex DFT; returns the non-redundant half spectrum
/// laid out as d x h x (w/2+1).
inline ComplexBuffer rfft(std::span<const double> in, Dims dims) {
  detail::check_dims(dims);
  if (in.size() != dims.size()) throw InvalidArgument("rfft: input size does not match dims");
  RealBuffer src(in.begin(), in.end());
  ComplexBuffer out(half_spectrum_size(dims));
  auto plan = detail::PlanCache::instance().get(detail::PlanKind::R2C, dims);
  fftw_execute_dft_r2c(plan, src.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse of rfft, unnormalized (result is scaled by dims.size()).
/// The spectrum is taken by value because FFTW overwrites it.
inline RealBuffer irfft(ComplexBuffer spectrum, Dims dims) {
  detail::check_dims(dims);
  if (spectrum.size() != half_spectrum_size(dims))
    throw InvalidArgument("irfft: spectrum size does not match dims");
  RealBuffer out(dims.size());
  auto plan = detail::PlanCache::instance().get(detail::PlanKind::C2R, dims);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(spectrum.data()), out.data());
  return out;
}

/// Signed DFT frequency index for bin k of an n-point transform.
inline double frequency_index(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

}  // namespace foviq
