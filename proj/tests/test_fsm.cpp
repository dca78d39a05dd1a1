#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "foviq/fsm.hpp"

using namespace foviq;

namespace {

Volume random_volume(Dims d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  Volume v(d);
  for (auto& x : v.values()) x = n(rng);
  return v;
}

// Hand-made set with known templates and calibration.
EccentricityTemplateSet toy_set(Dims tdims, std::size_t bins, double k) {
  EccentricityTemplateSet s;
  s.internal_noise_K = k;
  s.window = {tdims.w, tdims.h, 1};
  for (std::size_t b = 0; b < bins; ++b) {
    s.ecc_bins.push_back(double(b));
    s.templates.push_back(random_volume(tdims, 100 + b));
    s.bin_stats.push_back({0.0, 1.0, 1.0});
  }
  return s;
}

// Inverse of the standard normal cdf by bisection on erfc.
double probit(double p) {
  double lo = -10, hi = 10;
  for (int i = 0; i < 200; ++i) {
    const double mid = (lo + hi) / 2;
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return (lo + hi) / 2;
}

LrMap random_lr_map(std::size_t n, std::uint64_t seed) {
  LrMap m{{n, 1, 1, 1}, std::vector<double>(n), std::vector<std::uint8_t>(n, 1)};
  Rng rng(seed);
  std::normal_distribution<double> d(0, 2);
  for (auto& x : m.log_lr) x = d(rng);
  return m;
}

// Small calibrated desk setup shared by the statistical tests.
struct Desk {
  BackgroundModel bg{{64, 64, 1}, 128, 25, -2.8};
  SignalProfile sig = make_signal(SignalKind::Mcalc);
  EccentricityTemplateSet set;
  Desk() {
    TemplateOptions o;
    o.window = 16;
    set = build_template_set(ObserverModel::Fcho, sig, Modality::TwoD, bg.nps(), display_bins(64, 64, 36), o);
    calibrate_bin_stats(set, sig, bg, 2000, 77);
  }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

}  // namespace

TEST(LocationGrid, StrideLayout) {
  const auto g = make_location_grid({32, 16, 3}, 4);
  EXPECT_EQ(g.nx, 8u);
  EXPECT_EQ(g.ny, 4u);
  EXPECT_EQ(g.size(), 96u);
  EXPECT_EQ(g.at(g.index(2, 3, 1)), (Location{8, 12, 1}));
  std::vector<std::string> w;
  warning_sink() = [&](std::string_view m) { w.emplace_back(m); };
  EXPECT_EQ(make_location_grid({30, 16, 1}, 4).nx, 7u);
  warning_sink() = nullptr;
  EXPECT_EQ(w.size(), 1u);
  EXPECT_THROW(make_location_grid({8, 8, 1}, 0), InvalidArgument);
}

TEST(Response, CircularCorrelationMatchesNaiveLoop) {
  const Dims g{32, 32, 1}, t{8, 8, 1};
  const auto set = toy_set(t, 2, 0.0);
  const Volume stim = random_volume(g, 3);
  const TemplateSpectra spectra(set, g);
  ResponseField field(stim, spectra, 1);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        double acc = 0;
        for (std::size_t ty = 0; ty < t.h; ++ty)
          for (std::size_t tx = 0; tx < t.w; ++tx)
            acc += set.templates[b](tx, ty) * stim((x + tx + 32 - t.w / 2) % 32, (y + ty + 32 - t.h / 2) % 32);
        EXPECT_NEAR(field.response(b, field.grid().index(x, y, 0)), acc, 1e-12);
        EXPECT_EQ(field.covered(field.grid().index(x, y, 0)), box_fits(g, t, {x, y, 0}));
      }
}

TEST(Response, VolumeTemplateAnchoredOnSlice) {
  const Dims g{16, 16, 6}, t{4, 4, 3};
  const auto set = toy_set(t, 1, 0.0);
  const Volume stim = random_volume(g, 4);
  const TemplateSpectra spectra(set, g);
  ResponseField field(stim, spectra, 2);
  for (std::size_t z = 1; z < 5; ++z)
    for (std::size_t y = 2; y < 14; y += 2)
      for (std::size_t x = 2; x < 14; x += 2) {
        double acc = 0;
        for (std::size_t tz = 0; tz < 3; ++tz)
          for (std::size_t ty = 0; ty < 4; ++ty)
            for (std::size_t tx = 0; tx < 4; ++tx)
              acc += set.templates[0](tx, ty, tz) * stim(x + tx - 2, y + ty - 2, z + tz - 1);
        EXPECT_NEAR(field.response(0, field.grid().index(x / 2, y / 2, z)), acc, 1e-12);
      }
}

TEST(Response, FlatImageGivesConstantPerBin) {
  const Dims g{32, 32, 1};
  const auto set = toy_set({8, 8, 1}, 3, 0.0);
  const TemplateSpectra spectra(set, g);
  ResponseField field(Volume(g, 5.0), spectra, 4);
  Rng rng(1);
  const auto r = response_map(field, {16, 16, 0}, set, rng);
  for (std::size_t i = 0; i < r.grid.size(); ++i) {
    if (!r.covered[i]) continue;
    double sum = 0;
    for (double w : set.templates[r.bin[i]].values()) sum += w;
    EXPECT_NEAR(r.lambda[i], 5 * sum, 1e-10);
  }
}

TEST(Response, BinFollowsEccentricity) {
  const Dims g{128, 128, 1};
  auto set = toy_set({8, 8, 1}, 4, 0.0);
  set.px_per_deg = 36;
  const TemplateSpectra spectra(set, g);
  ResponseField field(random_volume(g, 5), spectra, 4);
  Rng rng(1);
  const auto r = response_map(field, {64, 64, 0}, set, rng);
  EXPECT_EQ(r.bin[r.grid.index(16, 16, 0)], 0u);  // location on the fixation
  for (std::size_t i = 0; i < r.grid.size(); ++i)
    if (r.covered[i]) EXPECT_EQ(r.bin[i], bin_index(r.ecc_of(i), set.ecc_bins));
  EXPECT_NEAR(r.ecc_of(r.grid.index(25, 16, 0)), 36.0 / 36.0, 1e-12);
}

TEST(Response, FixationOffSliceCoversNothingAndUncalibratedRejected) {
  const Dims g{16, 16, 2};
  auto set = toy_set({4, 4, 1}, 1, 0.0);
  const TemplateSpectra spectra(set, g);
  ResponseField field(random_volume(g, 2), spectra, 4);
  Rng rng(1);
  const auto r = response_map(field, {8, 8, 1}, set, rng);
  for (std::size_t i = 0; i < r.grid.nx * r.grid.ny; ++i) EXPECT_FALSE(r.covered[i]);
  set.bin_stats.clear();
  EXPECT_THROW(response_map(field, {8, 8, 0}, set, rng), DataError);
  EXPECT_THROW(FsmRunner(set, {}), DataError);
}

TEST(Response, FixationReachesLocationsWhoseSlabHoldsTheSlice) {
  const Dims g{16, 16, 8};
  auto set = toy_set({4, 4, 3}, 1, 0.0);
  const TemplateSpectra spectra(set, g);
  ResponseField field(random_volume(g, 2), spectra, 4);
  Rng rng(1);
  for (std::size_t s = 0; s < 8; ++s) {
    const auto r = response_map(field, {8, 8, s}, set, rng);
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      const Location p = r.grid.at(i);
      const bool in_slab = p.z + 1 >= s && p.z <= s + 1;
      EXPECT_EQ(bool(r.covered[i]), in_slab && field.covered(i)) << s << " " << i;
    }
  }
}

TEST(LikelihoodRatio, Identities) {
  const BinStats st{10.0, 2.0, 1.5};
  EXPECT_NEAR(to_likelihood_ratio(10.0, st, 0.0), std::exp(-1.5 * 1.5 / 2), 1e-15);
  EXPECT_DOUBLE_EQ(to_likelihood_ratio(37.0, {10.0, 2.0, 0.0}, 0.0), 1.0);
  EXPECT_NEAR(to_likelihood_ratio(10.0 + 2.0 * 0.75, st, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(total_sigma(st, 2.78), 2.0 * std::sqrt(1 + 2.78 * 2.78), 1e-15);
  // midpoint with internal noise
  const double s = total_sigma(st, 2.78);
  EXPECT_NEAR(to_likelihood_ratio(10.0 + s * 0.75, st, 2.78), 1.0, 1e-14);
  EXPECT_THROW(log_likelihood_ratio(1, 0, 0, 1), DegenerateError);
}

TEST(LikelihoodRatio, MatchesGaussianDensityRatio) {
  const double mu = 3, sigma = 1.7, d = 0.9;
  auto pdf = [&](double x, double m) { return std::exp(-0.5 * std::pow((x - m) / sigma, 2)); };
  for (double l = -2; l < 8; l += 0.7)
    EXPECT_NEAR(std::exp(log_likelihood_ratio(l, mu, sigma, d)), pdf(l, mu + d * sigma) / pdf(l, mu), 1e-12);
}

TEST(Integrate, SingleIsIdentityAndSumIsProduct) {
  const auto a = random_lr_map(50, 1), b = random_lr_map(50, 2), c = random_lr_map(50, 3);
  EXPECT_EQ(integrate_fixations(std::vector<LrMap>{a}).log_lr, a.log_lr);
  const auto ab = integrate_fixations(std::vector<LrMap>{a, b});
  for (std::size_t i = 0; i < 50; ++i)
    EXPECT_NEAR(std::exp(ab.log_lr[i]), std::exp(a.log_lr[i]) * std::exp(b.log_lr[i]),
                1e-9 * std::exp(ab.log_lr[i]));
  const auto abc = integrate_fixations(std::vector<LrMap>{a, b, c});
  const auto cab = integrate_fixations(std::vector<LrMap>{c, a, b});
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(abc.log_lr[i], cab.log_lr[i], 1e-12);
    EXPECT_NEAR(abc.log_lr[i], a.log_lr[i] + b.log_lr[i] + c.log_lr[i], 1e-9);
  }
  EXPECT_THROW(integrate_fixations(std::vector<LrMap>{a, random_lr_map(49, 1)}), InvalidArgument);
  EXPECT_THROW(integrate_fixations(std::span<const LrMap>{}), InvalidArgument);
}

TEST(Integrate, UncoveredContributesOne) {
  auto a = random_lr_map(10, 1);
  LrMap none{a.grid, std::vector<double>(10, 0.0), std::vector<std::uint8_t>(10, 0)};
  const auto r = integrate_fixations(std::vector<LrMap>{a, none});
  EXPECT_EQ(r.log_lr, a.log_lr);
  EXPECT_EQ(r.covered, a.covered);
}

TEST(Integrate, MonotoneEvidence) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_lr_map(30, s);
    auto extra = random_lr_map(30, s + 1000);
    for (auto& x : extra.log_lr) x = std::abs(x);
    const double before = decide(a, 1).max_lr;
    EXPECT_GE(decide(integrate_fixations(std::vector<LrMap>{a, extra}), 1).max_lr, before);
  }
}

TEST(Decide, ThresholdAndTies) {
  const LrMap ones{{3, 2, 1, 1}, std::vector<double>(6, 0.0), std::vector<std::uint8_t>(6, 1)};
  const auto v = decide(ones, 1.0);
  EXPECT_TRUE(v.decision);
  EXPECT_EQ(v.max_lr, 1.0);
  EXPECT_EQ(v.argmax, (Location{0, 0, 0}));
  auto m = random_lr_map(20, 5);
  EXPECT_TRUE(decide(m, 0.0).decision);
  m.log_lr[7] = m.log_lr[13] = 50;
  EXPECT_EQ(decide(m, 1).argmax.x, 7u);
  EXPECT_FALSE(decide(m, std::exp(51)).decision);
  // only covered locations compete
  m.covered[7] = m.covered[13] = 0;
  EXPECT_LT(decide(m, 1).log_max_lr, 50);
  const LrMap empty{{4, 1, 1, 1}, std::vector<double>(4, -3.0), std::vector<std::uint8_t>(4, 0)};
  EXPECT_EQ(decide(empty, 1).max_lr, 1.0);
  EXPECT_EQ(decide(empty, 1).argmax, (Location{0, 0, 0}));
}

TEST(Scanpath, SynthesizedExamples) {
  SearchTimingParams one;
  one.median_response_time_s = 0.25;
  const auto c = synthesize_scanpath(one, Modality::TwoD);
  ASSERT_EQ(c.fixations.size(), 1u);
  EXPECT_EQ(c.fixations[0], (Fixation{512, 410, 0}));
  EXPECT_EQ(c.source, ScanpathSource::GridSynthetic);

  SearchTimingParams p3;
  p3.median_fixation_time_ms = 500;
  p3.median_response_time_s = 22.62;
  p3.n_slices = 100;
  const auto s3 = synthesize_scanpath(p3, Modality::ThreeD);
  ASSERT_EQ(s3.fixations.size(), 100u);
  for (std::size_t z = 0; z < 100; ++z) EXPECT_EQ(s3.fixations[z].slice, z);

  SearchTimingParams p2;
  EXPECT_EQ(synthesize_scanpath(p2, Modality::TwoD, 1).fixations, synthesize_scanpath(p2, Modality::TwoD, 2).fixations);
  EXPECT_EQ(synthesize_scanpath(p2, Modality::TwoD, 1, 0, 5).fixations,
            synthesize_scanpath(p2, Modality::TwoD, 1, 0, 5).fixations);
  EXPECT_NE(synthesize_scanpath(p2, Modality::TwoD, 1, 0, 5).fixations,
            synthesize_scanpath(p2, Modality::TwoD, 1).fixations);
}

TEST(RocArea, MannWhitney) {
  const std::vector<double> p{1, 2, 3}, a{0, 2};
  EXPECT_NEAR(roc_area(p, a), (1 + 1.5 + 2) / 6.0, 1e-15);
  EXPECT_THROW(roc_area(p, std::vector<double>{}), InvalidArgument);
}

TEST(Runner, RejectsBadScanpaths) {
  const auto set = toy_set({4, 4, 1}, 1, 0.0);
  FsmRunner runner(set, {});
  const auto t = absent_trial(random_volume({16, 16, 1}, 1));
  EXPECT_THROW(runner.run_trial(t, {}, 0), InvalidArgument);
  EXPECT_THROW(runner.run_trial(t, {{{17, 3, 0}}}, 0), InvalidArgument);
  EXPECT_THROW(runner.run_trial(t, {{{3, 3, 1}}}, 0), InvalidArgument);
  const auto v = runner.run_trial(t, {{{3, 3, 0}, {12, 12, 0}}}, 0);
  EXPECT_FALSE(v.truth);
}

TEST(Runner, TraceIsNonDecreasingForPositiveEvidence) {
  auto set = toy_set({4, 4, 1}, 1, 0.0);
  FsmRunner runner(set, {4, 1.0, true});
  const auto t = absent_trial(random_volume({16, 16, 1}, 1));
  const auto v = runner.run_trial(t, {{{8, 8, 0}, {8, 8, 0}, {8, 8, 0}}}, 9);
  EXPECT_EQ(v.per_fixation_trace.size(), 3u);
  EXPECT_EQ(v.per_fixation_trace.back(), v.log_max_lr);
}

TEST(Batch, DeterministicAndThresholdMonotone) {
  const auto& d = desk();
  SyntheticTrials gen(d.bg, d.sig, Modality::TwoD, d.set.template_dims(), 4, 21);
  std::vector<TrialStimulus> stimuli;
  std::vector<Scanpath> paths;
  for (std::size_t i = 0; i < 60; ++i) {
    stimuli.push_back(gen.make(i, i % 2 == 0));
    paths.push_back({{{32, 32, 0}}});
  }
  const auto a = run_batch(stimuli, paths, d.set, {}, 4);
  const auto b = run_batch(stimuli, paths, d.set, {}, 4);
  for (std::size_t i = 0; i < a.verdicts.size(); ++i) EXPECT_EQ(a.verdicts[i].log_max_lr, b.verdicts[i].log_max_lr);
  double hr = 2, far = 2;
  for (double th : {1e-3, 0.1, 1.0, 10.0, 1e3, 1e6}) {
    std::vector<TrialVerdict> v = a.verdicts;
    for (auto& x : v) x.decision = x.max_lr >= th;
    const auto s = summarize(v);
    EXPECT_LE(s.hit_rate, hr);
    EXPECT_LE(s.false_alarm_rate, far);
    hr = s.hit_rate, far = s.false_alarm_rate;
  }
  EXPECT_THROW(run_batch(stimuli, std::span(paths).first(3), d.set, {}, 4), InvalidArgument);
}

TEST(Batch, ZeroAmplitudeHasNoDetectability) {
  const auto& d = desk();
  SignalProfile blank = d.sig;
  for (auto& x : blank.voxels.values()) x = 0;
  SyntheticTrials gen(d.bg, blank, Modality::TwoD, d.set.template_dims(), 4, 5);
  std::vector<TrialStimulus> stimuli;
  std::vector<Scanpath> paths;
  for (std::size_t i = 0; i < 1000; ++i) {
    stimuli.push_back(gen.make(i, i < 500));
    paths.push_back({{{32, 32, 0}}});
  }
  const auto r = run_batch(stimuli, paths, d.set, {}, 6);
  EXPECT_LT(std::abs(r.dprime), 4 * std::sqrt(2.0 / 500));
  EXPECT_NEAR(r.auc, 0.5, 0.06);
}

TEST(Batch, SignalLocationResponseMatchesKnownLocationStatistics) {
  const auto& d = desk();
  const TemplateSpectra spectra(d.set, d.bg.dims);
  const Volume sig = signal_in_window(d.sig, Modality::TwoD, d.set.window);
  const double ws = decision_variable(d.set.templates[0], sig);
  const auto& st = d.set.bin_stats[0];
  std::vector<double> lam;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto t = insert_signal(d.bg.sample(child_seed(99, i)).voxels, d.sig.central_slice(), {32, 32, 0});
    ResponseField field(t.data, spectra, 4);
    Rng rng = make_rng(7, i);
    const auto r = response_map(field, {32, 32, 0}, d.set, rng);
    const std::size_t at = r.grid.index(8, 8, 0);
    ASSERT_EQ(r.bin[at], 0u);
    lam.push_back(r.lambda[at]);
  }
  const auto m = detail::moments(lam);
  EXPECT_NEAR((m.mean - st.mu_n) / ws, 1.0, 0.05);
  EXPECT_NEAR(std::sqrt(m.var) / total_sigma(st, d.set.internal_noise_K), 1.0, 0.05);
}

TEST(Batch, SingleFixationWithoutLocationUncertaintyIsTheFovealObserver) {
  // A stimulus the size of the template leaves one candidate location, so
  // the max rule reduces to the known-location observer at bin 0.
  const BackgroundModel bg{{32, 32, 1}, 128, 25, -2.8};
  SignalOptions so;
  so.amplitude = 5;  // keeps d' near 1 so the ROC has interior points
  const auto sig = make_signal(SignalKind::Mcalc, so);
  TemplateOptions o;
  o.window = 32;
  auto set = build_template_set(ObserverModel::Fcho, sig, Modality::TwoD, bg.nps(), {0, 1}, o);
  calibrate_bin_stats(set, sig, bg, 4000, 12);
  std::vector<TrialStimulus> stimuli;
  std::vector<Scanpath> paths;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const Volume v = bg.sample(child_seed(17, i)).voxels;
    stimuli.push_back(i < 500 ? insert_signal(v, sig.central_slice(), {16, 16, 0}) : absent_trial(v));
    paths.push_back({{{16, 16, 0}}});
  }
  const auto r = run_batch(stimuli, paths, set, {}, 8);
  for (const auto& v : r.verdicts) EXPECT_EQ(v.argmax, (Location{16, 16, 0}));
  EXPECT_NEAR(r.dprime / set.bin_stats[0].dprime, 1.0, 0.15)
      << "batch " << r.dprime << " foveal " << set.bin_stats[0].dprime;

  // ROC oracle: d' from hit and false-alarm rates over a threshold sweep.
  std::vector<double> lp, la;
  for (const auto& v : r.verdicts) (v.truth ? lp : la).push_back(v.log_max_lr);
  std::vector<double> all = lp;
  all.insert(all.end(), la.begin(), la.end());
  std::sort(all.begin(), all.end());
  std::vector<double> roc;
  for (std::size_t q = 1; q < 20; ++q) {
    const double th = all[q * all.size() / 20];
    const double h = double(std::count_if(lp.begin(), lp.end(), [&](double x) { return x >= th; })) / lp.size();
    const double f = double(std::count_if(la.begin(), la.end(), [&](double x) { return x >= th; })) / la.size();
    if (h > 0.02 && h < 0.98 && f > 0.02 && f < 0.98) roc.push_back(probit(h) - probit(f));
  }
  ASSERT_FALSE(roc.empty()) << "d' " << r.dprime;
  std::sort(roc.begin(), roc.end());
  EXPECT_NEAR(roc[roc.size() / 2] / r.dprime, 1.0, 0.10) << roc[roc.size() / 2] << " vs " << r.dprime;
}

TEST(Batch, LocationUncertaintyCostsDetectability) {
  const auto& d = desk();
  SyntheticTrials gen(d.bg, d.sig, Modality::TwoD, d.set.template_dims(), 4, 31);
  std::vector<TrialStimulus> stimuli;
  std::vector<Scanpath> paths;
  for (std::size_t i = 0; i < 1000; ++i) {
    stimuli.push_back(gen.make(i, i < 500));
    const Location at = stimuli.back().signal_location.value_or(Location{32, 32, 0});
    paths.push_back({{{double(at.x), double(at.y), 0}}});
  }
  const auto r = run_batch(stimuli, paths, d.set, {}, 8);
  EXPECT_LT(r.dprime, d.set.bin_stats[0].dprime);
  EXPECT_GT(r.auc, 0.75);
}

TEST(SyntheticTrials, SeededAndInBounds) {
  const auto& d = desk();
  SyntheticTrials gen(d.bg, d.sig, Modality::TwoD, d.set.template_dims(), 4, 3);
  const auto a = gen.make(5, true), b = gen.make(5, true);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.signal_location, b.signal_location);
  EXPECT_TRUE(box_fits(d.bg.dims, d.set.template_dims(), *a.signal_location));
  EXPECT_EQ(a.signal_location->x % 4, 0u);
  EXPECT_FALSE(gen.make(6, false).signal_present);
  EXPECT_THROW(SyntheticTrials(d.bg, d.sig, Modality::ThreeD, d.set.template_dims(), 4, 3), InvalidArgument);
}
