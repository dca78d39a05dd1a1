#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "foviq/weighting.hpp"

using namespace foviq;

namespace {

DPrimeCurve curve_of(std::vector<double> bins, std::vector<double> d) {
  DPrimeCurve c;
  c.ecc_bins = std::move(bins);
  c.dprime = std::move(d);
  return c;
}

double sum(const WeightVector& w) { return std::accumulate(w.weights.begin(), w.weights.end(), 0.0); }

FixationTrial present(std::string id, double sx, double sy, std::vector<RecordedFixation> f) {
  FixationTrial t;
  t.trial_id = std::move(id);
  t.signal_present = true;
  t.signal_xyz = std::array<double, 3>{sx, sy, 0};
  t.fixations = std::move(f);
  return t;
}

// Area of the disk of radius r intersected with the square [-a, a]^2.
double disk_in_square(double r, double a) {
  if (r <= a) return std::numbers::pi * r * r;
  if (r >= a * std::sqrt(2.0)) return 4 * a * a;
  return std::numbers::pi * r * r - 4 * (r * r * std::acos(a / r) - a * std::sqrt(r * r - a * a));
}

}  // namespace

TEST(Bins, ParseAndIndex) {
  EXPECT_EQ(parse_bins("0:1:3"), (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(parse_bins("0:0.5:1"), (std::vector<double>{0, 0.5, 1}));
  EXPECT_THROW(parse_bins("0-1-3"), InvalidArgument);
  EXPECT_THROW(parse_bins("0:0:3"), InvalidArgument);
  const std::vector<double> b{0, 1, 2};
  EXPECT_EQ(bin_index(0.0, b), 0u);
  EXPECT_EQ(bin_index(0.999, b), 0u);
  EXPECT_EQ(bin_index(1.0, b), 1u);
  EXPECT_EQ(bin_index(40.0, b), 2u);
}

TEST(Bins, DisplayBinsReachDiagonal) {
  const auto b = display_bins(1024, 820, 36);
  const double e = std::hypot(1024.0, 820.0) / 36;
  EXPECT_EQ(b.front(), 0.0);
  EXPECT_LE(b.back(), e);
  EXPECT_GT(b.back() + 1, e);
}

TEST(Average, Uniform) {
  EXPECT_EQ(average_weights({0}).weights, std::vector<double>{1.0});
  const auto w = average_weights(parse_bins("0:1:9"));
  for (double x : w.weights) EXPECT_DOUBLE_EQ(x, 0.1);
  EXPECT_NEAR(aggregate_dprime(curve_of(w.ecc_bins, std::vector<double>(10, 2.5)), w), 2.5, 1e-12);
  EXPECT_THROW(average_weights({}), InvalidArgument);
}

TEST(DPrimeWeights, Examples) {
  const auto c = curve_of({0, 1}, {3, 1});
  const auto w = dprime_weights(c);
  EXPECT_DOUBLE_EQ(w.weights[0], 0.75);
  EXPECT_DOUBLE_EQ(w.weights[1], 0.25);
  EXPECT_DOUBLE_EQ(aggregate_dprime(c, w), 2.5);
  const auto flat = dprime_weights(curve_of({0, 1, 2, 3}, {2, 2, 2, 2}));
  for (double x : flat.weights) EXPECT_DOUBLE_EQ(x, 0.25);
  const auto one = curve_of({0}, {1.7});
  EXPECT_DOUBLE_EQ(aggregate_dprime(one, dprime_weights(one)), 1.7);
  EXPECT_THROW(dprime_weights(curve_of({0, 1}, {0, 0})), DegenerateError);
  EXPECT_THROW(dprime_weights(curve_of({0, 1}, {1, -1})), InvalidArgument);
}

TEST(Aggregate, ExamplesAndErrors) {
  WeightVector delta{{0, 1, 2}, {1, 0, 0}};
  EXPECT_DOUBLE_EQ(aggregate_dprime(curve_of({0, 1, 2}, {4, 2, 1}), delta), 4);
  EXPECT_DOUBLE_EQ(aggregate_dprime(curve_of({0, 1}, {2, 4}), average_weights({0, 1})), 3);
  EXPECT_THROW(aggregate_dprime(curve_of({0, 1}, {2, 4}), delta), InvalidArgument);
  EXPECT_THROW(aggregate_dprime(curve_of({0, 2}, {2, 4}), average_weights({0, 1})), InvalidArgument);
}

TEST(Aggregate, ConvexBoundProperty) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<double> bins, d, w;
    double tw = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bins.push_back(double(i));
      d.push_back(u(rng));
      w.push_back(u(rng));
      tw += w.back();
    }
    for (auto& x : w) x /= tw;
    const double a = aggregate_dprime(curve_of(bins, d), WeightVector{bins, w});
    EXPECT_GE(a, *std::min_element(d.begin(), d.end()) - 1e-12);
    EXPECT_LE(a, *std::max_element(d.begin(), d.end()) + 1e-12);
    const auto dw = dprime_weights(curve_of(bins, d));
    EXPECT_NEAR(sum(dw), 1.0, 1e-9);
  }
}

TEST(EtClosest, AllOnSignalIsBinZero) {
  FixationLog log;
  for (int i = 0; i < 5; ++i) log.trials.push_back(present("t" + std::to_string(i), 100 + i, 200, {{100.0 + i, 200, 0, 250}}));
  const auto w = et_closest_fix_weights(log, {0, 1, 2}, 36);
  EXPECT_EQ(w.weights, (std::vector<double>{1, 0, 0}));
}

TEST(EtClosest, TwoTrialBinning) {
  FixationLog log;
  log.trials.push_back(present("a", 500, 400, {{500 + 0.4 * 36, 400, 0, 200}, {900, 100, 0, 200}}));
  log.trials.push_back(present("b", 500, 400, {{500, 400 - 2.3 * 36, 0, 200}}));
  FixationTrial absent;
  absent.fixations = {{500, 400, 0, 200}};
  log.trials.push_back(absent);  // ignored
  const auto w = et_closest_fix_weights(log, {0, 1, 2, 3}, 36);
  EXPECT_EQ(w.weights, (std::vector<double>{0.5, 0, 0.5, 0}));
}

TEST(EtClosest, FortyPercentFixateSignal) {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(0, 1);
  FixationLog log;
  for (int i = 0; i < 2000; ++i) {
    const double sx = 200 + 600 * u(rng), sy = 200 + 400 * u(rng);
    std::vector<RecordedFixation> f;
    const double ang = 2 * std::numbers::pi * u(rng);
    const double r = (u(rng) < 0.4 ? 0.9 * u(rng) : 1.2 + 6 * u(rng)) * 36;
    f.push_back({sx + r * std::cos(ang), sy + r * std::sin(ang), 0, 250});
    for (int k = 0; k < 5; ++k) {
      const double rr = (1.2 + 6 * u(rng)) * 36 + r, a2 = 2 * std::numbers::pi * u(rng);
      f.push_back({sx + rr * std::cos(a2), sy + rr * std::sin(a2), 0, 250});
    }
    log.trials.push_back(present(std::to_string(i), sx, sy, f));
  }
  const auto w = et_closest_fix_weights(log, parse_bins("0:1:20"), 36);
  EXPECT_NEAR(w.weights[0], 0.40, 0.02);
  EXPECT_NEAR(sum(w), 1.0, 1e-9);
}

TEST(EtClosest, PermutationInvariantAndMonotone) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 800);
  FixationLog log;
  for (int i = 0; i < 30; ++i) {
    std::vector<RecordedFixation> f;
    for (int k = 0; k < 4; ++k) f.push_back({u(rng), u(rng), 0, 200});
    log.trials.push_back(present(std::to_string(i), u(rng), u(rng), f));
  }
  const auto bins = parse_bins("0:1:30");
  const auto base = et_closest_fix_weights(log, bins, 36);
  FixationLog shuffled = log;
  std::shuffle(shuffled.trials.begin(), shuffled.trials.end(), rng);
  for (auto& t : shuffled.trials) std::shuffle(t.fixations.begin(), t.fixations.end(), rng);
  EXPECT_EQ(et_closest_fix_weights(shuffled, bins, 36).weights, base.weights);

  for (auto& t : log.trials) {
    const double before = min_fixation_distance(t.fixations, (*t.signal_xyz)[0], (*t.signal_xyz)[1]);
    t.fixations.push_back({u(rng), u(rng), 0, 200});
    EXPECT_LE(min_fixation_distance(t.fixations, (*t.signal_xyz)[0], (*t.signal_xyz)[1]), before);
  }
}

TEST(EtClosest, Errors) {
  FixationLog none;
  EXPECT_THROW(et_closest_fix_weights(none, {0, 1}, 36), InvalidArgument);
  FixationLog empty_fix;
  empty_fix.trials.push_back(present("x", 1, 1, {}));
  EXPECT_THROW(et_closest_fix_weights(empty_fix, {0, 1}, 36), InvalidArgument);
  std::vector<std::string> warnings;
  warning_sink() = [&](std::string_view m) { warnings.emplace_back(m); };
  empty_fix.trials.push_back(present("y", 1, 1, {{1, 1, 0, 100}}));
  EXPECT_EQ(et_closest_fix_weights(empty_fix, {0, 1}, 36).weights[0], 1.0);
  EXPECT_EQ(warnings.size(), 1u);
  warning_sink() = nullptr;
  FixationLog no_loc;
  no_loc.trials.push_back(present("z", 1, 1, {{1, 1, 0, 100}}));
  no_loc.trials[0].signal_xyz.reset();
  EXPECT_THROW(et_closest_fix_weights(no_loc, {0, 1}, 36), DataError);
}

TEST(FixationCount, PaperTiming) {
  SearchTimingParams p2;
  EXPECT_EQ(estimate_fixation_count(p2, Modality::TwoD).total, 13u);
  EXPECT_EQ(estimate_fixation_count(p2, Modality::TwoD).per_slice, 13u);
  SearchTimingParams p3;
  p3.median_fixation_time_ms = 500;
  p3.median_response_time_s = 22.62;
  p3.n_slices = 100;
  const auto c = estimate_fixation_count(p3, Modality::ThreeD);
  EXPECT_EQ(c.total, 45u);
  EXPECT_EQ(c.per_slice, 1u);
  SearchTimingParams same;
  same.median_response_time_s = 0.25;
  EXPECT_EQ(estimate_fixation_count(same, Modality::TwoD).total, 1u);
  SearchTimingParams bad;
  bad.px_per_deg = 0;
  EXPECT_THROW(estimate_fixation_count(bad, Modality::TwoD), InvalidArgument);
}

TEST(Grid, Examples) {
  const auto one = grid_fixations(1, 1024, 820);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].x, 512);
  EXPECT_DOUBLE_EQ(one[0].y, 410);
  const auto four = grid_fixations(4, 400, 400);
  ASSERT_EQ(four.size(), 4u);
  EXPECT_DOUBLE_EQ(four[0].x, 100);
  EXPECT_DOUBLE_EQ(four[0].y, 100);
  EXPECT_DOUBLE_EQ(four[1].x, 300);
  EXPECT_DOUBLE_EQ(four[2].y, 300);
  EXPECT_DOUBLE_EQ(four[3].x, 300);
  EXPECT_DOUBLE_EQ(four[3].y, 300);
  const auto six = grid_fixations(6, 1024, 820);
  ASSERT_EQ(six.size(), 6u);
  std::set<double> xs, ys;
  for (auto p : six) xs.insert(p.x), ys.insert(p.y);
  EXPECT_EQ(xs.size(), 3u);  // 3 columns
  EXPECT_EQ(ys.size(), 2u);  // 2 rows
  EXPECT_THROW(grid_fixations(0, 10, 10), InvalidArgument);
}

TEST(Grid, NoEmptyRowOrColumnProperty) {
  for (std::size_t n = 1; n <= 60; ++n)
    for (auto [w, h] : {std::pair{1024, 820}, {820, 1024}, {256, 256}, {2000, 300}}) {
      const auto pts = grid_fixations(n, w, h);
      ASSERT_EQ(pts.size(), n);
      std::set<double> xs, ys;
      for (auto p : pts) {
        xs.insert(p.x), ys.insert(p.y);
        EXPECT_GT(p.x, 0);
        EXPECT_LT(p.x, w);
        EXPECT_GT(p.y, 0);
        EXPECT_LT(p.y, h);
      }
      // every row and column of the chosen grid holds a point
      const double dx = double(w) / double(xs.size()), dy = double(h) / double(ys.size());
      for (double x : xs) EXPECT_NEAR(x / dx - 0.5, std::round(x / dx - 0.5), 1e-9);
      for (double y : ys) EXPECT_NEAR(y / dy - 0.5, std::round(y / dy - 0.5), 1e-9);
    }
}

TEST(TimeClosest, SingleFixationMatchesAnnulusAreas) {
  SearchTimingParams p;
  p.median_response_time_s = 0.25;  // one fixation
  p.display_w = p.display_h = 360;
  const auto bins = parse_bins("0:1:8");
  const auto w = time_closest_fix_weights(p, Modality::TwoD, bins);
  EXPECT_NEAR(sum(w), 1.0, 1e-12);
  const double a = 5.0;  // half side in dva
  for (std::size_t k = 0; k + 1 < bins.size(); ++k) {
    const double expect = (disk_in_square(bins[k + 1], a) - disk_in_square(bins[k], a)) / (4 * a * a);
    if (expect > 0.01)
      EXPECT_NEAR(w.weights[k] / expect, 1.0, 0.02) << k;
    else
      EXPECT_NEAR(w.weights[k], expect, 0.002) << k;
  }
}

TEST(TimeClosest, TwoDIsMoreFovealThanThreeD) {
  const auto bins = display_bins(1024, 820, 36);
  SearchTimingParams p2;
  SearchTimingParams p3;
  p3.median_fixation_time_ms = 500;
  p3.median_response_time_s = 22.62;
  p3.n_slices = 100;
  const auto w2 = time_closest_fix_weights(p2, Modality::TwoD, bins);
  const auto w3 = time_closest_fix_weights(p3, Modality::ThreeD, bins);
  EXPECT_GT(w2.weights[0], w3.weights[0]);
  EXPECT_NEAR(sum(w2), 1.0, 1e-12);
  EXPECT_NEAR(sum(w3), 1.0, 1e-12);
  EXPECT_EQ(time_closest_fix_weights(p2, Modality::TwoD, bins).weights, w2.weights);
}

TEST(Names, SchemeRoundTrip) {
  for (auto s : {WeightScheme::Average, WeightScheme::DPrimeWeighted, WeightScheme::EtClosest, WeightScheme::TimeClosest})
    EXPECT_EQ(parse_weight_scheme(to_string(s)), s);
  EXPECT_THROW(parse_weight_scheme("median"), InvalidArgument);
}
