#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "handaug/evaluation.hpp"
#include "test_support.hpp"

using namespace handaug;
using testing_support::random_skeleton;

namespace {

// Randomly displaced copies of random skeletons; some frames are exact and
// some have an error landing exactly on an integer epsilon.
struct Frames {
  std::vector<Skeleton> preds, gts;
};

Frames random_frames(std::size_t n, std::uint64_t seed) {
  RandomState rng(seed);
  Frames f;
  for (std::size_t i = 0; i < n; ++i) {
    const Skeleton gt = random_skeleton(seed * 1000 + i);
    Skeleton p = gt;
    const auto kind = rng.below(4);
    if (kind == 1) {
      // one joint off by an exact integer distance (3-4-5 scaled)
      const double k = static_cast<double>(rng.below(15));
      p[rng.below(kNumJoints)] += Vec3(3 * k, 4 * k, 0);
    } else if (kind >= 2) {
      const double s = rng.uniform(0.5, 20.0);
      for (std::size_t j = 0; j < kNumJoints; ++j) p[j] += Vec3(rng.normal(0, s), rng.normal(0, s), rng.normal(0, s));
    }
    f.preds.push_back(p);
    f.gts.push_back(gt);
  }
  return f;
}

double brute_worst(const Skeleton& p, const Skeleton& g) {
  double m = 0;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    const double dx = p[j].x() - g[j].x(), dy = p[j].y() - g[j].y(), dz = p[j].z() - g[j].z();
    m = std::max(m, std::sqrt(dx * dx + dy * dy + dz * dz));
  }
  return m;
}

double brute_mean(const Skeleton& p, const Skeleton& g) {
  double s = 0;
  for (std::size_t j = 0; j < kNumJoints; ++j) {
    const double dx = p[j].x() - g[j].x(), dy = p[j].y() - g[j].y(), dz = p[j].z() - g[j].z();
    s += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return s / 21.0;
}

std::vector<double> brute_curve(const Frames& f, const std::vector<double>& eps, Criterion c) {
  std::vector<double> out;
  for (double e : eps) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < f.preds.size(); ++i) {
      const double err = c == Criterion::worst ? brute_worst(f.preds[i], f.gts[i]) : brute_mean(f.preds[i], f.gts[i]);
      if (err < e) ++count;
    }
    out.push_back(100.0 * static_cast<double>(count) / static_cast<double>(f.preds.size()));
  }
  return out;
}

}  // namespace

TEST(FrameErrors, SimpleCases) {
  const Skeleton gt = random_skeleton(1);
  EXPECT_EQ(worst_error(gt, gt), 0.0);
  EXPECT_EQ(mean_error(gt, gt), 0.0);
  Skeleton p = gt;
  p[7] += Vec3(3, 4, 0);
  EXPECT_NEAR(worst_error(p, gt), 5.0, 1e-12);
  p = gt;
  p[20] += Vec3(0, 0, 21.0);
  EXPECT_NEAR(mean_error(p, gt), 1.0, 1e-12);
}

TEST(FrameErrors, MatchBruteForceAndOrdering) {
  const Frames f = random_frames(200, 2);
  for (std::size_t i = 0; i < f.preds.size(); ++i) {
    EXPECT_NEAR(worst_error(f.preds[i], f.gts[i]), brute_worst(f.preds[i], f.gts[i]), 1e-12);
    EXPECT_NEAR(mean_error(f.preds[i], f.gts[i]), brute_mean(f.preds[i], f.gts[i]), 1e-12);
    EXPECT_GE(worst_error(f.preds[i], f.gts[i]), mean_error(f.preds[i], f.gts[i]));
  }
}

TEST(FrameErrors, InvariantUnderCommonRotation) {
  const Frames f = random_frames(30, 3);
  const Mat3 r = viewpoint_rotation(0.7, -1.1);
  for (std::size_t i = 0; i < f.preds.size(); ++i) {
    const Vec3 c = f.gts[i].centroid();
    const Skeleton p = rotate_about(f.preds[i], r, c), g = rotate_about(f.gts[i], r, c);
    EXPECT_NEAR(worst_error(p, g), worst_error(f.preds[i], f.gts[i]), 1e-9);
    EXPECT_NEAR(mean_error(p, g), mean_error(f.preds[i], f.gts[i]), 1e-9);
  }
}

TEST(ProportionCurve, MatchesBruteForceCountingExactly) {
  std::vector<double> eps = default_epsilons();
  eps.insert(eps.begin() + 6, 5.01);
  for (std::uint64_t seed : {4, 5, 6}) {
    const Frames f = random_frames(200, seed);
    for (Criterion c : {Criterion::worst, Criterion::mean}) {
      const auto curve = proportion_curve(f.preds, f.gts, eps, c);
      const auto oracle = brute_curve(f, eps, c);
      ASSERT_EQ(curve.size(), eps.size());
      for (std::size_t i = 0; i < eps.size(); ++i) {
        EXPECT_EQ(curve[i].epsilon_mm, eps[i]);
        EXPECT_EQ(curve[i].proportion_percent, oracle[i]) << "eps " << eps[i];
      }
    }
  }
}

TEST(ProportionCurve, StrictInequalityAtBoundary) {
  const Skeleton gt = random_skeleton(7);
  const std::vector<Skeleton> perfect = {gt, gt};
  const std::vector<Skeleton> gts = {gt, gt};
  const std::vector<double> eps = {0.0, 0.5, 5.0, 5.01};
  auto c = proportion_curve(perfect, gts, eps, Criterion::worst);
  EXPECT_EQ(c[0].proportion_percent, 0.0);
  EXPECT_EQ(c[1].proportion_percent, 100.0);

  Skeleton p = gt;
  p[0] += Vec3(3, 4, 0);
  ASSERT_EQ(worst_error(p, gt), 5.0);
  const std::vector<Skeleton> one = {p}, one_gt = {gt};
  c = proportion_curve(one, one_gt, eps, Criterion::worst);
  EXPECT_EQ(c[2].proportion_percent, 0.0);
  EXPECT_EQ(c[3].proportion_percent, 100.0);
}

TEST(ProportionCurve, MonotoneBoundedAndPermutationInvariant) {
  Frames f = random_frames(120, 8);
  const auto eps = default_epsilons();
  const auto base = proportion_curve(f.preds, f.gts, eps, Criterion::worst);
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_GE(base[i].proportion_percent, 0.0);
    EXPECT_LE(base[i].proportion_percent, 100.0);
    if (i > 0) EXPECT_GE(base[i].proportion_percent, base[i - 1].proportion_percent);
  }
  std::vector<std::size_t> order(f.preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomState rng(9);
  rng.shuffle(order);
  Frames g;
  for (std::size_t i : order) {
    g.preds.push_back(f.preds[i]);
    g.gts.push_back(f.gts[i]);
  }
  EXPECT_EQ(proportion_curve(g.preds, g.gts, eps, Criterion::worst), base);
}

TEST(ProportionCurve, ContractErrors) {
  const Frames f = random_frames(3, 10);
  const auto eps = default_epsilons();
  EXPECT_THROW(proportion_curve(std::span<const Skeleton>(), std::span<const Skeleton>(), eps, Criterion::worst),
               ContractError);
  EXPECT_THROW(proportion_curve(std::span(f.preds).first(2), f.gts, eps, Criterion::worst), ContractError);
  const std::vector<double> unsorted = {3.0, 1.0};
  EXPECT_THROW(proportion_curve(f.preds, f.gts, unsorted, Criterion::worst), ContractError);
}

TEST(Evaluate, PerFrameErrorsAndCurve) {
  const Frames f = random_frames(20, 11);
  const auto eps = default_epsilons();
  const auto r = evaluate(f.preds, f.gts, eps);
  ASSERT_EQ(r.per_frame_worst_error.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_GE(r.per_frame_worst_error[i], 0.0);
    EXPECT_EQ(r.per_frame_mean_error[i], mean_error(f.preds[i], f.gts[i]));
  }
  EXPECT_EQ(r.curve, proportion_curve(f.preds, f.gts, eps, Criterion::worst));
}

TEST(CurveCsv, FixedSixDecimalsNewlineTerminated) {
  const std::vector<CurvePoint> curve = {{0.0, 0.0}, {1.5, 33.333333333}, {2.0, 100.0}};
  std::ostringstream s;
  write_curve_csv(s, curve);
  EXPECT_EQ(s.str(), "epsilon_mm,proportion_percent\n0.000000,0.000000\n1.500000,33.333333\n2.000000,100.000000\n");

  const std::vector<CurvePoint> mean = {{0.0, 10.0}, {1.5, 50.0}, {2.0, 100.0}};
  std::ostringstream d;
  write_dual_curve_csv(d, curve, mean);
  EXPECT_EQ(d.str(),
            "epsilon_mm,worst_pct,mean_pct\n0.000000,0.000000,10.000000\n1.500000,33.333333,50.000000\n"
            "2.000000,100.000000,100.000000\n");
  EXPECT_THROW(write_dual_curve_csv(d, curve, std::span(mean).first(2)), ContractError);
}
