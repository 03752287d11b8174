#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "gradcheck_cases.hpp"
#include "handaug/refinement.hpp"
#include "test_support.hpp"

using namespace handaug;
using testing_support::max_joint_error;
using testing_support::random_skeleton;

namespace {

struct Fixture {
  RenderConfig rc = testing_support::small_render(8);
  ModelBundle<double> bundle = init_bundle<double>(8, SkeletonFrame::for_render(rc), 3);
  Skeleton y = random_skeleton(21);
  DepthMap x = render(random_skeleton(22), rc);
};

Tensor<double> normalized(const Skeleton& s, const SkeletonFrame& f) {
  Tensor<double> t(Shape{1, 63});
  f.normalize_into(s, t.data());
  return t;
}

// prior(y) = <w, y>, so the energy gradient is exactly -w.
PriorFn<double> linear_prior(const Tensor<double>& w) {
  return [w](BoundModel<double>& m, Var y) { return ad::sum(m.graph(), ad::mul(m.graph(), y, m.graph().constant(w))); };
}

}  // namespace

TEST(Refine, ZeroStepIsIdentity) {
  Fixture f;
  RefineConfig c;
  c.gamma = 0.0;
  const auto r = refine(f.y, f.x, f.bundle, c);
  EXPECT_EQ(r.skeleton, f.y);
  EXPECT_FALSE(r.warning);
  EXPECT_GT(r.grad_norm, 0.0);
  for (std::size_t views : {1, 2, 7}) {
    c.views = views;
    EXPECT_LT(max_joint_error(multiview_refine(f.y, f.x, f.bundle, c).skeleton, f.y), 1e-9) << views;
  }
}

TEST(Refine, LinearPriorMovesAlongItsWeights) {
  Fixture f;
  RandomState rng(4);
  const auto w = testing_support::random_tensor<double>({1, 63}, rng);
  RefineConfig c;
  c.gamma = 0.01;
  c.lambda_ref = 0.0;
  const auto r = refine(f.y, f.x, f.bundle, c, linear_prior(w));
  const auto before = normalized(f.y, f.bundle.frame), after = normalized(r.skeleton, f.bundle.frame);
  double wn = 0;
  for (std::size_t i = 0; i < 63; ++i) {
    EXPECT_NEAR(after[i], before[i] + c.gamma * w[i], 1e-12);
    wn += w[i] * w[i];
  }
  EXPECT_NEAR(r.grad_norm, std::sqrt(wn), 1e-12);
}

TEST(Refine, StepLengthIsGammaTimesGradientNorm) {
  Fixture f;
  for (double gamma : {1e-5, 1e-3, 0.1}) {
    RefineConfig c;
    c.gamma = gamma;
    c.lambda_ref = 0.5;
    const auto r = refine(f.y, f.x, f.bundle, c);
    const auto a = normalized(f.y, f.bundle.frame), b = normalized(r.skeleton, f.bundle.frame);
    double sq = 0;
    for (std::size_t i = 0; i < 63; ++i) sq += (b[i] - a[i]) * (b[i] - a[i]);
    EXPECT_NEAR(std::sqrt(sq), gamma * r.grad_norm, 1e-9 * std::max(1.0, gamma * r.grad_norm));
  }
}

TEST(Refine, SmallStepLowersTheEnergy) {
  Fixture f;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    f.bundle = init_bundle<double>(8, f.bundle.frame, seed);
    f.y = random_skeleton(100 + seed);
    RefineConfig c;
    c.gamma = 1e-4;
    c.lambda_ref = 0.5;
    const auto r = refine(f.y, f.x, f.bundle, c);
    const double e0 = refine_energy_value(normalized(f.y, f.bundle.frame), f.x, f.bundle, c.lambda_ref);
    const double e1 = refine_energy_value(normalized(r.skeleton, f.bundle.frame), f.x, f.bundle, c.lambda_ref);
    EXPECT_LT(e1, e0) << "seed " << seed;
  }
}

TEST(Refine, EnergyGradientMatchesCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto r = testing_support::loss_gradient_check(testing_support::LossTerm::energy, seed);
    EXPECT_GT(r.probes, 30u);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(Refine, NonFiniteEnergyLeavesEstimateAndWarns) {
  Fixture f;
  const PriorFn<double> nan_prior = [](BoundModel<double>& m, Var y) {
    return ad::scale(m.graph(), ad::sum(m.graph(), y), std::numeric_limits<double>::quiet_NaN());
  };
  RefineConfig c;
  c.views = 3;
  const auto r = refine(f.y, f.x, f.bundle, c, nan_prior);
  EXPECT_TRUE(r.warning);
  EXPECT_EQ(r.skeleton, f.y);
  const auto mv = multiview_refine(f.y, f.x, f.bundle, c, nan_prior);
  EXPECT_EQ(mv.failed_views, 3u);
  EXPECT_EQ(mv.skeleton, f.y);
}

TEST(Refine, RejectsBadArguments) {
  Fixture f;
  RefineConfig c;
  c.gamma = -1;
  EXPECT_THROW(refine(f.y, f.x, f.bundle, c), InvalidArgument);
  c = RefineConfig{};
  c.views = 0;
  EXPECT_THROW(multiview_refine(f.y, f.x, f.bundle, c), InvalidArgument);
  EXPECT_THROW(refine(f.y, DepthMap(16), f.bundle, RefineConfig{}), ContractError);
  Skeleton bad = f.y;
  bad[3].z() = std::nan("");
  EXPECT_THROW(refine(bad, f.x, f.bundle, RefineConfig{}), InvalidArgument);
}

TEST(Multiview, SingleViewIsPlainRefinement) {
  Fixture f;
  RefineConfig c;
  c.gamma = 1e-3;
  c.views = 1;
  EXPECT_EQ(multiview_refine(f.y, f.x, f.bundle, c).skeleton, refine(f.y, f.x, f.bundle, c).skeleton);
}

TEST(Multiview, ZeroViewSpreadAveragesIdenticalViews) {
  Fixture f;
  RefineConfig c;
  c.gamma = 1e-3;
  c.lambda_ref = 0.0;
  c.views = 6;
  c.view_sigma = 0.0;
  EXPECT_LT(max_joint_error(multiview_refine(f.y, f.x, f.bundle, c).skeleton, refine(f.y, f.x, f.bundle, c).skeleton),
            1e-9);
}

TEST(Multiview, SeededAndReproducible) {
  Fixture f;
  RefineConfig c;
  c.gamma = 1e-3;
  c.views = 5;
  c.seed = 11;
  const auto a = multiview_refine(f.y, f.x, f.bundle, c), b = multiview_refine(f.y, f.x, f.bundle, c);
  EXPECT_EQ(a.skeleton, b.skeleton);
  EXPECT_EQ(a.failed_views, 0u);
  c.seed = 12;
  EXPECT_NE(multiview_refine(f.y, f.x, f.bundle, c).skeleton, a.skeleton);
}

TEST(Multiview, WorksInSinglePrecision) {
  const RenderConfig rc = testing_support::small_render(8);
  const auto bundle = init_bundle<float>(8, SkeletonFrame::for_render(rc), 4);
  const Skeleton y = random_skeleton(30);
  RefineConfig c;
  c.gamma = 1e-3;
  c.views = 4;
  const auto r = multiview_refine(y, render(y, rc), bundle, c);
  EXPECT_TRUE(r.skeleton.all_finite());
  EXPECT_FALSE(r.warning);
  EXPECT_GT(max_joint_error(r.skeleton, y), 0.0);
}
