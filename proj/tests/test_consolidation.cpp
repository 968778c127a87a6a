#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "htcl/audit.hpp"
#include "htcl/consolidation.hpp"

using namespace htcl;

namespace {

CurvatureEstimate zero_diag(Eigen::Index p) { return CurvatureEstimate::diagonal(ParamVector::Zero(p)); }

QuadraticSource zero_source(Eigen::Index p) {
  return [p](const ParamVector&, std::size_t) { return LocalQuadratic{ParamVector::Zero(p), zero_diag(p)}; };
}

// Convex quadratic loss J(w) = 1/2 (w - c)^T A (w - c): exact g and H at w.
QuadraticSource convex_source(const Matrix& a, const ParamVector& c) {
  return [a, c](const ParamVector& w, std::size_t) {
    return LocalQuadratic{a * (w - c), CurvatureEstimate::dense(a)};
  };
}

Matrix spd(Eigen::Index p, std::mt19937_64& rng) {
  Eigen::VectorXd e(p);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (Eigen::Index i = 0; i < p; ++i) e(i) = u(rng);
  return symmetric_with_spectrum(e, rng);
}

}  // namespace

TEST(Taylor, ZeroCurvatureZeroGradientLandsOnTarget) {
  std::mt19937_64 rng(1);
  const ParamVector prev = random_vector(6, rng);
  const ParamVector target = random_vector(6, rng);
  for (double lambda : {0.5, 1.0, 2.0, 8.0}) {  // dyadic: lambda dd / lambda is exact
    EXPECT_EQ(taylor_consolidate(prev, target, ParamVector::Zero(6), zero_diag(6), lambda), prev + (target - prev));
  }
  for (double lambda : {0.1, 0.3, 7.0, 1e3}) {
    EXPECT_LE((taylor_consolidate(prev, target, ParamVector::Zero(6), zero_diag(6), lambda) - target)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-14);
  }
}

TEST(Taylor, NoGapNoGradientIsNoOp) {
  std::mt19937_64 rng(2);
  const ParamVector w = random_vector(5, rng);
  const auto curv = CurvatureEstimate::dense(spd(5, rng));
  EXPECT_EQ(taylor_consolidate(w, w, ParamVector::Zero(5), curv, 0.7), w);
}

TEST(Taylor, StepSizeAndClipping) {
  std::mt19937_64 rng(3);
  const ParamVector prev = random_vector(4, rng);
  const ParamVector target = prev + 10.0 * random_vector(4, rng);
  const ParamVector g = random_vector(4, rng);
  const auto curv = CurvatureEstimate::diagonal(random_vector(4, rng).cwiseAbs());
  const ParamVector full = taylor_step(prev, target, g, curv, 1.5);
  TaylorStep damped{0.9, std::nullopt};
  EXPECT_LE((taylor_consolidate(prev, target, g, curv, 1.5, damped) - (prev + 0.9 * full)).cwiseAbs().maxCoeff(),
            1e-14);
  TaylorStep clipped{1.0, 1.0};
  const ParamVector out = taylor_consolidate(prev, target, g, curv, 1.5, clipped);
  EXPECT_NEAR((out - prev).norm(), 1.0, 1e-12);
  EXPECT_GT(full.norm(), 1.0);
  EXPECT_THROW(taylor_consolidate(prev, target, g, curv, 1.5, TaylorStep{0.0, std::nullopt}), std::invalid_argument);
  EXPECT_THROW(taylor_step(prev, ParamVector::Zero(3), g, curv, 1.0), std::invalid_argument);
}

TEST(Taylor, ClosedFormMatchesDescentMinimizer) {
  const SuiteResult r = closed_form_optimality_suite(11, 20);
  EXPECT_TRUE(r.passed()) << r;
  EXPECT_LE(r.worst, 1e-6);
}

TEST(Taylor, IndefiniteCurvatureBelowThresholdRejected) {
  Eigen::VectorXd e(3);
  e << -2.0, 1.0, 4.0;
  std::mt19937_64 rng(4);
  const auto curv = CurvatureEstimate::dense(symmetric_with_spectrum(e, rng));
  const ParamVector z = ParamVector::Zero(3);
  EXPECT_THROW(taylor_consolidate(z, ParamVector::Ones(3), z, curv, 1.5), PositiveDefinitenessError);
  EXPECT_NO_THROW(taylor_consolidate(z, ParamVector::Ones(3), z, curv, 2.5));
}

TEST(Taylor, LargerLambdaPullsCloserToTarget) {
  std::mt19937_64 rng(5);
  const Matrix h = spd(10, rng);
  const auto curv = CurvatureEstimate::dense(h);
  const ParamVector prev = random_vector(10, rng);
  const ParamVector target = random_vector(10, rng);
  const ParamVector g = random_vector(10, rng);
  double last = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1e3}) {
    const double dist = (taylor_consolidate(prev, target, g, curv, lambda) - target).norm();
    EXPECT_LE(dist, last + 1e-12) << lambda;
    last = dist;
  }
}

TEST(CatchUp, ZeroIterationsLeaveWeightsUnchanged) {
  std::mt19937_64 rng(6);
  const ParamVector w = random_vector(4, rng);
  EXPECT_EQ(catch_up(w, random_vector(4, rng), zero_source(4), 0, 1.0), w);
  EXPECT_THROW(catch_up(w, w, zero_source(4), -1, 1.0), std::invalid_argument);
}

TEST(CatchUp, ZeroQuadraticReachesTargetAndStays) {
  std::mt19937_64 rng(7);
  const ParamVector w = random_vector(4, rng);
  const ParamVector target = random_vector(4, rng);
  const ParamVector one = catch_up(w, target, zero_source(4), 1, 2.0);
  EXPECT_EQ(one, w + (target - w));
  EXPECT_LE((catch_up(one, target, zero_source(4), 5, 2.0) - target).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CatchUp, SurrogateNonincreasingOnConvexProblem) {
  std::mt19937_64 rng(8);
  const Matrix a = spd(6, rng);
  const ParamVector c = random_vector(6, rng);
  const ParamVector target = random_vector(6, rng);
  const QuadraticSource src = convex_source(a, c);
  const double lambda = 0.8;
  ParamVector w = random_vector(6, rng);
  // Surrogate objective including the loss term, evaluated at the weights
  // before each step: J(w) + lambda/2 ||w - target||^2.
  auto objective = [&](const ParamVector& x) {
    return 0.5 * (x - c).dot(a * (x - c)) + 0.5 * lambda * (x - target).squaredNorm();
  };
  double last = objective(w);
  for (int i = 0; i < 6; ++i) {
    w = catch_up(w, target, src, 1, lambda, TaylorStep{0.5, std::nullopt});
    const double now = objective(w);
    EXPECT_LE(now, last + 1e-12);
    last = now;
  }
}

TEST(MultiLevel, SingleLevelEqualsDirectConsolidation) {
  std::mt19937_64 rng(9);
  const Matrix a = spd(5, rng);
  const ParamVector c = random_vector(5, rng);
  const QuadraticSource src = convex_source(a, c);
  const HierarchyState s = make_hierarchy(random_vector(5, rng), {0.6});
  const ParamVector local = random_vector(5, rng);
  const TaylorStep step{0.9, std::nullopt};
  const auto out = multi_level_consolidate(s, local, src, step);
  const LocalQuadratic q = src(s.levels[0], 0);
  EXPECT_EQ(out.levels[0], taylor_consolidate(s.levels[0], local, q.gradient, q.curvature, 0.6, step));
  EXPECT_EQ(out.group_counter, 1);
}

TEST(MultiLevel, ZeroQuadraticCollapsesEveryLevel) {
  std::mt19937_64 rng(10);
  HierarchyState s = make_hierarchy(random_vector(4, rng), {1.0, 2.0, 4.0});
  s.levels[1] = random_vector(4, rng);
  s.levels[2] = random_vector(4, rng);
  const ParamVector local = random_vector(4, rng);
  std::vector<double> norms;
  const auto out = multi_level_consolidate(s, local, zero_source(4), {}, &norms);
  for (const auto& l : out.levels) EXPECT_LE((l - local).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(norms.size(), 3u);
}

TEST(MultiLevel, UpperLevelsTargetFreshLowerLevel) {
  std::mt19937_64 rng(11);
  const Matrix a = spd(4, rng);
  const QuadraticSource src = convex_source(a, random_vector(4, rng));
  HierarchyState s = make_hierarchy(random_vector(4, rng), {1.0, 1.0});
  s.levels[1] = random_vector(4, rng);
  const ParamVector local = random_vector(4, rng);
  const auto out = multi_level_consolidate(s, local, src);
  const auto q1 = src(s.levels[0], 0);
  const ParamVector l1 = taylor_consolidate(s.levels[0], local, q1.gradient, q1.curvature, 1.0);
  const auto q2 = src(s.levels[1], 1);
  EXPECT_EQ(out.levels[0], l1);
  EXPECT_EQ(out.levels[1], taylor_consolidate(s.levels[1], l1, q2.gradient, q2.curvature, 1.0));
  EXPECT_THROW(multi_level_consolidate(s, ParamVector::Zero(3), src), std::invalid_argument);
}

TEST(Lambda, Schedules) {
  EXPECT_EQ(lambda_schedule(3, 2.0), (std::vector<double>{2.0, 2.0, 2.0}));
  EXPECT_EQ(lambda_schedule(3, 2.0, 0.5), (std::vector<double>{2.0, 1.0, 0.5}));
  EXPECT_THROW(lambda_schedule(0, 1.0), std::invalid_argument);
  EXPECT_THROW(make_hierarchy(ParamVector::Zero(2), {1.0, 0.0}), std::invalid_argument);
}

TEST(TwoStep, RandomInstancesAcrossLambdas) {
  const SuiteResult r = two_step_identity_suite(12, 300);
  EXPECT_TRUE(r.passed()) << r;
  EXPECT_LE(r.worst, 1e-12);
}

TEST(TwoStep, ZeroQuadraticBothSidesHitSecondTarget) {
  std::mt19937_64 rng(13);
  const ParamVector w0 = random_vector(5, rng), t1 = random_vector(5, rng), t2 = random_vector(5, rng);
  const LocalQuadratic zero{ParamVector::Zero(5), zero_diag(5)};
  EXPECT_EQ(two_step_recursive_check(w0, t1, t2, zero, zero, 1.0), 0.0);
  const ParamVector w1 = taylor_consolidate(w0, t1, zero.gradient, zero.curvature, 1.0);
  EXPECT_LE((taylor_consolidate(w1, t2, zero.gradient, zero.curvature, 1.0) - t2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Snapshot, RoundTripIsExact) {
  std::mt19937_64 rng(14);
  HierarchyState s = make_hierarchy(random_vector(7, rng), {0.1, 3.0});
  s.levels[1] = random_vector(7, rng) * 1e-9;
  s.group_counter = 4;
  std::stringstream ss;
  write_hierarchy(ss, s);
  const HierarchyState back = read_hierarchy(ss);
  EXPECT_EQ(back.levels, s.levels);
  EXPECT_EQ(back.lambdas, s.lambdas);
  EXPECT_EQ(back.group_counter, 4);
}

TEST(Snapshot, RejectsDamagedFiles) {
  std::stringstream none("0 1.0 2.0\n");
  EXPECT_THROW(read_hierarchy(none), std::runtime_error);
  std::stringstream short_vec("# htcl-hierarchy levels=1 params=3 group_counter=0\n0 1.0 2.0 3.0\n");
  EXPECT_THROW(read_hierarchy(short_vec), std::runtime_error);
  std::stringstream truncated("# htcl-hierarchy levels=2 params=1 group_counter=0\n0 1.0 2.0\n");
  EXPECT_THROW(read_hierarchy(truncated), std::runtime_error);
}
