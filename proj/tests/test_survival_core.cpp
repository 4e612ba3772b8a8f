#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace adjsurv;
using testing_support::make_trial;

TEST(NelsonAalen, HandExample) {
  const StepHazard h = nelson_aalen(std::vector<double>{1, 2, 3}, std::vector<bool>{true, false, true}, 3.0);
  ASSERT_EQ(h.jump_times(), (std::vector<double>{1, 3}));
  EXPECT_DOUBLE_EQ(h.increments()[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(h.increments()[1], 1.0);
  EXPECT_DOUBLE_EQ(h(3.0), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(h(2.5), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(h(0.5), 0.0);
}

TEST(NelsonAalen, NoEventsGivesZeroFunction) {
  const StepHazard h = nelson_aalen(std::vector<double>{1, 2}, std::vector<bool>{false, false}, 2.0);
  EXPECT_TRUE(h.no_events());
  EXPECT_EQ(h(10.0), 0.0);
}

TEST(NelsonAalen, TiesPoolIntoOneJump) {
  const StepHazard h =
      nelson_aalen(std::vector<double>{1, 1, 2, 3}, std::vector<bool>{true, true, false, false}, 3.0);
  ASSERT_EQ(h.jump_times().size(), 1u);
  EXPECT_DOUBLE_EQ(h.increments()[0], 0.5);
}

TEST(NelsonAalen, EventsAfterTauIgnored) {
  const StepHazard h = nelson_aalen(std::vector<double>{1, 2, 3}, std::vector<bool>{true, true, true}, 2.0);
  EXPECT_EQ(h.jump_times(), (std::vector<double>{1, 2}));
}

TEST(NelsonAalen, EventExactlyAtTauIncluded) {
  const StepHazard h = nelson_aalen(std::vector<double>{1, 2}, std::vector<bool>{false, true}, 2.0);
  EXPECT_DOUBLE_EQ(h(2.0), 1.0);
}

TEST(RiskCurves, Enumeration) {
  const auto d = make_trial({1, 2}, {0, 1}, {1, 0});
  EXPECT_DOUBLE_EQ(risk_curves(d).at_risk(1.0), 1.0);
  const auto d4 = make_trial({1, 2, 3, 4}, {1, 0, 0, 0}, {1, 1, 0, 0});
  const RiskCurves rc = risk_curves(d4);
  EXPECT_DOUBLE_EQ(rc.events(1.0), 0.25);
  EXPECT_DOUBLE_EQ(rc.at_risk(Arm::Treatment, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(rc.at_risk(Arm::Treatment, 1.0 + 1e-9), 0.25);
  EXPECT_DOUBLE_EQ(rc.at_risk(5.0), 0.0);
}

TEST(CoxScore, SymmetricDataIsZeroAtNull) {
  const auto d = make_trial({1, 2, 3, 1, 2, 3}, {1, 0, 1, 1, 0, 1}, {1, 1, 1, 0, 0, 0});
  EXPECT_NEAR(cox_score(d, 0.0).value, 0.0, 1e-15);
  EXPECT_NEAR(cox_mple(d), 0.0, 1e-9);
}

TEST(CoxScore, FourSubjectOracle) {
  // Events at 1 (arm 1, four at risk, two treated) and 2 (arm 0, three at risk, one treated).
  const auto d = make_trial({1, 4, 2, 3}, {1, 0, 1, 0}, {1, 1, 0, 0});
  const double expected = ((1.0 - 2.0 / 4.0) + (0.0 - 1.0 / 3.0)) / 4.0;
  EXPECT_NEAR(cox_score(d, 0.0).value, expected, 1e-15);
  EXPECT_NEAR(cox_score(d, 0.0).value, testing_support::score_oracle(d, 0.0), 1e-15);
}

TEST(CoxScore, LargeThetaLimit) {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = testing_support::random_trial(g, 15, 0);
    double control_events = 0.0;
    for (const auto& s : d.subjects()) control_events += (s.event && !s.treated());
    // Only events where no treated subject is at risk escape the limit.
    double escaped = 0.0;
    for (const auto& s : d.subjects())
      if (s.event && !s.treated() && testing_support::at_risk(d, s.time, 1) == 0.0) escaped += 1.0;
    const double limit = -(control_events - escaped) / static_cast<double>(d.size());
    EXPECT_NEAR(cox_score(d, 20.0).value, limit, 1e-6);
  }
}

TEST(CoxScore, MatchesOracleAndIsMonotone) {
  std::mt19937_64 g(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto d = testing_support::random_trial(g, 12, 0, rep % 2 == 0);
    double prev = std::numeric_limits<double>::infinity();
    for (double th = -3.0; th <= 3.0; th += 0.25) {
      const ScoreEvaluation s = cox_score(d, th);
      EXPECT_NEAR(s.value, testing_support::score_oracle(d, th), 1e-13);
      EXPECT_NEAR(s.neg_derivative, testing_support::information_oracle(d, th), 1e-13);
      EXPECT_GE(s.neg_derivative, 0.0);
      EXPECT_LE(s.value, prev + 1e-15);
      prev = s.value;
    }
  }
}

TEST(CoxMple, AllEventsInTreatmentArmHasNoRoot) {
  const auto d = make_trial({1, 2, 3, 4}, {1, 1, 0, 0}, {1, 1, 0, 0});
  try {
    cox_mple(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoRootInBracket);
  }
}

TEST(CoxMple, SixSubjectBisectionOracle) {
  const auto d = make_trial({1, 3, 5, 2, 4, 6}, {1, 1, 0, 1, 1, 0}, {1, 1, 1, 0, 0, 0});
  const double oracle = testing_support::bisect([&](double t) { return testing_support::score_oracle(d, t); }, -10, 10);
  EXPECT_NEAR(cox_mple(d), oracle, 1e-8);
}

TEST(CoxMple, GridSearchOnPartialLikelihood) {
  std::mt19937_64 g(5);
  int checked = 0;
  for (int rep = 0; rep < 60; ++rep) {
    const auto d = testing_support::random_trial(g, 4 + static_cast<std::size_t>(rep % 9), 0, rep % 3 == 0);
    double theta;
    try {
      theta = cox_mple(d);
    } catch (const Error&) {
      continue;
    }
    double best = -5.0, best_ll = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 100000; ++k) {
      const double th = -5.0 + 1e-4 * k;
      const double ll = testing_support::log_partial_likelihood(d, th);
      if (ll > best_ll) {
        best_ll = ll;
        best = th;
      }
    }
    if (std::fabs(theta) > 4.99) continue;
    EXPECT_NEAR(theta, best, 1e-4);
    ++checked;
    if (checked == 15) break;
  }
  EXPECT_GE(checked, 10);
}

TEST(CoxMple, TimeScaleInvariance) {
  std::mt19937_64 g(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = testing_support::random_trial(g, 30, 0);
    std::vector<Subject> s(d.subjects().begin(), d.subjects().end());
    for (auto& x : s) x.time *= 7.3;
    const auto scaled = TrialDataset::make(s);
    EXPECT_NEAR(cox_mple(scaled), cox_mple(d), 1e-10);
  }
}

TEST(CoxMple, ArmSwapFlipsSign) {
  std::mt19937_64 g(9);
  for (int rep = 0; rep < 20; ++rep) {
    const auto d = testing_support::random_trial(g, 30, 0);
    std::vector<Subject> s(d.subjects().begin(), d.subjects().end());
    for (auto& x : s) x.arm = x.treated() ? Arm::Control : Arm::Treatment;
    EXPECT_NEAR(cox_mple(TrialDataset::make(s)), -cox_mple(d), 1e-9);
  }
}

TEST(MartingaleResiduals, HandExample) {
  const auto d = make_trial({1, 2, 3}, {1, 0, 1}, {1, 0, 1});
  const auto r = martingale_residuals(d, nelson_aalen(d));
  EXPECT_NEAR(r[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r[1], -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r[2], -1.0 / 3.0, 1e-15);
}

TEST(MartingaleResiduals, CensoredBeforeFirstJumpIsZero) {
  const auto d = make_trial({0.5, 2, 3}, {0, 1, 1}, {1, 0, 1});
  EXPECT_EQ(martingale_residuals(d, nelson_aalen(d))[0], 0.0);
}

TEST(MartingaleResiduals, ZeroHazardGivesEventIndicator) {
  const auto d = make_trial({1, 2, 3}, {1, 0, 1}, {1, 0, 1});
  const auto r = martingale_residuals(d, StepHazard({}, {}));
  EXPECT_EQ(r, (std::vector<double>{1, 0, 1}));
}

TEST(MartingaleResiduals, PooledResidualsSumToZero) {
  std::mt19937_64 g(10);
  for (int rep = 0; rep < 30; ++rep) {
    const auto d = testing_support::random_trial(g, 50, 0, rep % 2 == 0);
    const auto r = martingale_residuals(d, nelson_aalen(d));
    double s = 0.0;
    for (double v : r) s += v;
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
}

TEST(Dataset, Validation) {
  auto expect_code = [](auto fn, ErrorCode code) {
    try {
      fn();
      FAIL() << "no error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
  };
  expect_code([] { make_trial({1, -1}, {1, 0}, {1, 0}); }, ErrorCode::InvalidInput);
  expect_code([] { make_trial({1, 2}, {1, 0}, {1, 1}); }, ErrorCode::InvalidInput);
  expect_code([] { make_trial({1, 2}, {0, 0}, {1, 0}); }, ErrorCode::NoEvents);
  const auto d = make_trial({1, 2, 3, 4}, {1, 0, 1, 0}, {1, 1, 1, 0});
  EXPECT_DOUBLE_EQ(d.tau(), 4.0);
  EXPECT_DOUBLE_EQ(d.pi(), 0.75);
}

TEST(RootFinding, Brent) {
  const double r = find_decreasing_root([](double x) { return 2.0 - x * x * x; });
  EXPECT_NEAR(r, std::cbrt(2.0), 1e-10);
  try {
    find_decreasing_root([](double) { return 1.0; });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoRootInBracket);
  }
}
