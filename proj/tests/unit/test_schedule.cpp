#include <gtest/gtest.h>

#include <cmath>

#include "diffenc/schedule.hpp"

using namespace diffenc;

TEST(Schedule, Endpoints) {
    const LogLinearSchedule s;
    EXPECT_DOUBLE_EQ(s.eval(0.0).lambda, 13.3);
    EXPECT_DOUBLE_EQ(s.eval(1.0).lambda, -5.0);
    EXPECT_NEAR(s.eval(0.5).lambda, 4.15, 1e-12);
    EXPECT_DOUBLE_EQ(s.lambda_prime(), -18.3);
}

TEST(Schedule, ZeroLogSnrSplitsEvenly) {
    const auto p = point_from_lambda(0.0);
    EXPECT_DOUBLE_EQ(p.alpha2, 0.5);
    EXPECT_DOUBLE_EQ(p.sigma2, 0.5);
}

TEST(Schedule, SigmaZeroAtDefaults) {
    const auto p = LogLinearSchedule{}.eval(0.0);
    EXPECT_NEAR(p.sigma2, 1.0 / (1.0 + std::exp(13.3)), 1e-20);
    EXPECT_NEAR(p.sigma2, 1.67e-6, 0.01e-6);
}

TEST(Schedule, VariancePreservingAcrossRange) {
    const LogLinearSchedule s(20.0, -20.0);
    for (int k = 0; k <= 100; ++k) {
        const auto p = s.eval(k / 100.0);
        EXPECT_NEAR(p.alpha2 + p.sigma2, 1.0, 1e-15);
        EXPECT_GT(p.sigma2, 0.0);
        EXPECT_GT(p.alpha2, 0.0);
        EXPECT_NEAR(std::log(p.alpha2 / p.sigma2), p.lambda, 1e-9);
    }
}

TEST(Schedule, LogisticIsStableForLargeArguments) {
    EXPECT_EQ(logistic(800.0), 1.0);
    EXPECT_GT(logistic(-700.0), 0.0);
    EXPECT_TRUE(std::isfinite(logistic(-800.0)));
}

TEST(Schedule, RejectsBadEndpointsAndTimes) {
    EXPECT_THROW(LogLinearSchedule(1.0, 1.0), DomainError);
    EXPECT_THROW(LogLinearSchedule(-5.0, 13.3), DomainError);
    EXPECT_THROW(LogLinearSchedule(NAN, 0.0), DomainError);
    const LogLinearSchedule s;
    EXPECT_THROW(s.eval(-0.01), DomainError);
    EXPECT_THROW(s.eval(1.01), DomainError);
}

TEST(SnrDelta, Endpoints) {
    const LogLinearSchedule s;
    EXPECT_NEAR(s.snr_delta(0.0, 1.0), std::exp(13.3) - std::exp(-5.0), 1e-9 * std::exp(13.3));
}

TEST(SnrDelta, TinyStepFirstOrder) {
    const LogLinearSchedule s;
    const double t = 0.5, h = 1e-9;
    const double expected = -s.lambda_prime() * std::exp(s.lambda(t)) * h;
    EXPECT_NEAR(s.snr_delta(t - h, t) / expected, 1.0, 1e-6);
}

TEST(SnrDelta, MatchesDirectEvaluation) {
    const LogLinearSchedule s;
    const double ref = s.eval(0.4).snr - s.eval(0.6).snr;
    EXPECT_GT(s.snr_delta(0.4, 0.6), 0.0);
    EXPECT_NEAR(s.snr_delta(0.4, 0.6), ref, 1e-12 * ref);
    EXPECT_THROW(s.snr_delta(0.6, 0.4), DomainError);
}
