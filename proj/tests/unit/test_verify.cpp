#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "diffenc/verify.hpp"

using namespace diffenc;
using namespace diffenc::verify;

TEST(Reports, WithinAndBelow) {
    EXPECT_TRUE(OracleReport::within("a", 1.05, 1.0, 0.1).pass);
    EXPECT_FALSE(OracleReport::within("a", 1.2, 1.0, 0.1).pass);
    EXPECT_FALSE(OracleReport::within("a", NAN, 1.0, 0.1).pass);
    EXPECT_TRUE(OracleReport::below("b", 1e-5, 1e-4).pass);
    EXPECT_FALSE(OracleReport::below("b", 1e-3, 1e-4).pass);
}

TEST(Reports, PrintAndCsv) {
    const std::vector<OracleReport> rs = {OracleReport::within("x", 1.0, 1.0, 0.5, "a,b"),
                                          OracleReport::below("y", 2.0, 1.0)};
    std::ostringstream os;
    print_reports(os, rs);
    EXPECT_NE(os.str().find("PASS"), std::string::npos);
    EXPECT_NE(os.str().find("FAIL"), std::string::npos);
    EXPECT_NE(os.str().find("<= 1"), std::string::npos);
    const std::string csv = reports_csv_text(rs, "h1");
    EXPECT_EQ(csv.rfind("# config_hash=h1\n", 0), 0u);
    EXPECT_NE(csv.find("a;b"), std::string::npos);
}

TEST(GaussianOracle, PointMassPosterior) {
    const auto o = gaussian_score_oracle({0.5, -0.3}, 0.0);
    const auto p = point_from_lambda(2.0);
    for (double z : {-3.0, 0.0, 4.0}) EXPECT_DOUBLE_EQ(o.posterior_mean(z, 0, p), 0.5);
}

TEST(GaussianOracle, NoiselessLimit) {
    const auto o = gaussian_score_oracle({0.5, -0.3}, 0.2);
    const auto p = point_from_lambda(40.0);
    EXPECT_NEAR(o.posterior_mean(0.7, 1, p), 0.7 / p.alpha, 1e-12);
}

TEST(GaussianOracle, ScoreMatchesEpsPrediction) {
    for (auto kind : {EncoderKind::Identity, EncoderKind::NonTrainable}) {
        const auto o = gaussian_score_oracle({0.5, -0.3}, 0.2, kind);
        for (double lam : {-4.0, 0.0, 6.0}) {
            const auto p = point_from_lambda(lam);
            EXPECT_NEAR(o.score(0.3, 0, p), -o.eps_hat(0.3, 0, p) / p.sigma, 1e-12);
        }
    }
    EXPECT_THROW(gaussian_score_oracle({0.0}, 0.1, EncoderKind::Trainable), ConfigError);
}

TEST(GaussianOracle, PosteriorMeanByMonteCarlo) {
    const auto o = gaussian_score_oracle({0.4}, 0.3);
    const auto p = point_from_lambda(0.5);
    Rng rng(1);
    // E[x | z in a narrow window] against the closed form
    double sum = 0.0;
    std::size_t n = 0;
    for (int k = 0; k < 2000000; ++k) {
        const double x = 0.4 + std::sqrt(0.3) * rng.normal();
        const double z = p.alpha * x + p.sigma * rng.normal();
        if (std::fabs(z - 0.5) < 0.01) {
            sum += x;
            ++n;
        }
    }
    EXPECT_NEAR(sum / double(n), o.posterior_mean(0.5, 0, p), 4.0 * std::sqrt(o.posterior_var(p) / double(n)) + 1e-3);
}

TEST(MonteCarloKl, IdenticalIsZero) {
    GaussianParams q{{0.1, 0.2}, 0.5};
    const auto r = mc_kl_oracle(q, q, 20000, 2);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.measured, 0.0, 1e-12);
}

TEST(MonteCarloKl, WeightTwoScalar) {
    GaussianParams q{{0.0}, 1.0}, p{{0.0}, 0.5};
    const auto r = mc_kl_oracle(q, p, 200000, 3);
    EXPECT_TRUE(r.pass) << r.measured;
    EXPECT_NEAR(r.expected, 0.15343, 1e-5);
}

TEST(MonteCarloKl, RandomEightDimensional) {
    Rng rng(4);
    GaussianParams q, p;
    q.var = 0.7;
    p.var = 1.1;
    for (int i = 0; i < 8; ++i) {
        q.mean.push_back(rng.normal());
        p.mean.push_back(rng.normal());
    }
    EXPECT_TRUE(mc_kl_oracle(q, p, 200000, 5).pass);
}

TEST(Consistency, AlgebraicAndMonteCarlo) {
    EXPECT_TRUE(marginal_consistency(200, 1).pass);
    EXPECT_TRUE(reverse_consistency(200, 2).pass);
    for (const auto& r : consistency_monte_carlo(200000, 3)) EXPECT_TRUE(r.pass) << r.name;
}

TEST(OptimalVariance, Check) {
    for (const auto& r : optimal_variance_check(0.01, 0.02, 4)) EXPECT_TRUE(r.pass) << r.name;
}

TEST(Slope, RecoversPowerLaw) {
    std::vector<double> x, y;
    for (double t : {16.0, 32.0, 64.0, 128.0}) {
        x.push_back(t);
        y.push_back(3.0 / t);
    }
    EXPECT_NEAR(fit_loglog_slope(x, y), -1.0, 1e-12);
}

TEST(Quadrature, Polynomial) {
    EXPECT_NEAR(integrate_unit([](double t) { return 5 * std::pow(t, 4); }, 4), 1.0, 1e-14);
    EXPECT_NEAR(integrate_unit([](double t) { return std::exp(t); }, 8), std::exp(1.0) - 1.0, 1e-14);
}

TEST(RelativeError, Floor) {
    EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
    EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-3, 1e-15);
    EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
}

TEST(LimitConvergence, SlopeAndPenalties) {
    const auto oracle = gaussian_score_oracle({0.5, -0.3}, 0.2, EncoderKind::NonTrainable);
    GaussianOracleDenoiser den(oracle);
    const Encoder enc = Encoder::non_trainable();
    const LossModel lm{LogLinearSchedule{}, den, enc, nullptr, true};
    const std::vector<double> x = {0.8, -0.6}, eps = {0.3, -1.1};
    const auto r = limit_convergence(lm, x, eps, {16, 32, 64, 128, 256});
    for (const auto& rep : r.reports) EXPECT_TRUE(rep.pass) << rep.name << " " << rep.measured;
    EXPECT_NEAR(r.L_inf, r.L_inf_doubled, 1e-8 * std::fabs(r.L_inf));
}

TEST(Gradients, FiniteDifferenceSuite) {
    for (auto kind : {EncoderKind::NonTrainable, EncoderKind::Trainable}) {
        const auto r = fd_gradient_suite(kind, 40, 9);
        EXPECT_TRUE(r.report.pass) << to_string(kind) << " " << r.max_rel_error;
        EXPECT_TRUE(r.unused.empty());
    }
    const auto off = fd_gradient_suite(EncoderKind::Trainable, 40, 10, false);
    EXPECT_TRUE(off.report.pass);
}

TEST(Suite, AllOraclesPass) {
    for (const auto& r : run_suite(0)) EXPECT_TRUE(r.pass) << r.name << " " << r.measured;
}
