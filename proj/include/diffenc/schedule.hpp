#pragma once

#include <algorithm>
#include <cmath>

#include "diffenc/error.hpp"

namespace diffenc {

inline constexpr double kDefaultLambdaMax = 13.3;
inline constexpr double kDefaultLambdaMin = -5.0;

/// Floor used inside logs of sigma^2 or SNR.
inline constexpr double kLogFloor = 1e-38;

/// 1 / (1 + exp(-x)) without overflow for large |x|.
inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }

/// The noise process seen at a single time t. Variance preserving: alpha2 + sigma2 = 1.
struct SchedulePoint {
    double t = 0.0;
    double lambda = 0.0;        // log SNR
    double lambda_prime = 0.0;  // d lambda / dt
    double alpha = 1.0;
    double sigma = 0.0;
    double alpha2 = 1.0;
    double sigma2 = 0.0;
    double snr = 0.0;
};

/// Builds the point for a given log-SNR; `t` and `lambda_prime` are passed through.
inline SchedulePoint point_from_lambda(double lambda, double t = 0.0, double lambda_prime = 0.0) {
    SchedulePoint p;
    p.t = t;
    p.lambda = lambda;
    p.lambda_prime = lambda_prime;
    p.alpha2 = logistic(lambda);
    p.sigma2 = logistic(-lambda);
    p.alpha = std::sqrt(p.alpha2);
    p.sigma = std::sqrt(p.sigma2);
    p.snr = std::exp(lambda);
    return p;
}

/// lambda(t) = lambda_max - (lambda_max - lambda_min) * t on t in [0, 1].
class LogLinearSchedule {
public:
    LogLinearSchedule(double lambda_max = kDefaultLambdaMax, double lambda_min = kDefaultLambdaMin)
        : lambda_max_(lambda_max), lambda_min_(lambda_min) {
        if (!std::isfinite(lambda_max) || !std::isfinite(lambda_min) || !(lambda_max > lambda_min)) {
            throw DomainError("schedule requires finite lambda_max > lambda_min");
        }
    }

    double lambda_max() const noexcept { return lambda_max_; }
    double lambda_min() const noexcept { return lambda_min_; }
    double span() const noexcept { return lambda_max_ - lambda_min_; }

    double lambda(double t) const { return lambda_max_ - span() * t; }
    double lambda_prime() const { return -span(); }

    SchedulePoint eval(double t) const {
        detail::require_domain(t >= 0.0 && t <= 1.0, "schedule time must lie in [0, 1]");
        return point_from_lambda(lambda(t), t, lambda_prime());
    }

    /// SNR(s) - SNR(t) for s < t; strictly positive.
    double snr_delta(double s, double t) const {
        detail::require_domain(s >= 0.0 && t <= 1.0, "snr_delta times must lie in [0, 1]");
        detail::require_domain(s < t, "snr_delta requires s < t");
        // exp(l_s) - exp(l_t) = exp(l_t) * expm1(l_s - l_t), exact for nearby times
        return std::exp(lambda(t)) * std::expm1(lambda(s) - lambda(t));
    }

    bool operator==(const LogLinearSchedule&) const = default;

private:
    double lambda_max_;
    double lambda_min_;
};

}  // namespace diffenc
