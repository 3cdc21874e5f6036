#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "diffenc/error.hpp"
#include "diffenc/schedule.hpp"

// Closed-form Gaussian algebra of the encoder-generalized diffusion process.
//
// With x_t the encoder output at time t:
//   q(z_t | x)            = N(alpha_t x_t, sigma_t^2 I)
//   q(z_t | z_s, x)       = N(alpha_{t|s} z_s + alpha_t (x_t - x_s), sigma_{t|s}^2 I)
//   q(z_s | z_t, x)       = N(mu_Q, sigma_Q^2 I)
//   p_theta(z_s | z_t)    = N(mu_P, sigma_P^2 I)
// All covariances are isotropic, so a Gaussian is a mean vector plus one scalar variance.

namespace diffenc {

using Vec = std::vector<double>;

struct GaussianParams {
    Vec mean;
    double var = 1.0;

    std::size_t dim() const noexcept { return mean.size(); }

    void validate() const {
        if (!(var > 0.0) || !std::isfinite(var)) throw DomainError("Gaussian variance must be positive and finite");
        for (double m : mean)
            if (!std::isfinite(m)) throw DomainError("Gaussian mean must be finite");
    }
};

inline constexpr double kAlphaClamp = 1e-30;

/// alpha_{t|s}, sigma^2_{t|s}, sigma_Q^2 and the two mu_Q coefficients for a step s < t.
struct TransitionCoefficients {
    double alpha_ts = 1.0;
    double sigma2_ts = 0.0;
    double sigma2_Q = 0.0;
    double coef_z = 0.0;  // alpha_{t|s} sigma_s^2 / sigma_t^2
    double coef_x = 0.0;  // alpha_s sigma_{t|s}^2 / sigma_t^2

    static TransitionCoefficients between(const SchedulePoint& s, const SchedulePoint& t) {
        detail::require_domain(s.lambda > t.lambda, "transition requires s < t (lambda_s > lambda_t)");
        TransitionCoefficients c;
        c.alpha_ts = std::max(t.alpha, kAlphaClamp) / std::max(s.alpha, kAlphaClamp);
        // sigma_{t|s}^2 / sigma_t^2 = 1 - SNR(t)/SNR(s) = -expm1(lambda_t - lambda_s)
        const double ratio = -std::expm1(t.lambda - s.lambda);
        c.sigma2_ts = t.sigma2 * ratio;
        c.sigma2_Q = s.sigma2 * ratio;
        c.coef_z = c.alpha_ts * s.sigma2 / t.sigma2;
        c.coef_x = s.alpha * ratio;
        return c;
    }
};

namespace detail {

inline void require_same_dim(std::size_t a, std::size_t b) {
    if (a != b) throw DomainError("vector dimensions do not match");
}

inline void require_finite(std::span<const double> v) {
    for (double e : v)
        if (!std::isfinite(e)) throw DomainError("non-finite input vector");
}

}  // namespace detail

/// q(z_t | x) with x_enc the encoder output at t.
inline GaussianParams marginal(std::span<const double> x_enc, const SchedulePoint& point) {
    detail::require_finite(x_enc);
    GaussianParams g;
    g.mean.resize(x_enc.size());
    for (std::size_t i = 0; i < x_enc.size(); ++i) g.mean[i] = point.alpha * x_enc[i];
    g.var = point.sigma2;
    return g;
}

/// q(z_t | z_s, x), including the mean shift alpha_t (x_t - x_s).
inline GaussianParams forward_transition(std::span<const double> z_s, std::span<const double> x_t,
                                         std::span<const double> x_s, const SchedulePoint& s,
                                         const SchedulePoint& t) {
    detail::require_same_dim(z_s.size(), x_t.size());
    detail::require_same_dim(z_s.size(), x_s.size());
    const auto c = TransitionCoefficients::between(s, t);
    GaussianParams g;
    g.mean.resize(z_s.size());
    for (std::size_t i = 0; i < z_s.size(); ++i) g.mean[i] = c.alpha_ts * z_s[i] + t.alpha * (x_t[i] - x_s[i]);
    g.var = c.sigma2_ts;
    return g;
}

/// q(z_s | z_t, x).
inline GaussianParams reverse_posterior(std::span<const double> z_t, std::span<const double> x_t,
                                        std::span<const double> x_s, const SchedulePoint& s,
                                        const SchedulePoint& t) {
    detail::require_same_dim(z_t.size(), x_t.size());
    detail::require_same_dim(z_t.size(), x_s.size());
    const auto c = TransitionCoefficients::between(s, t);
    GaussianParams g;
    g.mean.resize(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i)
        g.mean[i] = c.coef_z * z_t[i] + c.coef_x * x_t[i] + s.alpha * (x_s[i] - x_t[i]);
    g.var = c.sigma2_Q;
    return g;
}

/// mu_P given the denoiser's x prediction. With `counterterm` the term
/// alpha_s (lambda_s - lambda_t) sigma_t^2 x_hat is added.
inline Vec generative_mean(std::span<const double> z_t, std::span<const double> x_hat, const SchedulePoint& s,
                           const SchedulePoint& t, bool counterterm) {
    detail::require_same_dim(z_t.size(), x_hat.size());
    const auto c = TransitionCoefficients::between(s, t);
    const double extra = counterterm ? s.alpha * (s.lambda - t.lambda) * t.sigma2 : 0.0;
    Vec mu(z_t.size());
    for (std::size_t i = 0; i < z_t.size(); ++i) mu[i] = c.coef_z * z_t[i] + (c.coef_x + extra) * x_hat[i];
    return mu;
}

/// (d/2)(w - 1 - log w); zero at w = 1 and positive elsewhere.
inline double weighting_penalty(double w, std::size_t d) {
    detail::require_domain(w > 0.0, "weight must be positive");
    return 0.5 * static_cast<double>(d) * (w - 1.0 - std::log(w));
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    detail::require_same_dim(a.size(), b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

/// KL(q || p) for isotropic Gaussians, split as weighting penalty + weighted mean term.
inline double kl_isotropic(const GaussianParams& q, const GaussianParams& p) {
    detail::require_domain(q.var > 0.0 && p.var > 0.0, "KL requires positive variances");
    detail::require_same_dim(q.dim(), p.dim());
    const double w = q.var / p.var;
    return weighting_penalty(w, q.dim()) + w / (2.0 * q.var) * squared_distance(p.mean, q.mean);
}

/// sigma_P^2 minimizing the expected KL for a given E||mu_P - mu_Q||^2.
inline double optimal_sigma_p(double sigma2_Q, double mean_sq_gap, std::size_t d) {
    detail::require_domain(sigma2_Q > 0.0, "sigma_Q^2 must be positive");
    detail::require_domain(mean_sq_gap >= 0.0, "mean squared gap must be non-negative");
    detail::require_domain(d > 0, "dimension must be positive");
    return sigma2_Q + mean_sq_gap / static_cast<double>(d);
}

/// Expected KL as a function of sigma_P^2 for fixed sigma_Q^2 and expected mean gap.
inline double expected_kl(double sigma2_Q, double sigma2_P, double mean_sq_gap, std::size_t d) {
    return weighting_penalty(sigma2_Q / sigma2_P, d) + mean_sq_gap / (2.0 * sigma2_P);
}

}  // namespace diffenc
