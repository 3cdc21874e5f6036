#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffenc/data.hpp"
#include "diffenc/diffusion_process.hpp"
#include "diffenc/encoder.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/objective.hpp"
#include "diffenc/rng.hpp"
#include "diffenc/schedule.hpp"

namespace diffenc {

enum class VarianceMode { SigmaQ, OptimalFromEstimate };

struct SamplerConfig {
    std::size_t steps = 256;
    VarianceMode variance_mode = VarianceMode::SigmaQ;
    /// E||mu_P - mu_Q||^2 for steps i = 1..T (entry i - 1); used by OptimalFromEstimate.
    std::vector<double> gap_table;
    bool counterterm = false;
    std::uint64_t seed = 0;
    bool stochastic_decode = false;
    /// Chains advanced together per denoiser call; 0 means all chains at once.
    std::size_t block = 0;
};

struct SampleResult {
    nn::Tensor x;                         // final x readout per chain [N, d]
    nn::Tensor z0;                        // alpha_0 x, or a draw from q(z_0 | x) with stochastic decode
    std::vector<std::vector<int>> pixels; // decoded levels per chain
};

/// Called after every reverse step with the target index i - 1 and the current latents.
using TrajectoryHook = std::function<void(std::size_t, const nn::Tensor&)>;

/// Ancestral sampling with p(z_s | z_t) = N(mu_P(z_t, x_hat), sigma_P^2 I) for i = T..2 and a
/// direct x_hat readout at t = 1/T. Each chain has its own noise stream derive_seed(seed, c), so
/// results do not depend on `block`. Per block of chains the denoiser is called exactly T times.
/// Only the denoiser is needed; the encoder plays no part in generation.
inline SampleResult ancestral_sample(const nn::Denoiser& denoiser, const LogLinearSchedule& schedule,
                                     const SamplerConfig& cfg, std::size_t n_chains, std::size_t dim,
                                     const TrajectoryHook& hook = {}) {
    detail::require_domain(cfg.steps >= 1, "sampler needs at least one step");
    if (n_chains == 0 || dim == 0) throw ConfigError("sampler needs chains and a positive dimension");
    if (cfg.variance_mode == VarianceMode::OptimalFromEstimate && cfg.gap_table.size() != cfg.steps)
        throw ConfigError("optimal variance needs one gap estimate per step");
    const std::size_t T = cfg.steps;
    const std::size_t block = cfg.block ? cfg.block : n_chains;
    const SchedulePoint p0 = schedule.eval(0.0);

    SampleResult res;
    res.x = nn::Tensor(n_chains, dim);
    res.z0 = nn::Tensor(n_chains, dim);
    res.pixels.resize(n_chains);

    for (std::size_t b0 = 0; b0 < n_chains; b0 += block) {
        const std::size_t B = std::min(block, n_chains - b0);
        std::vector<Rng> rngs;
        rngs.reserve(B);
        for (std::size_t c = 0; c < B; ++c) rngs.emplace_back(derive_seed(cfg.seed, b0 + c));

        nn::Tensor z(B, dim);
        for (std::size_t c = 0; c < B; ++c)
            for (double& v : z.row_span(c)) v = rngs[c].normal();

        for (std::size_t i = T; i >= 1; --i) {
            const SchedulePoint pt = schedule.eval(double(i) / double(T));
            const std::vector<double> lam(B, pt.lambda);
            const nn::Tensor v_hat = denoiser.predict_v(z, lam);
            if (i == 1) {
                for (std::size_t c = 0; c < B; ++c)
                    for (std::size_t k = 0; k < dim; ++k) res.x(b0 + c, k) = pt.alpha * z(c, k) - pt.sigma * v_hat(c, k);
                break;
            }
            const SchedulePoint ps = schedule.eval(double(i - 1) / double(T));
            const auto tc = TransitionCoefficients::between(ps, pt);
            double var = tc.sigma2_Q;
            if (cfg.variance_mode == VarianceMode::OptimalFromEstimate)
                var = optimal_sigma_p(tc.sigma2_Q, cfg.gap_table[i - 1], dim);
            const double sd = std::sqrt(var);
            const double extra = cfg.counterterm ? ps.alpha * (ps.lambda - pt.lambda) * pt.sigma2 : 0.0;
            for (std::size_t c = 0; c < B; ++c) {
                for (std::size_t k = 0; k < dim; ++k) {
                    const double x_hat = pt.alpha * z(c, k) - pt.sigma * v_hat(c, k);
                    const double mu = tc.coef_z * z(c, k) + (tc.coef_x + extra) * x_hat;
                    z(c, k) = mu + sd * rngs[c].normal();
                }
                for (double v : z.row_span(c))
                    if (!std::isfinite(v))
                        throw NumericalError("non-finite latent at reverse step " + std::to_string(i) + " (chain " +
                                             std::to_string(b0 + c) + ")");
            }
            if (hook) hook(i - 1, z);
        }

        for (std::size_t c = 0; c < B; ++c) {
            auto& px = res.pixels[b0 + c];
            px.resize(dim);
            for (std::size_t k = 0; k < dim; ++k) {
                const double x = res.x(b0 + c, k);
                if (!cfg.stochastic_decode) {
                    res.z0(b0 + c, k) = p0.alpha * x;
                    px[k] = pixel_mode(res.z0(b0 + c, k), p0);
                } else {
                    const double z0 = p0.alpha * x + p0.sigma * rngs[c].normal();
                    res.z0(b0 + c, k) = z0;
                    const auto lp = pixel_log_probs(z0, p0);
                    double u = rngs[c].uniform(), acc = 0.0;
                    int level = 255;
                    for (int v = 0; v < 256; ++v) {
                        acc += std::exp(lp[std::size_t(v)]);
                        if (u < acc) {
                            level = v;
                            break;
                        }
                    }
                    px[k] = level;
                }
            }
        }
    }
    return res;
}

/// Same as above, taking the denoiser and schedule from a loss model.
inline SampleResult ancestral_sample(const LossModel& m, const SamplerConfig& cfg, std::size_t n_chains,
                                     std::size_t dim, const TrajectoryHook& hook = {}) {
    return ancestral_sample(m.denoiser, m.schedule, cfg, n_chains, dim, hook);
}

// ---- reverse SDE --------------------------------------------------------------------------

/// Drift scale f(t) = d log alpha / dt = sigma^2 lambda' / 2 and squared diffusion
/// g(t)^2 = d sigma^2/dt - 2 f sigma^2 = -lambda' sigma^2.
struct SdeCoefficients {
    double f = 0.0;
    double g2 = 0.0;
};

inline SdeCoefficients sde_coefficients(const SchedulePoint& p) {
    return {0.5 * p.sigma2 * p.lambda_prime, -p.lambda_prime * p.sigma2};
}

/// One reverse-time Euler-Maruyama step (dt < 0) of
///   dz = [f z - g^2 score] dt + g dW,  score = -eps_hat / sigma.
/// The encoder drift alpha dx/dt is left out (generation never sees x). A step that would pass
/// t = 0 is shortened to land on 0.
inline std::vector<double> sde_step(std::span<const double> z, double t, double dt, const nn::Denoiser& denoiser,
                                    const LogLinearSchedule& schedule, Rng& rng) {
    detail::require_domain(dt < 0.0, "reverse SDE step needs dt < 0");
    if (t + dt < 0.0) dt = -t;
    const SchedulePoint p = schedule.eval(t);
    const auto c = sde_coefficients(p);
    const double lam[1] = {p.lambda};
    const nn::Tensor v_hat = denoiser.predict_v(nn::Tensor::row(z), lam);
    const double gsd = std::sqrt(c.g2 * std::fabs(dt));
    std::vector<double> out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double eps_hat = p.sigma * z[k] + p.alpha * v_hat.data[k];
        const double score = -eps_hat / p.sigma;
        out[k] = z[k] + (c.f * z[k] - c.g2 * score) * dt + gsd * rng.normal();
    }
    return out;
}

/// Forward-time Euler-Maruyama step for analysis, including the encoder drift
/// alpha lambda' dx_t/dlambda. Returns the step's Gaussian (mean and variance g^2 dt).
inline GaussianParams sde_forward_step(std::span<const double> z, std::span<const double> x, double t, double dt,
                                       const Encoder& encoder, const nn::ParamStore* params,
                                       const LogLinearSchedule& schedule) {
    detail::require_domain(dt > 0.0 && t + dt <= 1.0, "forward SDE step needs dt > 0 within [0, 1]");
    const SchedulePoint p = schedule.eval(t);
    const auto c = sde_coefficients(p);
    const auto dx = encoder.encode_dlambda(params, x, p);
    GaussianParams g;
    g.mean.resize(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) g.mean[k] = z[k] + (c.f * z[k] + p.alpha * p.lambda_prime * dx[k]) * dt;
    g.var = c.g2 * dt;
    return g;
}

/// Integrates the reverse SDE from t = 1 to 0 in `steps` equal steps, then reads out x_hat at
/// the last positive time visited. One chain.
inline std::vector<double> sde_sample(const nn::Denoiser& denoiser, const LogLinearSchedule& schedule,
                                      std::size_t steps, std::size_t dim, Rng& rng) {
    detail::require_domain(steps >= 2, "SDE sampler needs at least two steps");
    std::vector<double> z(dim);
    for (double& v : z) v = rng.normal();
    const double dt = -1.0 / double(steps);
    for (std::size_t k = 0; k + 1 < steps; ++k) z = sde_step(z, 1.0 - double(k) / double(steps), dt, denoiser, schedule, rng);
    const SchedulePoint p = schedule.eval(1.0 / double(steps));
    const double lam[1] = {p.lambda};
    const nn::Tensor v_hat = denoiser.predict_v(nn::Tensor::row(z), lam);
    std::vector<double> x(dim);
    for (std::size_t k = 0; k < dim; ++k) x[k] = p.alpha * z[k] - p.sigma * v_hat.data[k];
    return x;
}

}  // namespace diffenc
