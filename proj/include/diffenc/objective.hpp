#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include "diffenc/data.hpp"
#include "diffenc/diffusion_process.hpp"
#include "diffenc/encoder.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/rng.hpp"
#include "diffenc/schedule.hpp"

namespace diffenc {

/// What every loss needs to see of a model: the schedule, the v-prediction network, the
/// encoder (plus its parameters when trainable) and whether mu_P carries the counterterm.
struct LossModel {
    LogLinearSchedule schedule;
    const nn::Denoiser& denoiser;
    const Encoder& encoder;
    const nn::ParamStore* encoder_params = nullptr;
    bool counterterm = true;
};

struct MonteCarloEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_samples = 0;
};

inline MonteCarloEstimate summarize(std::span<const double> draws) {
    MonteCarloEstimate e;
    e.n_samples = draws.size();
    if (draws.empty()) return e;
    double mean = 0.0;
    for (double v : draws) mean += v;
    mean /= double(draws.size());
    e.value = mean;
    if (draws.size() > 1) {
        double ss = 0.0;
        for (double v : draws) ss += (v - mean) * (v - mean);
        e.std_error = std::sqrt(ss / double(draws.size() - 1) / double(draws.size()));
    }
    return e;
}

struct LossBreakdown {
    double diffusion = 0.0;
    double latent = 0.0;
    double reconstruction = 0.0;
    double weighting_penalty = 0.0;
    double total_nats = 0.0;
    double bpd = 0.0;
    double diffusion_std_error = 0.0;
    std::size_t dim = 0;

    void finalize(std::size_t d) {
        dim = d;
        total_nats = diffusion + latent + reconstruction + weighting_penalty;
        bpd = total_nats / (double(d) * std::numbers::ln2);
    }
};

inline double to_bpd(double nats, std::size_t d) { return nats / (double(d) * std::numbers::ln2); }

// ---- continuous-time integrand ------------------------------------------------------------

/// Graph pieces of the diffusion integrand for a batch; `integrand` is [B, 1].
struct IntegrandGraph {
    std::vector<SchedulePoint> pts;
    EncodedBatch enc;
    nn::Var z, v, v_hat, x_hat;
    nn::Var integrand;
};

inline std::vector<SchedulePoint> schedule_points(const LogLinearSchedule& s, std::span<const double> t) {
    std::vector<SchedulePoint> pts;
    pts.reserve(t.size());
    for (double ti : t) pts.push_back(s.eval(ti));
    return pts;
}

/// v-parameterized integrand -1/2 lambda' alpha^2 ||r||^2 per row, with
///   trainable + counterterm: r = v - v_hat + sigma (x_hat - x_phi + y - dy/dlambda)
///   non-trainable + counterterm: r = v - v_hat + sigma (x_hat - x_nt)
///   otherwise: r = v - v_hat + [counterterm] sigma x_hat - (dx/dlambda) / sigma
/// where z = alpha x_t + sigma eps, v = alpha eps - sigma x_t and x_hat = alpha z - sigma v_hat.
/// The first two are the same function as the third; they are spelled out so a trainable
/// encoder with y = 0 reproduces the non-trainable value bit for bit.
inline IntegrandGraph diffusion_integrand(nn::Graph& g, const LossModel& m, nn::Var x, std::span<const double> t,
                                          const nn::Tensor& eps) {
    if (!eps.same_shape(x.value())) throw ConfigError("noise shape does not match data batch");
    IntegrandGraph out;
    out.pts = schedule_points(m.schedule, t);
    const std::size_t B = out.pts.size();
    std::vector<double> alpha(B), sigma(B), inv_sigma(B), lambda(B), weight(B);
    for (std::size_t r = 0; r < B; ++r) {
        const auto& p = out.pts[r];
        alpha[r] = p.alpha;
        sigma[r] = p.sigma;
        inv_sigma[r] = 1.0 / p.sigma;
        lambda[r] = p.lambda;
        weight[r] = -0.5 * p.lambda_prime * p.alpha2;
    }
    out.enc = m.encoder.encode(g, m.encoder_params, x, out.pts);
    nn::Var e = g.constant(eps);
    out.z = g.add(g.row_scale(out.enc.x_t, alpha), g.row_scale(e, sigma));
    out.v = g.sub(g.row_scale(e, alpha), g.row_scale(out.enc.x_t, sigma));
    out.v_hat = m.denoiser.predict_v(g, out.z, lambda);
    out.x_hat = g.sub(g.row_scale(out.z, alpha), g.row_scale(out.v_hat, sigma));

    nn::Var r = g.sub(out.v, out.v_hat);
    const EncoderKind kind = m.encoder.kind();
    if (m.counterterm && kind != EncoderKind::Identity) {
        nn::Var inner = g.sub(out.x_hat, out.enc.x_t);
        if (kind == EncoderKind::Trainable) inner = g.sub(g.add(inner, out.enc.y), out.enc.dy_dlambda);
        r = g.add(r, g.row_scale(inner, sigma));
    } else {
        if (m.counterterm) r = g.add(r, g.row_scale(out.x_hat, sigma));
        if (kind != EncoderKind::Identity) r = g.sub(r, g.row_scale(out.enc.dx_dlambda, inv_sigma));
    }
    out.integrand = g.row_scale(g.row_sum(g.square(r)), weight);
    return out;
}

/// Latent term per row, [B, 1]: 1/2 sum_i (alpha_1^2 x_{1,i}^2 + sigma_1^2 - log sigma_1^2 - 1).
inline nn::Var latent_loss(nn::Graph& g, const LossModel& m, nn::Var x) {
    const SchedulePoint p1 = m.schedule.eval(1.0);
    const std::size_t B = x.rows();
    const std::vector<SchedulePoint> pts(B, p1);
    nn::Var x1 = m.encoder.encode(g, m.encoder_params, x, pts, false).x_t;
    const double per_dim = p1.sigma2 - safe_log(p1.sigma2) - 1.0;
    nn::Var mean_part = g.row_scale(g.row_sum(g.square(x1)), std::vector<double>(B, 0.5 * p1.alpha2));
    return g.add(mean_part, g.constant(nn::Tensor(B, 1, 0.5 * per_dim * double(x.cols()))));
}

/// Per-example training objective for a batch: diffusion integrand at one (t, eps) draw plus
/// the latent term. Returns the batch mean as a scalar.
inline nn::Var training_loss(nn::Graph& g, const LossModel& m, nn::Var x, std::span<const double> t,
                             const nn::Tensor& eps) {
    nn::Var diff = diffusion_integrand(g, m, x, t, eps).integrand;
    return g.mean(g.add(diff, latent_loss(g, m, x)));
}

/// Everything about one integrand evaluation, for analysis and tests.
struct IntegrandDetail {
    SchedulePoint point;
    std::vector<double> x_t, dx_dlambda, y, dy_dlambda, z, v, v_hat, x_hat, eps_hat;
    double vloss = 0.0;
    double xloss = 0.0;
    double eps_loss = 0.0;  // -1/2 lambda' alpha^2 ||eps - eps_hat||^2
};

inline IntegrandDetail integrand_detail(const LossModel& m, std::span<const double> x, double t,
                                        std::span<const double> eps) {
    detail::require_domain(t >= 0.0 && t <= 1.0, "t must lie in [0, 1]");
    if (x.size() != eps.size()) throw ConfigError("noise dimension does not match data");
    nn::Graph g;
    const double tt[1] = {t};
    const auto ig = diffusion_integrand(g, m, g.constant(nn::Tensor::row(x)), tt, nn::Tensor::row(eps));
    IntegrandDetail d;
    const auto& p = ig.pts[0];
    d.point = p;
    d.x_t = ig.enc.x_t.value().data;
    d.dx_dlambda = ig.enc.dx_dlambda.value().data;
    d.y = ig.enc.y.value().data;
    d.dy_dlambda = ig.enc.dy_dlambda.value().data;
    d.z = ig.z.value().data;
    d.v = ig.v.value().data;
    d.v_hat = ig.v_hat.value().data;
    d.x_hat = ig.x_hat.value().data;
    d.vloss = ig.integrand.value().data[0];

    // x form: -1/2 lambda' e^lambda ||x_hat - x_t + [counterterm] sigma^2 x_hat - dx/dlambda||^2
    double xs = 0.0, es = 0.0;
    d.eps_hat.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double r = d.x_hat[i] - d.x_t[i] - d.dx_dlambda[i];
        if (m.counterterm) r += p.sigma2 * d.x_hat[i];
        xs += r * r;
        d.eps_hat[i] = p.sigma * d.z[i] + p.alpha * d.v_hat[i];
        const double de = eps[i] - d.eps_hat[i];
        es += de * de;
    }
    d.xloss = -0.5 * p.lambda_prime * p.snr * xs;
    d.eps_loss = -0.5 * p.lambda_prime * p.alpha2 * es;
    return d;
}

inline double continuous_vloss(const LossModel& m, std::span<const double> x, double t, std::span<const double> eps) {
    return integrand_detail(m, x, t, eps).vloss;
}

inline double continuous_xloss(const LossModel& m, std::span<const double> x, double t, std::span<const double> eps) {
    return integrand_detail(m, x, t, eps).xloss;
}

// ---- latent and reconstruction ------------------------------------------------------------

inline double latent_loss(const LossModel& m, std::span<const double> x) {
    nn::Graph g;
    return latent_loss(g, m, g.constant(nn::Tensor::row(x))).value().data[0];
}

/// log p(v | z) for v = 0..255 under p(v | z) proportional to N(z; alpha_0 scale(v), sigma_0^2).
inline std::array<double, 256> pixel_log_probs(double z, const SchedulePoint& p0) {
    std::array<double, 256> logits;
    for (int v = 0; v < 256; ++v) {
        const double diff = z - p0.alpha * scale_pixels(v);
        logits[v] = -0.5 * diff * diff / p0.sigma2;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double acc = 0.0;
    for (double l : logits) acc += std::exp(l - mx);
    const double lse = mx + std::log(acc);
    for (double& l : logits) l -= lse;
    return logits;
}

/// Most probable pixel level for a latent coordinate at t = 0: the level whose center
/// alpha_0 scale(v) is nearest to z.
inline int pixel_mode(double z, const SchedulePoint& p0) {
    const double x = z / p0.alpha;
    return quantize_to_pixel(x);
}

inline double reconstruction_loss(std::span<const int> pixels, std::span<const double> z0, const SchedulePoint& p0) {
    if (pixels.size() != z0.size()) throw ConfigError("pixel and latent dimensions differ");
    double nll = 0.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        detail::require_domain(pixels[i] >= 0 && pixels[i] <= 255, "pixel value must lie in {0..255}");
        nll -= pixel_log_probs(z0[i], p0)[std::size_t(pixels[i])];
    }
    return nll;
}

inline double reconstruction_loss(std::span<const int> pixels, std::span<const double> z0, const LogLinearSchedule& s) {
    return reconstruction_loss(pixels, z0, s.eval(0.0));
}

/// Reconstruction term at one eps draw: z_0 = alpha_0 x_0 + sigma_0 eps.
inline double reconstruction_term(const LossModel& m, std::span<const double> x, std::span<const int> pixels,
                                  std::span<const double> eps) {
    const SchedulePoint p0 = m.schedule.eval(0.0);
    const auto x0 = m.encoder.encode(m.encoder_params, x, p0);
    std::vector<double> z0(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) z0[i] = p0.alpha * x0[i] + p0.sigma * eps[i];
    return reconstruction_loss(pixels, z0, p0);
}

// ---- discrete-time diffusion loss ---------------------------------------------------------

/// sigma_P^2 policy for the T-step loss. Unit: sigma_P = sigma_Q. Fixed: sigma_P^2 = sigma_Q^2 / w.
/// Optimal: sigma_P^2 = sigma_Q^2 + gap(i, T) / d with gap(i, T) an estimate of E||mu_P - mu_Q||^2.
struct WeightPolicy {
    enum class Kind { Unit, Fixed, Optimal };
    Kind kind = Kind::Unit;
    double w = 1.0;
    std::function<double(std::size_t, std::size_t)> gap;

    static WeightPolicy unit() { return {}; }
    static WeightPolicy fixed(double w) {
        detail::require_domain(w > 0.0, "fixed weight must be positive");
        return {Kind::Fixed, w, {}};
    }
    static WeightPolicy optimal(std::function<double(std::size_t, std::size_t)> gap) {
        if (!gap) throw ConfigError("optimal weighting needs a gap estimate");
        return {Kind::Optimal, 1.0, std::move(gap)};
    }

    double sigma2_p(double sigma2_q, std::size_t i, std::size_t T, std::size_t d) const {
        switch (kind) {
            case Kind::Unit: return sigma2_q;
            case Kind::Fixed: return sigma2_q / w;
            case Kind::Optimal: return optimal_sigma_p(sigma2_q, gap(i, T), d);
        }
        return sigma2_q;
    }
};

/// Step i = 1..T of the discrete loss at one noise draw: the posterior variance, the squared
/// mean gap ||mu_P - mu_Q||^2 and the KL split into its two parts.
struct DiscreteStep {
    double s = 0.0, t = 0.0;
    double sigma2_q = 0.0;
    double sigma2_p = 0.0;
    double mean_sq_gap = 0.0;
    double penalty = 0.0;  // (d/2)(w - 1 - log w)
    double weighted = 0.0; // w / (2 sigma_Q^2) ||mu_P - mu_Q||^2
    double kl() const { return penalty + weighted; }
};

struct DiscreteLoss {
    std::vector<DiscreteStep> steps;
    double diffusion = 0.0;
    double penalty = 0.0;
    double total() const { return diffusion + penalty; }
};

/// All T steps with z_{t(i)} = alpha x_t + sigma eps_i, eps_i row i - 1 of `eps` ([T, d], or
/// [1, d] to reuse one draw for every step). The denoiser is called once on the stacked batch.
inline DiscreteLoss discrete_loss_terms(const LossModel& m, std::span<const double> x, std::size_t T,
                                        const WeightPolicy& policy, const nn::Tensor& eps) {
    detail::require_domain(T >= 1, "number of steps must be at least 1");
    const std::size_t d = x.size();
    if (eps.cols() != d || (eps.rows() != T && eps.rows() != 1)) throw ConfigError("noise table has the wrong shape");
    std::vector<SchedulePoint> ps(T), pt(T);
    for (std::size_t i = 1; i <= T; ++i) {
        ps[i - 1] = m.schedule.eval(double(i - 1) / double(T));
        pt[i - 1] = m.schedule.eval(double(i) / double(T));
    }
    nn::Tensor xb(T, d);
    for (std::size_t r = 0; r < T; ++r) std::copy(x.begin(), x.end(), xb.row_span(r).begin());
    const nn::Tensor xs = m.encoder.encode(m.encoder_params, xb, ps);
    const nn::Tensor xt = m.encoder.encode(m.encoder_params, xb, pt);

    nn::Tensor z(T, d);
    std::vector<double> lam(T);
    for (std::size_t r = 0; r < T; ++r) {
        const auto e = eps.row_span(eps.rows() == 1 ? 0 : r);
        for (std::size_t c = 0; c < d; ++c) z(r, c) = pt[r].alpha * xt(r, c) + pt[r].sigma * e[c];
        lam[r] = pt[r].lambda;
    }
    const nn::Tensor x_hat = nn::x_from_v(z, m.denoiser.predict_v(z, lam), pt);

    DiscreteLoss out;
    out.steps.resize(T);
    for (std::size_t r = 0; r < T; ++r) {
        const auto q = reverse_posterior(z.row_span(r), xt.row_span(r), xs.row_span(r), ps[r], pt[r]);
        GaussianParams p;
        p.mean = generative_mean(z.row_span(r), x_hat.row_span(r), ps[r], pt[r], m.counterterm);
        p.var = policy.sigma2_p(q.var, r + 1, T, d);
        DiscreteStep& st = out.steps[r];
        st.s = ps[r].t;
        st.t = pt[r].t;
        st.sigma2_q = q.var;
        st.sigma2_p = p.var;
        st.mean_sq_gap = squared_distance(p.mean, q.mean);
        const double w = q.var / p.var;
        st.penalty = weighting_penalty(w, d);
        st.weighted = w / (2.0 * q.var) * st.mean_sq_gap;
        out.diffusion += st.weighted;
        out.penalty += st.penalty;
    }
    return out;
}

/// Unbiased estimate of sum_i E[KL_i]: each replicate draws a fresh eps for every step and sums
/// the T exact KLs. The standard error is across replicates (zero for a single replicate).
inline MonteCarloEstimate discrete_diffusion_loss(const LossModel& m, std::span<const double> x, std::size_t T,
                                                  const WeightPolicy& policy, Rng& rng, std::size_t replicates = 1) {
    detail::require_domain(T >= 1, "number of steps must be at least 1");
    detail::require_domain(replicates >= 1, "at least one replicate required");
    std::vector<double> sums;
    for (std::size_t k = 0; k < replicates; ++k) {
        nn::Tensor eps(T, x.size());
        for (double& e : eps.data) e = rng.normal();
        sums.push_back(discrete_loss_terms(m, x, T, policy, eps).total());
    }
    return summarize(sums);
}

// ---- evaluation ---------------------------------------------------------------------------

/// Negative ELBO of one datapoint: diffusion from n_mc draws of (t ~ U[0,1], eps), latent in
/// closed form, reconstruction from a single z_0 draw.
inline LossBreakdown elbo_bpd(const LossModel& m, std::span<const double> x, std::span<const int> pixels,
                              std::size_t n_mc, Rng& rng) {
    detail::require_domain(n_mc >= 1, "n_mc must be at least 1");
    const std::size_t d = x.size();
    nn::Tensor xb(n_mc, d), eps(n_mc, d);
    std::vector<double> t(n_mc);
    for (std::size_t r = 0; r < n_mc; ++r) {
        t[r] = rng.uniform();
        for (std::size_t c = 0; c < d; ++c) {
            xb(r, c) = x[c];
            eps(r, c) = rng.normal();
        }
    }
    nn::Graph g;
    const auto ig = diffusion_integrand(g, m, g.constant(xb), t, eps);
    const auto est = summarize(ig.integrand.value().data);

    std::vector<double> e0(d);
    for (double& e : e0) e = rng.normal();

    LossBreakdown b;
    b.diffusion = est.value;
    b.diffusion_std_error = est.std_error;
    b.latent = latent_loss(m, x);
    b.reconstruction = reconstruction_term(m, x, pixels, e0);
    b.finalize(d);
    return b;
}

/// Dataset average of elbo_bpd with one RNG stream per item. The standard error is the Monte
/// Carlo error of the average for this fixed set of items.
inline LossBreakdown evaluate_dataset(const LossModel& m, const Dataset& ds, std::size_t n_mc, std::uint64_t seed,
                                      std::size_t max_items = 0) {
    const std::size_t n = max_items ? std::min(max_items, ds.size()) : ds.size();
    if (n == 0) throw ConfigError("empty dataset");
    LossBreakdown acc;
    double var_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        const auto x = ds.item(i);
        const auto px = ds.item_pixels(i);
        const auto b = elbo_bpd(m, x, px, n_mc, rng);
        acc.diffusion += b.diffusion;
        acc.latent += b.latent;
        acc.reconstruction += b.reconstruction;
        var_sum += b.diffusion_std_error * b.diffusion_std_error;
    }
    acc.diffusion /= double(n);
    acc.latent /= double(n);
    acc.reconstruction /= double(n);
    acc.diffusion_std_error = std::sqrt(var_sum) / double(n);
    acc.finalize(ds.item_dim());
    return acc;
}

struct ProfileRow {
    double t = 0.0;
    double lambda = 0.0;
    MonteCarloEstimate integrand;
};

/// Integrand mean and standard error on an evenly spaced grid of n_t times in (0, 1), each from
/// n_per_t (item, eps) draws.
inline std::vector<ProfileRow> integrand_profile(const LossModel& m, const Dataset& ds, std::size_t n_t,
                                                 std::size_t n_per_t, std::uint64_t seed) {
    if (n_t == 0 || n_per_t == 0) throw ConfigError("profile needs a positive grid and sample count");
    std::vector<ProfileRow> rows;
    const std::size_t d = ds.item_dim();
    for (std::size_t k = 0; k < n_t; ++k) {
        Rng rng(derive_seed(seed, k));
        const double t = (double(k) + 0.5) / double(n_t);
        nn::Tensor xb(n_per_t, d), eps(n_per_t, d);
        for (std::size_t r = 0; r < n_per_t; ++r) {
            const auto x = ds.item(rng.below(ds.size()));
            std::copy(x.begin(), x.end(), xb.row_span(r).begin());
            for (double& e : eps.row_span(r)) e = rng.normal();
        }
        const std::vector<double> ts(n_per_t, t);
        nn::Graph g;
        const auto ig = diffusion_integrand(g, m, g.constant(xb), ts, eps);
        rows.push_back({t, m.schedule.lambda(t), summarize(ig.integrand.value().data)});
    }
    return rows;
}

}  // namespace diffenc
