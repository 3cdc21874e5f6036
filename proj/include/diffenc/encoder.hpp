#pragma once

#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffenc/error.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/schedule.hpp"

namespace diffenc {

enum class EncoderKind { Identity, NonTrainable, Trainable };

inline const char* to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::Identity: return "identity";
        case EncoderKind::NonTrainable: return "nt";
        case EncoderKind::Trainable: return "trainable";
    }
    return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "identity" || s == "vdm") return EncoderKind::Identity;
    if (s == "nt" || s == "non-trainable") return EncoderKind::NonTrainable;
    if (s == "trainable") return EncoderKind::Trainable;
    throw ConfigError("unknown encoder kind '" + s + "' (expected identity|nt|trainable)");
}

/// Encoder output for a batch, all [B, d]. For kinds without an inner network `y` and
/// `dy_dlambda` are zero constants.
struct EncodedBatch {
    nn::Var x_t;
    nn::Var dx_dlambda;
    nn::Var y;
    nn::Var dy_dlambda;
};

/// Time-dependent encoder conditioned on lambda:
///   identity      x_t = x
///   non-trainable x_t = alpha_t^2 x
///   trainable     x_t = alpha_t^2 x + sigma_t^2 y_phi(x, lambda_t)
///
/// dx_t/dlambda is analytic except for dy_phi/dlambda, which is the symmetric difference
/// (y(lambda + h) - y(lambda - h)) / 2h of two ordinary forward passes, so reverse-mode
/// gradients of a loss that contains it need no second-order machinery.
class Encoder {
public:
    static Encoder identity() { return Encoder(EncoderKind::Identity, std::nullopt, 0.0); }
    static Encoder non_trainable() { return Encoder(EncoderKind::NonTrainable, std::nullopt, 0.0); }
    static Encoder trainable(nn::Mlp inner, double fd_step) { return Encoder(EncoderKind::Trainable, std::move(inner), fd_step); }

    /// Default derivative step for a schedule: 1e-3 of the lambda span.
    static double default_fd_step(const LogLinearSchedule& s) { return 1e-3 * s.span(); }

    Encoder(EncoderKind kind, std::optional<nn::Mlp> inner, double fd_step)
        : kind_(kind), inner_(std::move(inner)), fd_step_(fd_step) {
        if (kind_ == EncoderKind::Trainable) {
            if (!inner_) throw ConfigError("trainable encoder requires an inner network");
            if (!(fd_step_ > 0.0)) throw ConfigError("trainable encoder requires a positive derivative step");
        }
    }

    Encoder(const Encoder& o) : kind_(o.kind_), inner_(o.inner_), fd_step_(o.fd_step_) {}
    Encoder& operator=(const Encoder& o) {
        kind_ = o.kind_;
        inner_ = o.inner_;
        fd_step_ = o.fd_step_;
        return *this;
    }

    EncoderKind kind() const noexcept { return kind_; }
    const std::optional<nn::Mlp>& inner() const noexcept { return inner_; }
    double fd_step() const noexcept { return fd_step_; }

    std::size_t invocations() const noexcept { return invocations_.load(std::memory_order_relaxed); }

    /// Batch encoding on a graph; row r of `x` is encoded at `pts[r]`. Without `with_derivative`
    /// the lambda-derivative fields are zero and the trainable encoder's extra passes are skipped.
    EncodedBatch encode(nn::Graph& g, const nn::ParamStore* params, nn::Var x, std::span<const SchedulePoint> pts,
                        bool with_derivative = true) const {
        invocations_.fetch_add(1, std::memory_order_relaxed);
        if (pts.size() != x.rows()) throw ConfigError("one schedule point per row required");
        const std::size_t B = x.rows();
        const std::size_t d = x.cols();
        std::vector<double> a2(B), s2(B), a2s2(B);
        for (std::size_t r = 0; r < B; ++r) {
            a2[r] = pts[r].alpha2;
            s2[r] = pts[r].sigma2;
            a2s2[r] = pts[r].alpha2 * pts[r].sigma2;
        }
        nn::Var zero = g.constant(nn::Tensor(B, d));
        switch (kind_) {
            case EncoderKind::Identity:
                return {x, zero, zero, zero};
            case EncoderKind::NonTrainable:
                return {g.row_scale(x, a2), g.row_scale(x, a2s2), zero, zero};
            case EncoderKind::Trainable: {
                if (params == nullptr) throw ConfigError("trainable encoder evaluated without parameters");
                std::vector<double> lam(B), lam_hi(B), lam_lo(B);
                for (std::size_t r = 0; r < B; ++r) {
                    lam[r] = pts[r].lambda;
                    lam_hi[r] = pts[r].lambda + fd_step_;
                    lam_lo[r] = pts[r].lambda - fd_step_;
                }
                nn::Var y = inner_->forward(g, *params, x, lam);
                nn::Var x_t = g.add(g.row_scale(x, a2), g.row_scale(y, s2));
                if (!with_derivative) return {x_t, zero, y, zero};
                nn::Var dy = g.scale(g.sub(inner_->forward(g, *params, x, lam_hi), inner_->forward(g, *params, x, lam_lo)),
                                     0.5 / fd_step_);
                nn::Var dx = g.sub(g.add(g.row_scale(x, a2s2), g.row_scale(dy, s2)), g.row_scale(y, a2s2));
                return {x_t, dx, y, dy};
            }
        }
        throw ConfigError("unhandled encoder kind");
    }

    nn::Tensor encode(const nn::ParamStore* params, const nn::Tensor& x, std::span<const SchedulePoint> pts) const {
        nn::Graph g;
        return encode(g, params, g.constant(x), pts, false).x_t.value();
    }

    std::vector<double> encode(const nn::ParamStore* params, std::span<const double> x, const SchedulePoint& pt) const {
        nn::Graph g;
        return encode(g, params, g.constant(nn::Tensor::row(x)), std::span(&pt, 1), false).x_t.value().data;
    }

    std::vector<double> encode_dlambda(const nn::ParamStore* params, std::span<const double> x, const SchedulePoint& pt) const {
        nn::Graph g;
        return encode(g, params, g.constant(nn::Tensor::row(x)), std::span(&pt, 1)).dx_dlambda.value().data;
    }

private:
    EncoderKind kind_;
    std::optional<nn::Mlp> inner_;
    double fd_step_;
    mutable std::atomic<std::size_t> invocations_{0};
};

/// (x_t - x_s) / (t - s); with `channel_sum` the last axis of size `channels` is summed,
/// giving one value per pixel.
inline std::vector<double> change_heatmap(const Encoder& enc, const nn::ParamStore* params, std::span<const double> x,
                                          const LogLinearSchedule& schedule, double s, double t,
                                          std::size_t channels = 1, bool channel_sum = false) {
    detail::require_domain(s < t, "change_heatmap requires s < t");
    const auto xs = enc.encode(params, x, schedule.eval(s));
    const auto xt = enc.encode(params, x, schedule.eval(t));
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diff[i] = (xt[i] - xs[i]) / (t - s);
    if (!channel_sum || channels <= 1) return diff;
    if (x.size() % channels != 0) throw ConfigError("data size is not a multiple of the channel count");
    std::vector<double> summed(x.size() / channels, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) summed[i / channels] += diff[i];
    return summed;
}

}  // namespace diffenc
