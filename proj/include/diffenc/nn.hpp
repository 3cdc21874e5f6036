#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "diffenc/error.hpp"
#include "diffenc/rng.hpp"
#include "diffenc/schedule.hpp"
#include "diffenc/tensor.hpp"

namespace diffenc::nn {

/// Named parameters for the denoiser (theta) and encoder (phi) plus the optimizer state.
class ParamStore {
public:
    void add(const std::string& name, Tensor value) {
        if (params_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
        params_.emplace(name, std::move(value));
    }

    const Tensor& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.contains(name); }
    const std::map<std::string, Tensor>& params() const noexcept { return params_; }
    std::map<std::string, Tensor>& params() noexcept { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : params_) n += t.size();
        return n;
    }

    // optimizer state
    std::int64_t step = 0;
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;

    bool operator==(const ParamStore&) const = default;

private:
    std::map<std::string, Tensor> params_;
};

/// One gradient tensor per parameter. Parameters the loss never touched are listed in
/// `unused` (and carry zero gradients) instead of being silently zero.
struct GradientSet {
    std::map<std::string, Tensor> grads;
    std::vector<std::string> unused;

    bool all_finite() const {
        for (const auto& [_, g] : grads)
            if (!g.all_finite()) return false;
        return true;
    }
};

inline GradientSet grad(Graph& graph, Var loss, const ParamStore& params) {
    graph.backward(loss);
    GradientSet out;
    for (const auto& [name, value] : params.params()) {
        if (auto node = graph.parameter_node(name)) {
            out.grads.emplace(name, graph.grad(*node));
        } else {
            out.grads.emplace(name, Tensor(value.rows(), value.cols()));
            out.unused.push_back(name);
        }
    }
    return out;
}

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
};

/// Bias-corrected adaptive-moment update. A non-finite gradient rejects the whole step and
/// leaves parameters, moments and the step counter untouched.
inline void optimizer_step(ParamStore& params, const GradientSet& grads, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    for (const auto& [name, g] : grads.grads) {
        if (!g.all_finite()) throw NumericalError("non-finite gradient for '" + name + "'; step rejected");
        if (!g.same_shape(params.get(name))) throw ConfigError("gradient shape mismatch for '" + name + "'");
    }
    const std::int64_t step = params.step + 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    for (auto& [name, p] : params.params()) {
        auto git = grads.grads.find(name);
        if (git == grads.grads.end()) continue;
        const Tensor& g = git->second;
        Tensor& m = params.first_moment.try_emplace(name, p.rows(), p.cols()).first->second;
        Tensor& v = params.second_moment.try_emplace(name, p.rows(), p.cols()).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / c1;
            const double vhat = v.data[i] / c2;
            p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps_hat);
        }
    }
    params.step = step;
}

/// Sinusoidal features of log-SNR on a geometric frequency ladder: sin and cos of
/// (pi / 64) * 2^k * lambda for k < n_freq. Covers one slow period over the whole
/// default lambda range up to ~18 periods.
inline std::vector<double> lambda_embedding(double lambda, std::size_t n_freq) {
    std::vector<double> out(2 * n_freq);
    double w = std::numbers::pi / 64.0;
    for (std::size_t k = 0; k < n_freq; ++k, w *= 2.0) {
        out[k] = std::sin(w * lambda);
        out[n_freq + k] = std::cos(w * lambda);
    }
    return out;
}

inline Tensor lambda_features(std::span<const double> lambdas, std::size_t n_freq) {
    Tensor t(lambdas.size(), 2 * n_freq);
    for (std::size_t r = 0; r < lambdas.size(); ++r) {
        const auto e = lambda_embedding(lambdas[r], n_freq);
        std::copy(e.begin(), e.end(), t.row_span(r).begin());
    }
    return t;
}

struct MlpShape {
    std::size_t data_dim = 2;
    std::size_t n_freq = 8;
    std::size_t hidden = 256;
    bool residual = true;

    std::size_t input_dim() const { return data_dim + 2 * n_freq; }
};

/// Perceptron on [data, embedding(lambda)] with two hidden layers of equal width, SiLU
/// activations, optional residual connection on the second layer and a (by default
/// zero-initialized) linear output of size data_dim.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::string prefix, MlpShape shape) : prefix_(std::move(prefix)), shape_(shape) {}

    const std::string& prefix() const noexcept { return prefix_; }
    const MlpShape& shape() const noexcept { return shape_; }

    std::string name(const char* leaf) const { return prefix_ + "/" + leaf; }

    void init(ParamStore& params, Rng& rng, bool zero_output = true) const {
        const std::size_t in = shape_.input_dim();
        const std::size_t h = shape_.hidden;
        params.add(name("w1"), gaussian(in, h, 1.0 / std::sqrt(double(in)), rng));
        params.add(name("b1"), Tensor(1, h));
        params.add(name("w2"), gaussian(h, h, 1.0 / std::sqrt(double(h)), rng));
        params.add(name("b2"), Tensor(1, h));
        params.add(name("w3"), zero_output ? Tensor(h, shape_.data_dim)
                                           : gaussian(h, shape_.data_dim, 1.0 / std::sqrt(double(h)), rng));
        params.add(name("b3"), Tensor(1, shape_.data_dim));
    }

    /// Replaces the output layer by random weights of the given scale (used by gradient checks).
    void randomize_output(ParamStore& params, Rng& rng, double scale) const {
        Tensor& w = params.get(name("w3"));
        for (double& v : w.data) v = scale * rng.normal() / std::sqrt(double(shape_.hidden));
        for (double& v : params.get(name("b3")).data) v = 0.1 * scale * rng.normal();
    }

    Var forward(Graph& g, const ParamStore& params, Var data, std::span<const double> lambdas) const {
        if (data.cols() != shape_.data_dim) throw ConfigError("network input width does not match data dimension");
        if (lambdas.size() != data.rows()) throw ConfigError("one lambda per row required");
        Var input = g.concat_cols(data, g.constant(lambda_features(lambdas, shape_.n_freq)));
        Var h1 = g.silu(g.add_bias(g.matmul(input, param(g, params, "w1")), param(g, params, "b1")));
        Var a2 = g.silu(g.add_bias(g.matmul(h1, param(g, params, "w2")), param(g, params, "b2")));
        Var h2 = shape_.residual ? g.add(h1, a2) : a2;
        return g.add_bias(g.matmul(h2, param(g, params, "w3")), param(g, params, "b3"));
    }

private:
    Var param(Graph& g, const ParamStore& params, const char* leaf) const {
        const std::string n = name(leaf);
        return g.parameter(n, params.get(n));
    }

    static Tensor gaussian(std::size_t r, std::size_t c, double scale, Rng& rng) {
        Tensor t(r, c);
        for (double& v : t.data) v = scale * rng.normal();
        return t;
    }

    std::string prefix_;
    MlpShape shape_;
};

/// v-prediction network v_hat(z, lambda). Every call goes through `predict_v`, which counts
/// invocations so callers can assert how many model evaluations a procedure made.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    Var predict_v(Graph& g, Var z, std::span<const double> lambdas) const {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return do_predict_v(g, z, lambdas);
    }

    Tensor predict_v(const Tensor& z, std::span<const double> lambdas) const {
        Graph g;
        return predict_v(g, g.constant(z), lambdas).value();
    }

    std::size_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }
    void reset_calls() const noexcept { calls_.store(0, std::memory_order_relaxed); }

protected:
    Denoiser() = default;
    Denoiser(const Denoiser&) {}
    Denoiser& operator=(const Denoiser&) { return *this; }

    virtual Var do_predict_v(Graph& g, Var z, std::span<const double> lambdas) const = 0;

private:
    mutable std::atomic<std::size_t> calls_{0};
};

/// Denoiser backed by an Mlp whose parameters live in an external ParamStore.
class MlpDenoiser final : public Denoiser {
public:
    MlpDenoiser(const ParamStore& params, Mlp net) : params_(&params), net_(std::move(net)) {}

    const Mlp& net() const noexcept { return net_; }

protected:
    Var do_predict_v(Graph& g, Var z, std::span<const double> lambdas) const override {
        return net_.forward(g, *params_, z, lambdas);
    }

private:
    const ParamStore* params_;
    Mlp net_;
};

/// x_hat = alpha z - sigma v_hat and eps_hat = sigma z + alpha v_hat, per row.
inline Tensor x_from_v(const Tensor& z, const Tensor& v, std::span<const SchedulePoint> pts) {
    Tensor x(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) x(r, c) = pts[r].alpha * z(r, c) - pts[r].sigma * v(r, c);
    return x;
}

inline Tensor eps_from_v(const Tensor& z, const Tensor& v, std::span<const SchedulePoint> pts) {
    Tensor e(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) e(r, c) = pts[r].sigma * z(r, c) + pts[r].alpha * v(r, c);
    return e;
}

}  // namespace diffenc::nn
