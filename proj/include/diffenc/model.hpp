#pragma once

#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "diffenc/encoder.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/objective.hpp"
#include "diffenc/rng.hpp"
#include "diffenc/schedule.hpp"

namespace diffenc {

struct ModelConfig {
    double lambda_max = kDefaultLambdaMax;
    double lambda_min = kDefaultLambdaMin;
    EncoderKind encoder = EncoderKind::NonTrainable;
    std::size_t data_dim = 2;
    std::size_t denoiser_hidden = 256;
    std::size_t encoder_hidden = 128;
    std::size_t n_freq = 8;
    bool counterterm = true;
    double fd_step = 0.0;  // 0: 1e-3 of the lambda span

    bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"lambda_max", c.lambda_max},       {"lambda_min", c.lambda_min},         {"encoder", to_string(c.encoder)},
         {"data_dim", c.data_dim},           {"denoiser_hidden", c.denoiser_hidden}, {"encoder_hidden", c.encoder_hidden},
         {"n_freq", c.n_freq},               {"counterterm", c.counterterm},       {"fd_step", c.fd_step}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.lambda_max = j.at("lambda_max").get<double>();
    c.lambda_min = j.at("lambda_min").get<double>();
    c.encoder = encoder_kind_from_string(j.at("encoder").get<std::string>());
    c.data_dim = j.at("data_dim").get<std::size_t>();
    c.denoiser_hidden = j.at("denoiser_hidden").get<std::size_t>();
    c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
    c.n_freq = j.at("n_freq").get<std::size_t>();
    c.counterterm = j.at("counterterm").get<bool>();
    c.fd_step = j.at("fd_step").get<double>();
}

/// Denoiser, encoder and their parameters in one store ("denoiser/..." and "encoder/...").
/// Not copyable: the denoiser refers to the store by address.
class DiffEncModel {
public:
    explicit DiffEncModel(const ModelConfig& cfg)
        : cfg_(cfg),
          schedule_(cfg.lambda_max, cfg.lambda_min),
          denoiser_net_("denoiser", nn::MlpShape{cfg.data_dim, cfg.n_freq, cfg.denoiser_hidden, true}),
          encoder_(make_encoder(cfg, schedule_)),
          denoiser_(params_, denoiser_net_) {
        if (cfg.data_dim == 0) throw ConfigError("data dimension must be positive");
    }

    DiffEncModel(const DiffEncModel&) = delete;
    DiffEncModel& operator=(const DiffEncModel&) = delete;

    /// Fresh parameters. The denoiser and the encoder draw from separate streams, so the
    /// denoiser initialization does not depend on the encoder kind.
    void init(std::uint64_t seed) {
        params_ = nn::ParamStore{};
        Rng den_rng(derive_seed(seed, 1));
        denoiser_net_.init(params_, den_rng);
        if (encoder_.inner()) {
            Rng enc_rng(derive_seed(seed, 2));
            encoder_.inner()->init(params_, enc_rng);
        }
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    const LogLinearSchedule& schedule() const noexcept { return schedule_; }
    const Encoder& encoder() const noexcept { return encoder_; }
    const nn::MlpDenoiser& denoiser() const noexcept { return denoiser_; }
    const nn::Mlp& denoiser_net() const noexcept { return denoiser_net_; }
    nn::ParamStore& params() noexcept { return params_; }
    const nn::ParamStore& params() const noexcept { return params_; }

    LossModel view() const { return LossModel{schedule_, denoiser_, encoder_, &params_, cfg_.counterterm}; }
    LossModel view(bool counterterm) const { return LossModel{schedule_, denoiser_, encoder_, &params_, counterterm}; }

private:
    static Encoder make_encoder(const ModelConfig& cfg, const LogLinearSchedule& s) {
        switch (cfg.encoder) {
            case EncoderKind::Identity: return Encoder::identity();
            case EncoderKind::NonTrainable: return Encoder::non_trainable();
            case EncoderKind::Trainable: {
                nn::Mlp inner("encoder", nn::MlpShape{cfg.data_dim, cfg.n_freq, cfg.encoder_hidden, false});
                return Encoder::trainable(inner, cfg.fd_step > 0.0 ? cfg.fd_step : Encoder::default_fd_step(s));
            }
        }
        throw ConfigError("unhandled encoder kind");
    }

    ModelConfig cfg_;
    LogLinearSchedule schedule_;
    nn::Mlp denoiser_net_;
    Encoder encoder_;
    nn::ParamStore params_;
    nn::MlpDenoiser denoiser_;
};

}  // namespace diffenc
