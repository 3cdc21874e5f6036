#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "diffenc/data.hpp"
#include "diffenc/model.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/objective.hpp"
#include "diffenc/rng.hpp"

namespace diffenc {

struct TrainConfig {
    std::size_t steps = 20000;
    std::size_t batch = 64;
    nn::AdamConfig adam;
    std::size_t log_every = 100;
    std::uint64_t seed = 0;
};

/// Batch means at one step. Diffusion and latent are the optimized terms; reconstruction is
/// measured on the same batch for reporting and does not enter the gradient.
struct TrainLogRow {
    std::int64_t step = 0;
    double diffusion = 0.0;
    double latent = 0.0;
    double reconstruction = 0.0;
    double total = 0.0;
    double bpd = 0.0;
};

/// Draws for one step, from streams that depend only on the seed (not on the encoder kind).
struct StepDraws {
    std::vector<std::size_t> index;
    std::vector<double> t;
    nn::Tensor eps;
};

/// Runs `cfg.steps` optimizer steps on `model`, logging every `log_every` steps (and at step 0,
/// before any update). `on_log` may throw to stop early; `on_step` runs after each update.
class Trainer {
public:
    Trainer(DiffEncModel& model, const Dataset& data, const TrainConfig& cfg)
        : model_(model),
          data_(data),
          cfg_(cfg),
          batches_(data.size(), cfg.batch, derive_seed(cfg.seed, 3)),
          draw_rng_(derive_seed(cfg.seed, 4)),
          report_rng_(derive_seed(cfg.seed, 5)) {
        if (data.item_dim() != model.config().data_dim) throw ConfigError("dataset dimension does not match model");
        if (cfg.batch == 0) throw ConfigError("batch size must be positive");
    }

    StepDraws draw() {
        StepDraws d;
        d.index = batches_.next();
        const std::size_t B = d.index.size();
        d.t.resize(B);
        d.eps = nn::Tensor(B, data_.item_dim());
        for (std::size_t r = 0; r < B; ++r) {
            d.t[r] = draw_rng_.uniform();
            for (double& e : d.eps.row_span(r)) e = draw_rng_.normal();
        }
        return d;
    }

    /// One optimizer step; returns the batch log row computed before the update.
    TrainLogRow step(bool with_report) {
        const StepDraws d = draw();
        const std::size_t B = d.index.size();
        nn::Tensor xb(B, data_.item_dim());
        for (std::size_t r = 0; r < B; ++r) {
            const auto x = data_.item(d.index[r]);
            std::copy(x.begin(), x.end(), xb.row_span(r).begin());
        }
        const LossModel lm = model_.view();
        nn::Graph g;
        nn::Var x = g.constant(xb);
        nn::Var diff = diffusion_integrand(g, lm, x, d.t, d.eps).integrand;
        nn::Var lat = latent_loss(g, lm, x);
        nn::Var loss = g.mean(g.add(diff, lat));

        TrainLogRow row;
        row.step = model_.params().step;
        row.diffusion = mean_of(diff.value());
        row.latent = mean_of(lat.value());
        if (with_report) {
            double rec = 0.0;
            for (std::size_t r = 0; r < B; ++r) {
                std::vector<double> e0(data_.item_dim());
                for (double& e : e0) e = report_rng_.normal();
                rec += reconstruction_term(lm, xb.row_span(r), data_.item_pixels(d.index[r]), e0);
            }
            row.reconstruction = rec / double(B);
        }
        row.total = row.diffusion + row.latent + row.reconstruction;
        row.bpd = to_bpd(row.total, data_.item_dim());

        const auto grads = nn::grad(g, loss, model_.params());
        nn::optimizer_step(model_.params(), grads, cfg_.adam);
        return row;
    }

    std::vector<TrainLogRow> run(const std::function<void(const TrainLogRow&)>& on_log = {},
                                 const std::function<void(std::int64_t)>& on_step = {}) {
        std::vector<TrainLogRow> log;
        for (std::size_t k = 0; k < cfg_.steps; ++k) {
            const bool report = cfg_.log_every > 0 && (k % cfg_.log_every == 0);
            const TrainLogRow row = step(report);
            if (report) {
                log.push_back(row);
                if (on_log) on_log(row);
            }
            if (on_step) on_step(model_.params().step);
        }
        return log;
    }

private:
    static double mean_of(const nn::Tensor& t) {
        double s = 0.0;
        for (double v : t.data) s += v;
        return s / double(t.size());
    }

    DiffEncModel& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    BatchIterator batches_;
    Rng draw_rng_;
    Rng report_rng_;
};

}  // namespace diffenc
