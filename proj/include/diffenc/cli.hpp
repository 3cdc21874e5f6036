#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffenc/checkpoint.hpp"
#include "diffenc/data.hpp"
#include "diffenc/io.hpp"
#include "diffenc/model.hpp"
#include "diffenc/objective.hpp"
#include "diffenc/sampler.hpp"
#include "diffenc/train.hpp"
#include "diffenc/verify.hpp"

namespace diffenc::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kConfigError = 2, kNumericalAbort = 3 };

struct RunConfig {
    // dataset: an IDX file, or the synthetic 2-D Gaussian when data_path is empty
    std::string data_path;
    std::size_t synth_n = 4096;
    double synth_mean0 = 0.5;
    double synth_mean1 = -0.3;
    double synth_cov = 1e-4;
    std::uint64_t synth_seed = 1;

    double lambda_max = kDefaultLambdaMax;
    double lambda_min = kDefaultLambdaMin;
    std::string encoder = "nt";
    std::string counterterm = "auto";
    std::size_t denoiser_hidden = 256;
    std::size_t encoder_hidden = 128;
    std::size_t n_freq = 8;

    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
    std::size_t batch = 64;

    std::uint64_t seed = 0;
    std::size_t steps = 20000;
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 1000;
    std::size_t n_mc = 128;
    std::size_t eval_items = 0;
    std::string out_dir = "out";

    /// Resolves "auto": on for encoder-trained models, off for the identity baseline.
    bool counterterm_for(EncoderKind kind) const {
        if (counterterm == "on") return true;
        if (counterterm == "off") return false;
        return kind != EncoderKind::Identity;
    }

    ModelConfig model_config(std::size_t data_dim) const {
        ModelConfig m;
        m.lambda_max = lambda_max;
        m.lambda_min = lambda_min;
        m.encoder = encoder_kind_from_string(encoder);
        m.data_dim = data_dim;
        m.denoiser_hidden = denoiser_hidden;
        m.encoder_hidden = encoder_hidden;
        m.n_freq = n_freq;
        m.counterterm = counterterm_for(m.encoder);
        return m;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.steps = steps;
        t.batch = batch;
        t.adam = {lr, beta1, beta2, eps_hat};
        t.log_every = log_every;
        t.seed = seed;
        return t;
    }
};

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"data_path", c.data_path},     {"synth_n", c.synth_n},       {"synth_mean0", c.synth_mean0},
            {"synth_mean1", c.synth_mean1}, {"synth_cov", c.synth_cov},   {"synth_seed", c.synth_seed},
            {"lambda_max", c.lambda_max},   {"lambda_min", c.lambda_min}, {"encoder", c.encoder},
            {"counterterm", c.counterterm}, {"denoiser_hidden", c.denoiser_hidden},
            {"encoder_hidden", c.encoder_hidden}, {"n_freq", c.n_freq}, {"lr", c.lr},
            {"beta1", c.beta1},             {"beta2", c.beta2},           {"eps_hat", c.eps_hat},
            {"batch", c.batch},             {"seed", c.seed},             {"steps", c.steps},
            {"log_every", c.log_every},     {"checkpoint_every", c.checkpoint_every},
            {"n_mc", c.n_mc},               {"eval_items", c.eval_items}, {"out_dir", c.out_dir}};
}

inline std::string config_hash(const RunConfig& c) { return io::hex64(io::fnv1a64(to_json(c).dump())); }

inline Dataset load_dataset(const RunConfig& c) {
    if (!c.data_path.empty()) {
        Dataset ds = load_idx(c.data_path);
        ds.validate();
        return ds;
    }
    return synth_gaussian2d(c.synth_n, {c.synth_mean0, c.synth_mean1}, c.synth_cov, c.synth_seed);
}

class Cli {
public:
    Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(int argc, const char* const* argv) {
        CLI::App app{"Diffusion models with a time-dependent encoder: train, evaluate, sample, verify."};
        app.set_config("--config", "", "INI config file (flags given on the command line win)");
        app.require_subcommand(1);
        app.fallthrough();
        add_common(app);

        auto* train = app.add_subcommand("train", "train a model; writes checkpoint and loss curve");
        auto* eval = app.add_subcommand("eval", "loss breakdown of a checkpoint in bits per dimension");
        auto* sample = app.add_subcommand("sample", "ancestral sampling from a checkpoint");
        auto* heatmap = app.add_subcommand("heatmap", "encoder change maps (x_t - x_s) / (t - s)");
        auto* sched = app.add_subcommand("schedule-report", "CSV of t, lambda, alpha, sigma, SNR");
        auto* verify = app.add_subcommand("verify", "run every oracle; exit 1 on any failure");

        for (auto* sub : {eval, sample, heatmap})
            sub->add_option("--checkpoint", checkpoint_, "checkpoint file")->check(CLI::ExistingFile);
        eval->add_flag("--profile", profile_, "also write the per-timestep integrand profile");
        sample->add_option("--n", n_samples_, "number of chains")->check(CLI::PositiveNumber);
        sample->add_option("--T", sample_steps_, "reverse steps")->check(CLI::PositiveNumber);
        sample->add_flag("--stochastic-decode", stochastic_decode_, "sample pixels instead of taking the mode");
        sample->add_option("--trajectory-every", trajectory_every_, "write latent norms every k steps (0: off)");
        heatmap->add_option("--index", heatmap_index_, "dataset item");
        heatmap->add_option("--times", heatmap_times_, "times t at which to evaluate")->delimiter(',');
        heatmap->add_option("--dt", heatmap_dt_, "s = t - dt")->check(CLI::PositiveNumber);
        sched->add_option("--points", schedule_points_, "grid size including both endpoints")->check(CLI::Range(2, 1000000));

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out_, err_);
            return code == 0 ? kOk : kConfigError;
        }

        try {
            if (*train) return cmd_train();
            if (*eval) return cmd_eval();
            if (*sample) return cmd_sample();
            if (*heatmap) return cmd_heatmap();
            if (*sched) return cmd_schedule_report();
            if (*verify) return cmd_verify();
        } catch (const NumericalError& e) {
            err_ << "numerical abort: " << e.what() << "\n";
            return kNumericalAbort;
        } catch (const ConfigError& e) {
            err_ << "config error: " << e.what() << "\n";
            return kConfigError;
        } catch (const DomainError& e) {
            err_ << "config error: " << e.what() << "\n";
            return kConfigError;
        } catch (const ParseError& e) {
            err_ << "input error: " << e.what() << "\n";
            return kConfigError;
        } catch (const nlohmann::json::exception& e) {
            err_ << "config error: " << e.what() << "\n";
            return kConfigError;
        } catch (const std::filesystem::filesystem_error& e) {
            err_ << "config error: " << e.what() << "\n";
            return kConfigError;
        }
        return kConfigError;
    }

    const RunConfig& config() const noexcept { return cfg_; }

private:
    void add_common(CLI::App& app) {
        app.add_option("--seed", cfg_.seed, "base seed");
        app.add_option("--out-dir", cfg_.out_dir, "output directory");
        app.add_option("--steps", cfg_.steps, "training steps");
        app.add_option("--encoder", cfg_.encoder, "encoder kind")->check(CLI::IsMember({"identity", "nt", "trainable"}));
        app.add_option("--lambda-max", cfg_.lambda_max, "log-SNR at t = 0");
        app.add_option("--lambda-min", cfg_.lambda_min, "log-SNR at t = 1");
        app.add_option("--counterterm", cfg_.counterterm, "counterterm in mu_P (auto: on unless identity encoder)")
            ->check(CLI::IsMember({"on", "off", "auto"}));
        app.add_option("--n-mc", cfg_.n_mc, "Monte Carlo draws per datapoint for evaluation")->check(CLI::PositiveNumber);
        app.add_option("--data", cfg_.data_path, "IDX image file (default: synthetic 2-D Gaussian)");
        app.add_option("--synth-n", cfg_.synth_n, "synthetic dataset size")->check(CLI::PositiveNumber);
        app.add_option("--synth-mean0", cfg_.synth_mean0);
        app.add_option("--synth-mean1", cfg_.synth_mean1);
        app.add_option("--synth-cov", cfg_.synth_cov, "synthetic isotropic variance")->check(CLI::NonNegativeNumber);
        app.add_option("--synth-seed", cfg_.synth_seed);
        app.add_option("--denoiser-hidden", cfg_.denoiser_hidden)->check(CLI::PositiveNumber);
        app.add_option("--encoder-hidden", cfg_.encoder_hidden)->check(CLI::PositiveNumber);
        app.add_option("--n-freq", cfg_.n_freq)->check(CLI::PositiveNumber);
        app.add_option("--lr", cfg_.lr);
        app.add_option("--beta1", cfg_.beta1);
        app.add_option("--beta2", cfg_.beta2);
        app.add_option("--eps-hat", cfg_.eps_hat);
        app.add_option("--batch", cfg_.batch)->check(CLI::PositiveNumber);
        app.add_option("--log-every", cfg_.log_every);
        app.add_option("--checkpoint-every", cfg_.checkpoint_every);
        app.add_option("--eval-items", cfg_.eval_items, "evaluate only the first n items (0: all)");
    }

    std::filesystem::path out_path(const std::string& name) const { return std::filesystem::path(cfg_.out_dir) / name; }

    void write_sidecar() const {
        nlohmann::json j = {{"config_hash", config_hash(cfg_)}, {"run_config", to_json(cfg_)}};
        io::atomic_write(out_path("run_config.json"), j.dump(2) + "\n");
    }

    int cmd_train() {
        const Dataset ds = load_dataset(cfg_);
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        DiffEncModel model(cfg_.model_config(ds.item_dim()));
        model.init(cfg_.seed);
        nlohmann::json run = to_json(cfg_);
        run["data_dims"] = ds.dims;

        io::CsvTable curve(hash, {"step", "diffusion", "latent", "reconstruction", "total", "bpd"});
        Trainer trainer(model, ds, cfg_.train_config());
        const auto ckpt = out_path("checkpoint.bin");
        try {
            trainer.run(
                [&](const TrainLogRow& r) {
                    curve.add({double(r.step), r.diffusion, r.latent, r.reconstruction, r.total, r.bpd});
                    out_ << "step " << r.step << "  total " << r.total << " nats  (" << r.bpd << " bpd)\n";
                },
                [&](std::int64_t step) {
                    if (cfg_.checkpoint_every && step % std::int64_t(cfg_.checkpoint_every) == 0)
                        save_checkpoint(ckpt, model, hash, run);
                });
        } catch (const NumericalError&) {
            curve.write(out_path("loss_curve.csv"));
            throw;
        }
        save_checkpoint(ckpt, model, hash, run);
        curve.write(out_path("loss_curve.csv"));
        out_ << "wrote " << ckpt.string() << " (config_hash " << hash << ")\n";
        return kOk;
    }

    std::unique_ptr<DiffEncModel> load_model(CheckpointInfo& info) {
        if (checkpoint_.empty()) throw ConfigError("--checkpoint is required");
        return load_checkpoint(checkpoint_, &info);
    }

    int cmd_eval() {
        CheckpointInfo info;
        auto model = load_model(info);
        const Dataset ds = load_dataset(cfg_);
        if (ds.item_dim() != model->config().data_dim)
            throw ConfigError("dataset dimension " + std::to_string(ds.item_dim()) + " does not match checkpoint (" +
                              std::to_string(model->config().data_dim) + ")");
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        const LossModel lm = model->view(cfg_.counterterm == "auto" ? model->config().counterterm
                                                                    : cfg_.counterterm == "on");
        const LossBreakdown b = evaluate_dataset(lm, ds, cfg_.n_mc, cfg_.seed, cfg_.eval_items);
        const std::size_t d = ds.item_dim();
        const double se_bpd = to_bpd(b.diffusion_std_error, d);

        char line[256];
        out_ << "encoder " << to_string(model->encoder().kind()) << ", checkpoint step " << info.step << ", n_mc "
             << cfg_.n_mc << "\n";
        std::snprintf(line, sizeof line, "%-16s %12s %12s\n", "component", "bpd", "std_error");
        out_ << line;
        std::snprintf(line, sizeof line, "%-16s %12.6f %12.6f\n", "total", b.bpd, se_bpd);
        out_ << line;
        std::snprintf(line, sizeof line, "%-16s %12.6f %12s\n", "latent", to_bpd(b.latent, d), "-");
        out_ << line;
        std::snprintf(line, sizeof line, "%-16s %12.6f %12.6f\n", "diffusion", to_bpd(b.diffusion, d), se_bpd);
        out_ << line;
        std::snprintf(line, sizeof line, "%-16s %12.6f %12s\n", "reconstruction", to_bpd(b.reconstruction, d), "-");
        out_ << line;

        io::CsvTable t(hash, {"total_bpd", "latent_bpd", "diffusion_bpd", "diffusion_se_bpd", "reconstruction_bpd",
                              "total_nats", "diffusion_se_nats", "n_mc"});
        t.add({b.bpd, to_bpd(b.latent, d), to_bpd(b.diffusion, d), se_bpd, to_bpd(b.reconstruction, d), b.total_nats,
               b.diffusion_std_error, double(cfg_.n_mc)});
        t.write(out_path("eval.csv"));
        if (profile_) {
            io::CsvTable p(hash, {"t", "lambda", "integrand_mean", "integrand_stderr"});
            for (const auto& r : integrand_profile(lm, ds, 64, cfg_.n_mc, cfg_.seed))
                p.add({r.t, r.lambda, r.integrand.value, r.integrand.std_error});
            p.write(out_path("profile.csv"));
        }
        return kOk;
    }

    int cmd_sample() {
        CheckpointInfo info;
        auto model = load_model(info);
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        SamplerConfig sc;
        sc.steps = sample_steps_;
        sc.seed = cfg_.seed;
        sc.counterterm = cfg_.counterterm == "auto" ? model->config().counterterm : cfg_.counterterm == "on";
        sc.stochastic_decode = stochastic_decode_;
        sc.block = 1024;
        const std::size_t d = model->config().data_dim;

        io::CsvTable traj(hash, {"step", "t", "mean_latent_norm"});
        TrajectoryHook hook;
        if (trajectory_every_ > 0) {
            hook = [&](std::size_t i, const nn::Tensor& z) {
                if (i % trajectory_every_ != 0) return;
                double acc = 0.0;
                for (std::size_t r = 0; r < z.rows(); ++r) {
                    double s = 0.0;
                    for (double v : z.row_span(r)) s += v * v;
                    acc += std::sqrt(s);
                }
                traj.add({double(i), double(i) / double(sample_steps_), acc / double(z.rows())});
            };
        }
        const auto res = ancestral_sample(model->denoiser(), model->schedule(), sc, n_samples_, d, hook);

        nlohmann::json header = {{"kind", "samples"}, {"config_hash", hash}, {"steps", sample_steps_}};
        write_container(out_path("samples.bin"), header, {{"x", "data", res.x}, {"z0", "data", res.z0}});

        std::vector<std::size_t> dims;
        if (info.run_config.contains("data_dims")) dims = info.run_config["data_dims"].get<std::vector<std::size_t>>();
        if (dims.size() == 2 && dims[0] * dims[1] == d) {
            const std::size_t h = dims[0], w = dims[1];
            const std::size_t cols = std::size_t(std::ceil(std::sqrt(double(n_samples_))));
            const std::size_t rows = (n_samples_ + cols - 1) / cols;
            std::vector<std::uint8_t> img(rows * h * cols * w, 0);
            for (std::size_t n = 0; n < n_samples_; ++n) {
                const std::size_t gr = n / cols, gc = n % cols;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x)
                        img[(gr * h + y) * cols * w + gc * w + x] = std::uint8_t(res.pixels[n][y * w + x]);
            }
            io::atomic_write(out_path("samples.pgm"), io::netpbm(cols * w, rows * h, 1, img, hash));
        } else {
            std::vector<std::string> names;
            for (std::size_t k = 0; k < d; ++k) names.push_back("x" + std::to_string(k));
            io::CsvTable t(hash, names);
            for (std::size_t n = 0; n < n_samples_; ++n) t.add(std::vector<double>(res.x.row_span(n).begin(), res.x.row_span(n).end()));
            t.write(out_path("samples.csv"));
        }
        if (trajectory_every_ > 0) traj.write(out_path("trajectory.csv"));
        out_ << "sampled " << n_samples_ << " chains with " << sample_steps_ << " steps into " << cfg_.out_dir << "\n";
        return kOk;
    }

    int cmd_heatmap() {
        std::unique_ptr<DiffEncModel> model;
        CheckpointInfo info;
        if (!checkpoint_.empty()) {
            model = load_model(info);
        }
        const Dataset ds = load_dataset(cfg_);
        if (!model) {
            model = std::make_unique<DiffEncModel>(cfg_.model_config(ds.item_dim()));
            model->init(cfg_.seed);
        }
        if (ds.item_dim() != model->config().data_dim) throw ConfigError("dataset dimension does not match model");
        if (heatmap_index_ >= ds.size()) throw ConfigError("--index beyond dataset size");
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        const auto x = ds.item(heatmap_index_);
        io::CsvTable t(hash, {"t", "s", "index", "value"});
        const bool image = ds.kind == DatasetKind::Image && ds.dims.size() == 2;
        for (double tt : heatmap_times_) {
            const double s = std::max(0.0, tt - heatmap_dt_);
            const auto map = change_heatmap(model->encoder(), &model->params(), x, model->schedule(), s, tt, 1, true);
            for (std::size_t i = 0; i < map.size(); ++i) t.add({tt, s, double(i), map[i]});
            if (image) {
                double lo = *std::min_element(map.begin(), map.end());
                double hi = *std::max_element(map.begin(), map.end());
                char name[64];
                std::snprintf(name, sizeof name, "heatmap_t%.3f.pgm", tt);
                io::atomic_write(out_path(name), io::netpbm(ds.dims[1], ds.dims[0], 1, io::to_gray(map, lo, hi), hash));
            }
        }
        t.write(out_path("heatmap.csv"));
        out_ << "wrote change maps for " << heatmap_times_.size() << " times into " << cfg_.out_dir << "\n";
        return kOk;
    }

    int cmd_schedule_report() {
        const LogLinearSchedule s(cfg_.lambda_max, cfg_.lambda_min);
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        io::CsvTable t(hash, {"t", "lambda", "alpha", "sigma", "snr"});
        for (std::size_t k = 0; k < schedule_points_; ++k) {
            const double tt = double(k) / double(schedule_points_ - 1);
            const auto p = s.eval(tt);
            t.add({p.t, p.lambda, p.alpha, p.sigma, p.snr});
        }
        t.write(out_path("schedule.csv"));
        out_ << "wrote " << schedule_points_ << " schedule points to " << out_path("schedule.csv").string() << "\n";
        return kOk;
    }

    int cmd_verify() {
        const LogLinearSchedule s(cfg_.lambda_max, cfg_.lambda_min);
        const std::string hash = config_hash(cfg_);
        write_sidecar();
        const auto reports = verify::run_suite(cfg_.seed, s);
        verify::print_reports(out_, reports);
        io::atomic_write(out_path("verify.csv"), verify::reports_csv_text(reports, hash));
        const bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; });
        out_ << (ok ? "all oracles passed\n" : "ORACLE FAILURES\n");
        return ok ? kOk : kVerifyFailed;
    }

    std::ostream& out_;
    std::ostream& err_;
    RunConfig cfg_;
    std::string checkpoint_;
    bool profile_ = false;
    std::size_t n_samples_ = 64;
    std::size_t sample_steps_ = 256;
    bool stochastic_decode_ = false;
    std::size_t trajectory_every_ = 0;
    std::size_t heatmap_index_ = 0;
    std::vector<double> heatmap_times_{0.1, 0.3, 0.5, 0.7, 0.9};
    double heatmap_dt_ = 0.01;
    std::size_t schedule_points_ = 101;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Cli cli(out, err);
    return cli.run(argc, argv);
}

}  // namespace diffenc::cli
