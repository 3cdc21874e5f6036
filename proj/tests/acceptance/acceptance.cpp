// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.
// Each criterion also has a wall-clock budget that counts toward its verdict.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "diffenc/diffenc.hpp"

using namespace diffenc;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Outcome&)> body;
};

// ---- 1 ------------------------------------------------------------------------------------

void gaussian_identities(Outcome& o) {
    const auto m = verify::marginal_consistency(1000, 101);
    const auto r = verify::reverse_consistency(1000, 102);
    o.require(m.pass, "marginal consistency algebraic");
    o.require(r.pass, "reverse consistency algebraic");
    const auto mc = verify::consistency_monte_carlo(1000000, 103);
    for (const auto& rep : mc) o.require(rep.pass, rep.name);
    o.detail << "alg max err " << m.measured << "/" << r.measured << "; MC max |dev|/SE " << mc[0].measured << "/"
             << mc[1].measured;
}

// ---- 2 ------------------------------------------------------------------------------------

void kl_correctness(Outcome& o) {
    Rng rng(202);
    double worst_se = 0.0;
    int fails = 0;
    for (int k = 0; k < 50; ++k) {
        const std::size_t d = 1 + rng.below(16);
        const double w = 0.25 * std::pow(16.0, rng.uniform());
        GaussianParams q, p;
        q.var = 0.1 + 2.0 * rng.uniform();
        p.var = q.var / w;
        for (std::size_t i = 0; i < d; ++i) {
            q.mean.push_back(rng.normal());
            p.mean.push_back(q.mean.back() + 0.7 * std::sqrt(q.var) * rng.normal());
        }
        const auto rep = verify::mc_kl_oracle(q, p, 200000, rng());
        worst_se = std::max(worst_se, std::fabs(rep.measured - rep.expected) / (rep.tolerance / 4.0));
        if (!rep.pass) ++fails;
    }
    o.require(fails == 0, std::to_string(fails) + " MC cases outside 4 SE");
    o.require(weighting_penalty(1.0, 7) == 0.0, "g(1) == 0");
    bool positive = true;
    for (int k = 0; k <= 600; ++k) {
        const double w = std::pow(10.0, -3.0 + 6.0 * k / 600.0);
        if (w != 1.0 && !(weighting_penalty(w, 1) > 0.0)) positive = false;
    }
    o.require(positive, "g(w) > 0 for w != 1");
    o.detail << "50 cases, max |MC - closed|/SE " << worst_se << "; g(1)=" << weighting_penalty(1.0, 7);
}

// ---- 3 ------------------------------------------------------------------------------------

void optimal_variance(Outcome& o) {
    Rng rng(303);
    double worst_grid = -std::numeric_limits<double>::infinity(), worst_rel = 0.0;
    for (int k = 0; k < 25; ++k) {
        const double s2q = std::pow(10.0, -5.0 + 5.0 * rng.uniform());
        const std::size_t d = 1 + rng.below(64);
        const double gap = s2q * double(d) * std::pow(10.0, -3.0 + 4.0 * rng.uniform());
        const auto reps = verify::optimal_variance_check(s2q, gap, d);
        for (const auto& r : reps) o.require(r.pass, r.name);
        worst_grid = std::max(worst_grid, reps[0].measured);
        worst_rel = std::max(worst_rel, reps[1].measured);
    }
    o.detail << "25 cases; max KL(opt) - min grid KL " << worst_grid << "; max relative derivative " << worst_rel;
}

// ---- 4 ------------------------------------------------------------------------------------

void limit_convergence(Outcome& o) {
    const auto oracle = verify::gaussian_score_oracle({0.5, -0.3}, 0.2, EncoderKind::NonTrainable);
    verify::GaussianOracleDenoiser den(oracle);
    const Encoder enc = Encoder::non_trainable();
    const LossModel lm{LogLinearSchedule{}, den, enc, nullptr, true};
    const std::vector<double> x = {0.8, -0.6}, eps = {0.3, -1.1};
    const auto r = verify::limit_convergence(lm, x, eps, {16, 32, 64, 128, 256, 512});
    for (const auto& rep : r.reports) o.require(rep.pass, rep.name);
    o.detail << "slope |L_T - L_inf| " << r.slope << "; w=2 penalty slope " << r.slope_fixed_w2
             << "; optimal-w penalty slope " << r.slope_optimal;
}

// ---- 5 ------------------------------------------------------------------------------------

ModelConfig small_config(EncoderKind kind) {
    ModelConfig c;
    c.encoder = kind;
    c.denoiser_hidden = 64;
    c.encoder_hidden = 32;
    return c;
}

void parameterization(Outcome& o) {
    DiffEncModel nt(small_config(EncoderKind::NonTrainable));
    DiffEncModel tr(small_config(EncoderKind::Trainable));
    nt.init(55);
    tr.init(55);
    for (auto* m : {&nt, &tr}) {
        Rng r(5);
        m->denoiser_net().randomize_output(m->params(), r, 1.0);
    }
    Rng rng(505);
    bool bit_equal = true;
    double worst_xv = 0.0, worst_link = 0.0, worst_t0 = 0.0;
    for (int k = 0; k < 200; ++k) {
        const std::vector<double> x = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
        const std::vector<double> e = {rng.normal(), rng.normal()};
        const double t = rng.uniform();
        const double a = continuous_vloss(tr.view(), x, t, e);
        const double b = continuous_vloss(nt.view(), x, t, e);
        if (std::memcmp(&a, &b, sizeof a) != 0) bit_equal = false;
    }
    // x- versus v-form and the x/eps link on fully random networks
    DiffEncModel rnd(small_config(EncoderKind::Trainable));
    rnd.init(56);
    Rng r2(6);
    rnd.denoiser_net().randomize_output(rnd.params(), r2, 1.0);
    rnd.encoder().inner()->randomize_output(rnd.params(), r2, 0.5);
    for (auto* m : {&nt, &tr, &rnd}) {
        for (bool ct : {true, false}) {
            for (int k = 0; k < 50; ++k) {
                const std::vector<double> x = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
                const std::vector<double> e = {rng.normal(), rng.normal()};
                const auto d = integrand_detail(m->view(ct), x, 0.01 + 0.98 * rng.uniform(), e);
                worst_xv = std::max(worst_xv, std::fabs(d.xloss - d.vloss) / std::max(std::fabs(d.vloss), 1e-300));
                for (std::size_t i = 0; i < 2; ++i)
                    worst_link = std::max(worst_link, std::fabs(d.point.alpha * d.x_hat[i] + d.point.sigma * d.eps_hat[i] - d.z[i]));
            }
        }
    }
    // t -> 0: the integrand approaches the eps objective
    for (auto* m : {&nt, &tr}) {
        for (int k = 0; k < 50; ++k) {
            const std::vector<double> x = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
            const std::vector<double> e = {rng.normal(), rng.normal()};
            const auto d = integrand_detail(m->view(), x, 1e-4, e);
            worst_t0 = std::max(worst_t0, std::fabs(d.vloss - d.eps_loss) / d.eps_loss);
        }
    }
    double random_encoder_t0 = 0.0;
    for (int k = 0; k < 50; ++k) {
        const std::vector<double> x = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
        const std::vector<double> e = {rng.normal(), rng.normal()};
        const auto d = integrand_detail(rnd.view(), x, 1e-4, e);
        random_encoder_t0 = std::max(random_encoder_t0, std::fabs(d.vloss - d.eps_loss) / d.eps_loss);
    }
    o.require(bit_equal, "trainable-at-init loss bit-equal to non-trainable loss");
    o.require(worst_xv < 1e-9, "x-form equals v-form within 1e-9 relative");
    o.require(worst_link < 1e-9, "alpha x_hat + sigma eps_hat = z within 1e-9");
    o.require(worst_t0 < 1e-4, "t->0 residual < 1e-4 of the eps objective");
    o.detail << "init bit-equal " << (bit_equal ? "yes" : "no") << "; max rel |x-v| " << worst_xv << "; max |a x + s e - z| "
             << worst_link << "; t=1e-4 residual (random denoiser, nt / trainable-at-init) " << worst_t0
             << "; info: fully random encoder net " << random_encoder_t0;
}

// ---- 6 ------------------------------------------------------------------------------------

void gradients(Outcome& o) {
    const auto a = verify::fd_gradient_suite(EncoderKind::NonTrainable, 200, 601);
    const auto b = verify::fd_gradient_suite(EncoderKind::Trainable, 200, 602);
    o.require(a.report.pass, "non-trainable loss gradient");
    o.require(b.report.pass, "trainable loss gradient");
    o.require(a.probes >= 200 && b.probes >= 200, ">= 200 probes");
    o.require(b.encoder_probes > 0, "dy/dlambda path probed");
    o.detail << "max rel err nt " << a.max_rel_error << " (" << a.probes << " probes); trainable " << b.max_rel_error
             << " (" << b.probes << " probes, " << b.encoder_probes << " on encoder parameters, max "
             << b.max_rel_error_encoder << ")";
}

// ---- 7 ------------------------------------------------------------------------------------

void oracle_sampling(Outcome& o) {
    const auto r = verify::oracle_sampling({0.5, -0.3}, 0.2, 256, 100000, VarianceMode::OptimalFromEstimate, 707);
    for (const auto& rep : r.reports) o.require(rep.pass, rep.name);
    o.detail << "mean (" << r.mean[0] << ", " << r.mean[1] << ") var (" << r.var[0] << ", " << r.var[1] << ") cov "
             << r.cov01 << "; denoiser calls " << r.denoiser_calls << ", encoder calls " << r.encoder_calls;
    // sigma_P = sigma_Q for comparison only
    const auto q = verify::oracle_sampling({0.5, -0.3}, 0.2, 256, 100000, VarianceMode::SigmaQ, 707);
    o.detail << "; info: sigma_P = sigma_Q gives var (" << q.var[0] << ", " << q.var[1] << ")";
}

// ---- 8 ------------------------------------------------------------------------------------

void desk_training(Outcome& o) {
    const Dataset ds = synth_gaussian2d(4096, {0.5, -0.3}, 1e-4, 808);
    const Dataset eval_set = synth_gaussian2d(256, {0.5, -0.3}, 1e-4, 809);
    double latent_identity = 0.0, latent_trainable = 0.0;
    for (EncoderKind kind : {EncoderKind::Identity, EncoderKind::NonTrainable, EncoderKind::Trainable}) {
        ModelConfig cfg;
        cfg.encoder = kind;
        cfg.counterterm = kind != EncoderKind::Identity;
        DiffEncModel model(cfg);
        model.init(800);
        const auto before = evaluate_dataset(model.view(), eval_set, 64, 810);
        TrainConfig tc;
        tc.steps = 20000;
        tc.batch = 64;
        tc.log_every = 0;
        tc.seed = 801;
        Trainer(model, ds, tc).run();
        const auto after = evaluate_dataset(model.view(), eval_set, 64, 810);
        const double reduction = 1.0 - after.total_nats / before.total_nats;
        o.require(reduction >= 0.5, std::string(to_string(kind)) + " total loss reduced by >= 50%");
        if (kind == EncoderKind::Identity) latent_identity = after.latent;
        if (kind == EncoderKind::Trainable) latent_trainable = after.latent;
        o.detail << to_string(kind) << ": " << before.total_nats << " -> " << after.total_nats << " nats ("
                 << 100.0 * reduction << "% less; diffusion " << after.diffusion << ", latent " << after.latent
                 << ", reconstruction " << after.reconstruction << "); ";
    }
    o.require(latent_trainable <= latent_identity, "trainable latent <= identity latent");
    o.detail << "latent trainable " << latent_trainable << " vs identity " << latent_identity;
}

// ---- 9 ------------------------------------------------------------------------------------

/// KL between diagonal Gaussians written out per coordinate.
double generic_gaussian_kl(const std::vector<double>& mq, const std::vector<double>& vq, const std::vector<double>& mp,
                           const std::vector<double>& vp) {
    double kl = 0.0;
    for (std::size_t i = 0; i < mq.size(); ++i)
        kl += 0.5 * (std::log(vp[i] / vq[i]) + (vq[i] + (mq[i] - mp[i]) * (mq[i] - mp[i])) / vp[i] - 1.0);
    return kl;
}

void closed_forms(Outcome& o) {
    const LogLinearSchedule sch;
    const SchedulePoint p0 = sch.eval(0.0);
    Rng rng(909);
    double worst_norm = 0.0;
    for (int k = 0; k < 2000; ++k) {
        const double z = 1.2 * (2.0 * rng.uniform() - 1.0);
        const auto lp = pixel_log_probs(z, p0);
        double s = 0.0;
        for (double l : lp) s += std::exp(l);
        worst_norm = std::max(worst_norm, std::fabs(s - 1.0));
    }
    // also at a wide sigma_0 where every bin carries mass
    const SchedulePoint wide = point_from_lambda(-2.0);
    for (int k = 0; k < 200; ++k) {
        const auto lp = pixel_log_probs(rng.normal(), wide);
        double s = 0.0;
        for (double l : lp) s += std::exp(l);
        worst_norm = std::max(worst_norm, std::fabs(s - 1.0));
    }

    DiffEncModel tr(small_config(EncoderKind::Trainable));
    tr.init(90);
    Rng r2(91);
    tr.encoder().inner()->randomize_output(tr.params(), r2, 0.5);
    DiffEncModel nt(small_config(EncoderKind::NonTrainable));
    DiffEncModel id(small_config(EncoderKind::Identity));
    nt.init(90);
    id.init(90);
    double worst_latent = 0.0;
    const SchedulePoint p1 = sch.eval(1.0);
    for (auto* m : {&tr, &nt, &id}) {
        for (int k = 0; k < 200; ++k) {
            const std::vector<double> x = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
            const auto x1 = m->encoder().encode(&m->params(), x, p1);
            std::vector<double> mq = {p1.alpha * x1[0], p1.alpha * x1[1]};
            const double ref = generic_gaussian_kl(mq, {p1.sigma2, p1.sigma2}, {0.0, 0.0}, {1.0, 1.0});
            worst_latent = std::max(worst_latent, std::fabs(latent_loss(m->view(), x) - ref));
        }
    }
    o.require(worst_norm <= 1e-12, "categoricals normalize within 1e-12");
    o.require(worst_latent <= 1e-10, "latent loss matches generic KL within 1e-10");
    o.detail << "max |sum p - 1| " << worst_norm << "; max |latent - generic KL| " << worst_latent;
}

// ---- 10 -----------------------------------------------------------------------------------

void sde_consistency(Outcome& o) {
    const LogLinearSchedule sch;
    DiffEncModel tr(small_config(EncoderKind::Trainable));
    tr.init(100);
    Rng r(101);
    tr.encoder().inner()->randomize_output(tr.params(), r, 0.5);
    DiffEncModel nt(small_config(EncoderKind::NonTrainable));
    nt.init(100);
    const std::vector<double> x = {0.4, -0.7}, zs = {0.9, -0.2};
    const double s = 0.3, dt = 2e-3;
    for (auto* m : {&nt, &tr}) {
        auto discrepancy = [&](double h) {
            const SchedulePoint ps = sch.eval(s), pt = sch.eval(s + h);
            const auto xs = m->encoder().encode(&m->params(), x, ps);
            const auto xt = m->encoder().encode(&m->params(), x, pt);
            const auto exact = forward_transition(zs, xt, xs, ps, pt);
            const auto em = sde_forward_step(zs, x, s, h, m->encoder(), &m->params(), sch);
            return std::sqrt(squared_distance(exact.mean, em.mean));
        };
        const double e1 = discrepancy(dt), e2 = discrepancy(dt / 2), e3 = discrepancy(dt / 4);
        const double ratio = e1 / e2;
        const char* name = to_string(m->config().encoder);
        o.require(std::fabs(ratio - 4.0) <= 0.5, std::string(name) + " Richardson ratio 4 +- 0.5");
        o.detail << name << ": |mean gap| at dt=" << dt << ", " << dt / 2 << ", " << dt / 4 << ": " << e1 << ", " << e2
                 << ", " << e3 << ", ratio " << ratio << " then " << e2 / e3 << "; ";
    }
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "Gaussian-algebra identities", 60, gaussian_identities},
        {2, "KL correctness", 120, kl_correctness},
        {3, "optimal generative variance", 60, optimal_variance},
        {4, "continuous-limit convergence", 300, limit_convergence},
        {5, "parameterization identities", 60, parameterization},
        {6, "gradient correctness", 180, gradients},
        {7, "oracle sampling", 300, oracle_sampling},
        {8, "desk-scale training", 1200, desk_training},
        {9, "reconstruction/latent closed forms", 60, closed_forms},
        {10, "SDE consistency", 60, sde_consistency},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.body(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        o.require(secs <= c.budget_s, "runtime budget " + std::to_string(int(c.budget_s)) + " s");
        std::printf("[%s] criterion %d: %s (%.1f s) -- %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                    o.detail.str().c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
