#include <gtest/gtest.h>

#include <cmath>

#include "diffenc/model.hpp"
#include "diffenc/nn.hpp"
#include "diffenc/train.hpp"

using namespace diffenc;
using namespace diffenc::nn;

TEST(Graph, QuadraticLossGradient) {
    ParamStore ps;
    ps.add("W", Tensor(3, 2, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6}));
    const Tensor x(1, 3, {1.0, 2.0, -1.0}), y(1, 2, {0.5, -0.5});
    Graph g;
    Var r = g.sub(g.matmul(g.constant(x), g.parameter("W", ps.get("W"))), g.constant(y));
    Var loss = g.row_sum(g.square(r));
    const auto grads = grad(g, loss, ps);
    const Tensor& gw = grads.grads.at("W");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(gw(i, j), 2.0 * r.value()(0, j) * x(0, i), 1e-15);
    EXPECT_TRUE(grads.unused.empty());
}

TEST(Graph, UnusedParameterIsReportedWithZeroGradient) {
    ParamStore ps;
    ps.add("a", Tensor(1, 1, {2.0}));
    ps.add("b", Tensor(1, 1, {3.0}));
    Graph g;
    Var loss = g.square(g.parameter("a", ps.get("a")));
    const auto grads = grad(g, loss, ps);
    EXPECT_DOUBLE_EQ(grads.grads.at("a").data[0], 4.0);
    EXPECT_EQ(grads.grads.at("b").data[0], 0.0);
    ASSERT_EQ(grads.unused.size(), 1u);
    EXPECT_EQ(grads.unused[0], "b");
}

TEST(Graph, SharedParameterAccumulates) {
    ParamStore ps;
    ps.add("a", Tensor(1, 1, {1.5}));
    Graph g;
    Var a1 = g.parameter("a", ps.get("a"));
    Var a2 = g.parameter("a", ps.get("a"));
    const auto grads = grad(g, g.add(g.scale(a1, 2.0), g.scale(a2, 3.0)), ps);
    EXPECT_DOUBLE_EQ(grads.grads.at("a").data[0], 5.0);
}

TEST(Graph, OperationGradientsAgainstDifferences) {
    Rng rng(1);
    ParamStore ps;
    Tensor a(2, 3), b(3, 3), bias(1, 3);
    for (double& v : a.data) v = rng.normal();
    for (double& v : b.data) v = rng.normal();
    for (double& v : bias.data) v = rng.normal();
    ps.add("a", a);
    ps.add("b", b);
    ps.add("bias", bias);
    auto build = [&](Graph& g, const ParamStore& p) {
        Var A = g.parameter("a", p.get("a"));
        Var h = g.silu(g.add_bias(g.matmul(A, g.parameter("b", p.get("b"))), g.parameter("bias", p.get("bias"))));
        Var c = g.concat_cols(h, g.row_scale(A, {0.5, -2.0}));
        return g.mean(g.mul(c, c));
    };
    Graph g;
    const auto grads = grad(g, build(g, ps), ps);
    for (const auto& [name, t] : ps.params()) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            ParamStore hi = ps, lo = ps;
            hi.get(name).data[i] += 1e-6;
            lo.get(name).data[i] -= 1e-6;
            Graph gh, gl;
            const double fd = (build(gh, hi).value().data[0] - build(gl, lo).value().data[0]) / 2e-6;
            EXPECT_NEAR(grads.grads.at(name).data[i], fd, 1e-8) << name << "[" << i << "]";
        }
    }
}

TEST(Graph, BackwardNeedsScalar) {
    Graph g;
    Var v = g.constant(Tensor(2, 1));
    EXPECT_THROW(g.backward(v), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
    ParamStore ps;
    ps.add("w", Tensor(2, 2, {1.0, 2.0, 3.0, 4.0}));
    const Tensor before = ps.get("w");
    GradientSet gs;
    gs.grads.emplace("w", Tensor(2, 2));
    optimizer_step(ps, gs, AdamConfig{});
    EXPECT_EQ(ps.get("w"), before);
    EXPECT_EQ(ps.step, 1);
}

TEST(Adam, FirstStepHandComputation) {
    ParamStore ps;
    ps.add("w", Tensor(1, 3, {0.5, -0.5, 1.0}));
    GradientSet gs;
    gs.grads.emplace("w", Tensor(1, 3, {0.2, -3.0, 1e-9}));
    AdamConfig cfg;
    cfg.lr = 0.01;
    optimizer_step(ps, gs, cfg);
    // bias-corrected moments after one step are g and g^2
    const double g[3] = {0.2, -3.0, 1e-9}, w0[3] = {0.5, -0.5, 1.0};
    for (int i = 0; i < 3; ++i)
        EXPECT_NEAR(ps.get("w").data[i], w0[i] - 0.01 * g[i] / (std::fabs(g[i]) + 1e-8), 1e-15);
}

TEST(Adam, SecondStepHandComputation) {
    ParamStore ps;
    ps.add("w", Tensor(1, 1, {0.0}));
    AdamConfig cfg;
    cfg.lr = 0.1;
    for (double gv : {1.0, -2.0}) {
        GradientSet gs;
        gs.grads.emplace("w", Tensor(1, 1, {gv}));
        optimizer_step(ps, gs, cfg);
    }
    const double m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0, v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    const double expected = -0.1 * 1.0 / (1.0 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(ps.get("w").data[0], expected, 1e-14);
}

TEST(Adam, NonFiniteGradientRejectsStep) {
    ParamStore ps;
    ps.add("w", Tensor(1, 2, {1.0, 2.0}));
    GradientSet gs;
    gs.grads.emplace("w", Tensor(1, 2, {0.1, NAN}));
    EXPECT_THROW(optimizer_step(ps, gs, AdamConfig{}), NumericalError);
    EXPECT_EQ(ps.get("w").data[0], 1.0);
    EXPECT_EQ(ps.step, 0);
    EXPECT_TRUE(ps.first_moment.empty());
}

TEST(Embedding, SizeAndRange) {
    const auto e = lambda_embedding(3.7, 8);
    ASSERT_EQ(e.size(), 16u);
    for (double v : e) EXPECT_LE(std::fabs(v), 1.0);
}

namespace {

ModelConfig small() {
    ModelConfig c;
    c.denoiser_hidden = 24;
    c.encoder = EncoderKind::NonTrainable;
    return c;
}

}  // namespace

TEST(Denoiser, ZeroOutputAtInit) {
    DiffEncModel m(small());
    m.init(2);
    const Tensor z(3, 2, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    const std::vector<double> lam = {1.0, 2.0, 3.0};
    const Tensor v = m.denoiser().predict_v(z, lam);
    for (double x : v.data) EXPECT_EQ(x, 0.0);
    std::vector<SchedulePoint> pts;
    for (double l : lam) pts.push_back(point_from_lambda(l));
    const Tensor xh = x_from_v(z, v, pts);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(xh(r, c), pts[r].alpha * z(r, c));
}

TEST(Denoiser, BatchMatchesSingleEvaluations) {
    DiffEncModel m(small());
    m.init(3);
    Rng rng(4);
    m.denoiser_net().randomize_output(m.params(), rng, 1.0);
    Tensor z(16, 2);
    std::vector<double> lam(16);
    for (double& v : z.data) v = rng.normal();
    for (double& l : lam) l = 18.3 * rng.uniform() - 5.0;
    const Tensor batch = m.denoiser().predict_v(z, lam);
    for (std::size_t r = 0; r < 16; ++r) {
        const double l[1] = {lam[r]};
        const Tensor one = m.denoiser().predict_v(Tensor::row(z.row_span(r)), l);
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(batch(r, c), one.data[c], 1e-13);
    }
}

TEST(Denoiser, XAndEpsPredictionsReconstructLatent) {
    DiffEncModel m(small());
    m.init(5);
    Rng rng(6);
    m.denoiser_net().randomize_output(m.params(), rng, 1.0);
    Tensor z(8, 2);
    std::vector<double> lam(8);
    std::vector<SchedulePoint> pts;
    for (double& v : z.data) v = rng.normal();
    for (double& l : lam) {
        l = 18.3 * rng.uniform() - 5.0;
        pts.push_back(point_from_lambda(l));
    }
    const Tensor v = m.denoiser().predict_v(z, lam);
    const Tensor xh = x_from_v(z, v, pts), eh = eps_from_v(z, v, pts);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(pts[r].alpha * xh(r, c) + pts[r].sigma * eh(r, c), z(r, c), 1e-12);
}

TEST(Denoiser, CountsCalls) {
    DiffEncModel m(small());
    m.init(7);
    m.denoiser().reset_calls();
    const double l[1] = {0.0};
    m.denoiser().predict_v(Tensor(1, 2), l);
    m.denoiser().predict_v(Tensor(1, 2), l);
    EXPECT_EQ(m.denoiser().calls(), 2u);
}

TEST(Denoiser, InputValidation) {
    DiffEncModel m(small());
    m.init(8);
    const double l[1] = {0.0};
    EXPECT_THROW(m.denoiser().predict_v(Tensor(1, 3), l), ConfigError);
    EXPECT_THROW(m.denoiser().predict_v(Tensor(2, 2), l), ConfigError);
}

TEST(Model, InitIsSeedDeterministicAndIndependentOfEncoder) {
    ModelConfig a = small(), b = small();
    b.encoder = EncoderKind::Trainable;
    DiffEncModel ma(a), mb(b), mc(a);
    ma.init(9);
    mb.init(9);
    mc.init(9);
    EXPECT_EQ(ma.params(), mc.params());
    for (const auto& [name, t] : ma.params().params()) EXPECT_EQ(mb.params().get(name), t) << name;
    EXPECT_GT(mb.params().parameter_count(), ma.params().parameter_count());
}

TEST(Model, ConfigJsonRoundTrip) {
    ModelConfig c = small();
    c.encoder = EncoderKind::Trainable;
    c.fd_step = 0.02;
    c.counterterm = false;
    const nlohmann::json j = c;
    const ModelConfig back = j.get<ModelConfig>();
    EXPECT_EQ(back.encoder, c.encoder);
    EXPECT_EQ(back.fd_step, c.fd_step);
    EXPECT_EQ(back.counterterm, c.counterterm);
    EXPECT_EQ(back.denoiser_hidden, c.denoiser_hidden);
}
