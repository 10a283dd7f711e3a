#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dbmif/generator.hpp"

using namespace dbmif;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double lrelu(double v, double leak) { return v >= 0.0 ? v : leak * v; }

Tensor identity_act(const Tensor& x) { return x; }

Linear hand_linear(int in, int out, std::vector<double> w, std::vector<double> b) {
    Linear l;
    l.in_dim = in;
    l.out_dim = out;
    l.weight = Tensor::from_values({out, in}, std::move(w), true);
    l.bias = Tensor::from_values({out}, std::move(b), true);
    return l;
}

Conv1d hand_pointwise(int ch, std::vector<double> w, std::vector<double> b) {
    Conv1d c;
    c.in_ch = ch;
    c.out_ch = ch;
    c.kernel = 1;
    c.direction = Tensor::from_values({ch, ch, 1}, std::move(w), true);
    c.bias = Tensor::from_values({ch}, std::move(b), true);
    return c;
}

}  // namespace

TEST_CASE("config validation and width scaling") {
    GeneratorConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    GeneratorConfig tiny = cfg.scaled(4);
    CHECK(tiny.widths == std::vector<int>{8, 16, 32, 64});
    CHECK(tiny.diaf_iters == cfg.diaf_iters);
    CHECK_NOTHROW(tiny.validate());

    CHECK_THROWS_AS(cfg.scaled(0), config_error);
    CHECK_THROWS_AS(cfg.scaled(3), config_error);  // 32 is not divisible by 3
    // Dividing by 16 leaves the first width below the attention reduction,
    // which the validation pass rejects.
    CHECK_THROWS_AS(cfg.scaled(16).validate(), config_error);

    GeneratorConfig bad = cfg;
    bad.widths = {32, 64, 64, 256};
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad.widths = {32, 64, 128};
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.dbi_max_iters = 1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.dbi_tol = -1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.diaf_iters = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("channel attention outputs one weight per channel inside (0,1)") {
    std::mt19937_64 rng(5);
    ChannelAttention cam = make_channel_attention(8, 4, 0.1, rng);
    Tensor x = Tensor::randn({8, 12}, rng, 3.0);
    Tensor w = cam.forward(x);
    REQUIRE(w.shape() == Shape{8, 1});
    for (double v : w.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK_THROWS_AS(make_channel_attention(2, 4, 0.1, rng), config_error);
}

TEST_CASE("channel attention matches a hand-evaluated pool/squeeze/expand chain") {
    PrecisionGuard wide(Precision::f64);
    ChannelAttention cam;
    cam.leak = 0.1;
    cam.squeeze = hand_linear(2, 1, {0.5, -1.0}, {0.25});
    cam.expand = hand_linear(1, 2, {2.0, -3.0}, {0.1, -0.2});
    Tensor x = Tensor::from_values({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.5, 0.5});
    Tensor w = cam.forward(x);
    const double p0 = 2.0, p1 = 0.0;  // row means
    const double h = lrelu(0.5 * p0 - 1.0 * p1 + 0.25, 0.1);
    CHECK(w.values()[0] == doctest::Approx(sig(2.0 * h + 0.1)).epsilon(1e-9));
    CHECK(w.values()[1] == doctest::Approx(sig(-3.0 * h - 0.2)).epsilon(1e-9));
}

TEST_CASE("fusion of identical inputs returns them unchanged") {
    std::mt19937_64 rng(8);
    IterativeFusion f = make_iterative_fusion(8, 4, 3, 0.1, rng);
    Tensor x = Tensor::randn({8, 6}, rng);
    IterativeFusion::Result r = f.forward(x, x);
    REQUIRE(r.weights.size() == 3);
    // Convex mixing of equal inputs is the identity, bit for bit.
    CHECK(r.fused.values() == x.values());
    for (const Tensor& w : r.weights) {
        REQUIRE(w.shape() == Shape{8, 1});
        for (double v : w.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("saturating the attention picks the first modality") {
    std::mt19937_64 rng(12);
    IterativeFusion f = make_iterative_fusion(8, 4, 3, 0.1, rng);
    // A huge expand bias drives every sigmoid to 1.
    std::vector<double> b(8, 500.0);
    f.cam.expand.bias = Tensor::from_values({8}, std::move(b), true);
    Tensor xa = Tensor::randn({8, 5}, rng);
    Tensor xb = Tensor::randn({8, 5}, rng);
    IterativeFusion::Result r = f.forward(xa, xb);
    for (const Tensor& w : r.weights)
        for (double v : w.values()) CHECK(v == 1.0);
    for (size_t i = 0; i < xa.values().size(); ++i)
        CHECK(r.fused.values()[i] == doctest::Approx(xa.values()[i]).epsilon(1e-6));
}

TEST_CASE("fusion follows the unrolled two-round oracle") {
    PrecisionGuard wide(Precision::f64);
    IterativeFusion f;
    f.iters = 2;
    f.cam.leak = 0.1;
    f.cam.squeeze = hand_linear(2, 1, {0.3, -0.7}, {0.05});
    f.cam.expand = hand_linear(1, 2, {1.5, -0.8}, {0.2, -0.1});
    Tensor xa = Tensor::from_values({2, 2}, {1.0, -0.5, 0.25, 2.0});
    Tensor xb = Tensor::from_values({2, 2}, {-1.0, 0.5, 1.0, 1.0});
    IterativeFusion::Result r = f.forward(xa, xb);

    // Unrolled: x starts at xa + xb, each round recomputes per-channel
    // weights from the current iterate and remixes the originals.
    std::vector<double> x(4);
    for (int i = 0; i < 4; ++i) x[static_cast<size_t>(i)] = xa.values()[static_cast<size_t>(i)] + xb.values()[static_cast<size_t>(i)];
    std::vector<double> w(2);
    for (int k = 0; k < 2; ++k) {
        const double p0 = (x[0] + x[1]) / 2.0, p1 = (x[2] + x[3]) / 2.0;
        const double h = lrelu(0.3 * p0 - 0.7 * p1 + 0.05, 0.1);
        w[0] = sig(1.5 * h + 0.2);
        w[1] = sig(-0.8 * h - 0.1);
        for (int i = 0; i < 4; ++i) {
            const double wi = w[static_cast<size_t>(i / 2)];
            x[static_cast<size_t>(i)] = wi * xa.values()[static_cast<size_t>(i)] +
                                        (1.0 - wi) * xb.values()[static_cast<size_t>(i)];
        }
    }
    for (int i = 0; i < 4; ++i)
        CHECK(r.fused.values()[static_cast<size_t>(i)] ==
              doctest::Approx(x[static_cast<size_t>(i)]).epsilon(1e-6));
    CHECK(r.weights.back().values()[0] == doctest::Approx(w[0]).epsilon(1e-6));
    CHECK(r.weights.back().values()[1] == doctest::Approx(w[1]).epsilon(1e-6));

    Tensor short_b = Tensor::from_values({2, 1}, {0.0, 0.0});
    CHECK_THROWS_AS(f.forward(xa, short_b), config_error);
}

TEST_CASE("fusion output stays between per-channel constant inputs") {
    std::mt19937_64 rng(77);
    IterativeFusion f = make_iterative_fusion(4, 4, 3, 0.1, rng);
    Tensor xa = Tensor::from_values({4, 3}, {2, 2, 2, -1, -1, -1, 0.5, 0.5, 0.5, 3, 3, 3});
    Tensor xb = Tensor::from_values({4, 3}, {1, 1, 1, 4, 4, 4, 0.5, 0.5, 0.5, -2, -2, -2});
    IterativeFusion::Result r = f.forward(xa, xb);
    for (size_t i = 0; i < r.fused.values().size(); ++i) {
        const double lo = std::min(xa.values()[i], xb.values()[i]);
        const double hi = std::max(xa.values()[i], xb.values()[i]);
        CHECK(r.fused.values()[i] >= lo - 1e-9);
        CHECK(r.fused.values()[i] <= hi + 1e-9);
    }
}

TEST_CASE("cross gating with a silent fusion stream") {
    std::mt19937_64 rng(30);
    CrossGate g = make_cross_gate(4, rng);  // fresh biases are zero
    Tensor xa = Tensor::randn({4, 6}, rng);
    Tensor xb = Tensor::randn({4, 6}, rng);
    Tensor xf = Tensor::zeros({4, 6});
    CrossGate::Result r = g.forward(xa, xb, xf);
    // Zero fusion input leaves the gate convs at their zero bias, so both
    // unimodal streams are scaled by exactly sigmoid(0) = 0.5, and the gated
    // fusion content is zero.
    Tensor va = g.val_a.forward(xa);
    Tensor vb = g.val_b.forward(xb);
    for (size_t i = 0; i < va.values().size(); ++i) {
        CHECK(r.a.values()[i] == doctest::Approx(0.5 * va.values()[i]).epsilon(1e-6));
        CHECK(r.b.values()[i] == doctest::Approx(0.5 * vb.values()[i]).epsilon(1e-6));
        CHECK(r.f.values()[i] == 0.0);
    }
}

TEST_CASE("cross gating doubles the feedback when both sides agree") {
    std::mt19937_64 rng(31);
    CrossGate g = make_cross_gate(4, rng);
    // Tie the b-side return path to the a-side one.
    g.gate_bf = g.gate_af;
    g.val_bf = g.val_af;
    Tensor xa = Tensor::randn({4, 5}, rng);
    Tensor xf = Tensor::randn({4, 5}, rng);
    CrossGate::Result r = g.forward(xa, xa, xf);
    Tensor half = mul(sigmoid(g.gate_af.forward(xa)), g.val_af.forward(xf));
    for (size_t i = 0; i < half.values().size(); ++i)
        CHECK(r.f.values()[i] == doctest::Approx(2.0 * half.values()[i]).epsilon(1e-6));

    Tensor bad = Tensor::zeros({4, 4});
    CHECK_THROWS_AS(g.forward(xa, xa, bad), config_error);
}

TEST_CASE("cross gating matches an elementwise oracle on a toy pair") {
    PrecisionGuard wide(Precision::f64);
    CrossGate g;
    g.gate_fa = hand_pointwise(2, {0.5, -0.3, 0.2, 0.4}, {0.1, -0.1});
    g.val_a = hand_pointwise(2, {1.0, 0.5, -0.5, 1.0}, {0.0, 0.2});
    g.gate_fb = hand_pointwise(2, {-0.2, 0.6, 0.3, -0.4}, {0.05, 0.0});
    g.val_b = hand_pointwise(2, {0.7, -0.1, 0.2, 0.9}, {-0.1, 0.1});
    g.gate_af = hand_pointwise(2, {0.4, 0.4, -0.6, 0.1}, {0.0, 0.3});
    g.val_af = hand_pointwise(2, {1.2, 0.0, 0.0, 1.2}, {0.1, -0.1});
    g.gate_bf = hand_pointwise(2, {-0.5, 0.2, 0.8, -0.3}, {0.2, 0.0});
    g.val_bf = hand_pointwise(2, {0.9, -0.2, 0.3, 0.6}, {0.0, 0.0});

    Tensor xa = Tensor::from_values({2, 3}, {1.0, -0.5, 0.25, 0.5, 2.0, -1.0});
    Tensor xb = Tensor::from_values({2, 3}, {-1.0, 0.75, 0.5, 1.5, -0.25, 0.0});
    Tensor xf = Tensor::from_values({2, 3}, {0.5, 0.5, -0.5, -1.0, 1.0, 0.25});
    CrossGate::Result r = g.forward(xa, xb, xf);

    const auto pw = [](const Conv1d& c, const Tensor& x, int o, int t) {
        const auto& wv = c.direction.values();
        double s = c.bias.values()[static_cast<size_t>(o)];
        for (int i = 0; i < 2; ++i)
            s += wv[static_cast<size_t>(o * 2 + i)] * x.values()[static_cast<size_t>(i * 3 + t)];
        return s;
    };
    for (int o = 0; o < 2; ++o)
        for (int t = 0; t < 3; ++t) {
            const size_t idx = static_cast<size_t>(o * 3 + t);
            CHECK(r.a.values()[idx] ==
                  doctest::Approx(sig(pw(g.gate_fa, xf, o, t)) * pw(g.val_a, xa, o, t))
                      .epsilon(1e-6));
            CHECK(r.b.values()[idx] ==
                  doctest::Approx(sig(pw(g.gate_fb, xf, o, t)) * pw(g.val_b, xb, o, t))
                      .epsilon(1e-6));
            const double feedback = sig(pw(g.gate_af, xa, o, t)) * pw(g.val_af, xf, o, t) +
                                    sig(pw(g.gate_bf, xb, o, t)) * pw(g.val_bf, xf, o, t);
            CHECK(r.f.values()[idx] == doctest::Approx(feedback).epsilon(1e-6));
        }
}

TEST_CASE("equilibrium core stops immediately at a trivial fixed point") {
    EquilibriumCore core;
    core.max_iters = 50;
    core.tol = 1e-4;
    core.intra_a = hand_linear(2, 1, {0.0, 0.0}, {0.0});
    core.intra_b = hand_linear(2, 1, {0.0, 0.0}, {0.0});
    core.fuse = hand_linear(4, 1, {0.0, 0.0, 0.0, 0.0}, {0.0});
    Tensor x = Tensor::from_values({1, 3}, {1.0, -2.0, 0.5});
    EquilibriumCore::Result r = core.forward(x, x, x);
    CHECK(r.telemetry.executed == 2);
    for (int64_t j = 0; j < 3; ++j) {
        CHECK(r.telemetry.kstar[static_cast<size_t>(j)] == 2);
        REQUIRE(r.telemetry.deltas[static_cast<size_t>(j)].size() == 1);
        CHECK(r.telemetry.deltas[static_cast<size_t>(j)][0] == 0.0);
        CHECK(r.zf.values()[static_cast<size_t>(j)] == 0.0);
    }
}

TEST_CASE("equilibrium core tracks a linear contraction to its fixed point") {
    PrecisionGuard wide(Precision::f64);
    EquilibriumCore core;
    core.max_iters = 50;
    core.tol = 0.0;  // never exit early, so every iteration contributes a delta
    core.activation = &identity_act;
    // Each state halves its distance to the injected value per iteration.
    core.intra_a = hand_linear(2, 1, {0.5, 0.5}, {0.0});
    core.intra_b = hand_linear(2, 1, {0.5, 0.5}, {0.0});
    core.fuse = hand_linear(4, 1, {0.0, 0.0, 0.5, 0.5}, {0.0});
    Tensor x = Tensor::from_values({1, 3}, {1.0, -0.5, 2.0});
    EquilibriumCore::Result r = core.forward(x, x, x);

    CHECK(r.telemetry.executed == 50);
    for (int64_t j = 0; j < 3; ++j) {
        const auto& ds = r.telemetry.deltas[static_cast<size_t>(j)];
        REQUIRE(ds.size() == 49);
        // Geometric decay with ratio exactly one half.
        for (size_t i = 1; i < ds.size(); ++i)
            CHECK(ds[i] == doctest::Approx(0.5 * ds[i - 1]).epsilon(1e-12));
        CHECK(r.telemetry.kstar[static_cast<size_t>(j)] == 50);
        // With contraction factor L = 1/2, the distance to the true fixed
        // point is bounded by L/(1-L) times the last step size.
        const double xj = x.values()[static_cast<size_t>(j)];
        const double err = std::abs(r.zf.values()[static_cast<size_t>(j)] - xj);
        CHECK(err <= ds.back() + 1e-15);
        CHECK(err <= std::abs(xj) * std::pow(2.0, -49.0));
    }
}

TEST_CASE("equilibrium stopping indices stay within bounds on random cores") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        std::mt19937_64 rng(seed);
        EquilibriumCore core = make_equilibrium_core(8, 50, 1e-4, rng);
        Tensor xa = Tensor::randn({8, 5}, rng);
        Tensor xb = Tensor::randn({8, 5}, rng);
        Tensor xf = Tensor::randn({8, 5}, rng);
        EquilibriumCore::Result r = core.forward(xa, xb, xf);
        for (int k : r.telemetry.kstar) {
            CHECK(k >= 2);
            CHECK(k <= 50);
        }
        CHECK(r.zf.shape() == Shape{8, 5});
    }
}

TEST_CASE("equilibrium treats frames independently") {
    std::mt19937_64 rng(99);
    EquilibriumCore core = make_equilibrium_core(8, 50, 1e-4, rng);
    Tensor xa = Tensor::randn({8, 6}, rng);
    Tensor xb = Tensor::randn({8, 6}, rng);
    Tensor xf = Tensor::randn({8, 6}, rng);
    EquilibriumCore::Result base = core.forward(xa, xb, xf);

    const std::vector<int64_t> perm = {3, 5, 0, 1, 4, 2};
    const auto permute = [&perm](const Tensor& t) {
        std::vector<double> out(t.values().size());
        for (int64_t i = 0; i < t.dim(0); ++i)
            for (int64_t j = 0; j < 6; ++j)
                out[static_cast<size_t>(i * 6 + j)] =
                    t.values()[static_cast<size_t>(i * 6 + perm[static_cast<size_t>(j)])];
        return Tensor::from_values(t.shape(), std::move(out));
    };
    EquilibriumCore::Result shuffled = core.forward(permute(xa), permute(xb), permute(xf));
    for (int64_t j = 0; j < 6; ++j) {
        CHECK(shuffled.telemetry.kstar[static_cast<size_t>(j)] ==
              base.telemetry.kstar[static_cast<size_t>(perm[static_cast<size_t>(j)])]);
        for (int64_t i = 0; i < 8; ++i)
            CHECK(shuffled.zf.values()[static_cast<size_t>(i * 6 + j)] ==
                  base.zf.values()[static_cast<size_t>(i * 6 + perm[static_cast<size_t>(j)])]);
    }
}

TEST_CASE("equilibrium parameter count ignores the iteration budget") {
    std::mt19937_64 rng(5);
    EquilibriumCore few = make_equilibrium_core(16, 5, 1e-4, rng);
    EquilibriumCore many = make_equilibrium_core(16, 50, 1e-4, rng);
    CHECK(few.param_count() == many.param_count());
    CHECK(few.param_count() == (32 * 16 + 16) + (32 * 16 + 16) + (64 * 16 + 16));
}

TEST_CASE("equilibrium reports the frame and iteration when it blows up") {
    PrecisionGuard wide(Precision::f64);
    EquilibriumCore core;
    core.max_iters = 50;
    core.tol = 0.0;
    core.activation = &identity_act;
    core.intra_a = hand_linear(2, 1, {1e200, 1e200}, {0.0});
    core.intra_b = hand_linear(2, 1, {0.0, 0.0}, {0.0});
    core.fuse = hand_linear(4, 1, {0.0, 0.0, 0.0, 0.0}, {0.0});
    Tensor x = Tensor::from_values({1, 1}, {1.0});
    CHECK_THROWS_WITH_AS(core.forward(x, x, x), doctest::Contains("frame 0, iteration 2"),
                         numeric_error);
}

TEST_CASE("generator layout matches the width and frame tables") {
    std::mt19937_64 rng(1);
    GeneratorConfig cfg;
    Generator g = make_generator(cfg, rng);
    const std::vector<int> widths = {32, 64, 128, 256, 256};
    const std::vector<int64_t> frames = {4000, 2000, 1000, 500, 250};

    CHECK(g.embed_a.in_ch == 4);
    CHECK(g.embed_a.out_ch == 32);
    CHECK(g.embed_a.kernel == 7);
    CHECK(g.embed_a.geom.padding == 3);

    REQUIRE(g.enc_f.size() == 4);
    int64_t t = frames[0];
    for (size_t s = 0; s < 4; ++s) {
        for (const Conv1d* c : {&g.enc_a[s], &g.enc_b[s], &g.enc_f[s]}) {
            CHECK(c->in_ch == widths[s]);
            CHECK(c->out_ch == widths[s + 1]);
            CHECK(c->kernel == 8);
            CHECK(c->geom.stride == 2);
            CHECK(c->geom.padding == 3);
        }
        t = conv1d_out_len(t, 8, g.enc_f[s].geom);
        CHECK(t == frames[s + 1]);
    }

    REQUIRE(g.dec_f.size() == 4);
    for (size_t s = 0; s < 4; ++s) {
        for (const ConvTranspose1d* c : {&g.dec_a[s], &g.dec_b[s], &g.dec_f[s]}) {
            CHECK(c->in_ch == widths[4 - s]);
            CHECK(c->out_ch == widths[3 - s]);
            CHECK(c->kernel == 8);
            CHECK(c->stride == 2);
            CHECK(c->padding == 3);
        }
    }
    CHECK(g.head.in_ch == 32);
    CHECK(g.head.out_ch == 4);
    CHECK(g.head.kernel == 1);
    CHECK(g.dbi.intra_a.in_dim == 512);
    CHECK(g.dbi.fuse.in_dim == 1024);
}

TEST_CASE("a fresh generator maps silence to silence") {
    std::mt19937_64 rng(42);
    Generator g = make_generator(GeneratorConfig{}.scaled(4), rng);
    Tensor sa = Tensor::zeros({4, 64});
    Tensor sb = Tensor::zeros({4, 64});
    GeneratorTrace trace;
    Tensor out = g.forward(sa, sb, &trace);
    REQUIRE(out.shape() == Shape{4, 64});
    for (double v : out.values()) CHECK(v == 0.0);
    CHECK(trace.diaf_weights.size() == 3);
    CHECK(trace.dbi.kstar.size() == 4);  // 64 frames through four halvings
    for (int k : trace.dbi.kstar) CHECK(k == 2);
}

TEST_CASE("generator validates its input shapes") {
    std::mt19937_64 rng(43);
    Generator g = make_generator(GeneratorConfig{}.scaled(4), rng);
    CHECK_THROWS_AS(g.forward(Tensor::zeros({3, 64}), Tensor::zeros({3, 64})), config_error);
    CHECK_THROWS_AS(g.forward(Tensor::zeros({4, 64}), Tensor::zeros({4, 32})), config_error);
    CHECK_THROWS_AS(g.forward(Tensor::zeros({4, 60}), Tensor::zeros({4, 60})),
                    precondition_error);
}

TEST_CASE("generator construction and forward are deterministic") {
    const auto build_and_run = []() {
        std::mt19937_64 rng(7);
        Generator g = make_generator(GeneratorConfig{}.scaled(4), rng);
        std::mt19937_64 data_rng(11);
        Tensor sa = Tensor::randn({4, 64}, data_rng, 0.1);
        Tensor sb = Tensor::randn({4, 64}, data_rng, 0.1);
        return g.forward(sa, sb).values();
    };
    CHECK(build_and_run() == build_and_run());
}

TEST_CASE("generator registers every module under its prefix") {
    std::mt19937_64 rng(3);
    Generator g = make_generator(GeneratorConfig{}.scaled(4), rng);
    ParamRegistry reg;
    g.register_params(reg, "gen");
    CHECK(reg.contains("gen.embed_a.direction"));
    CHECK(reg.contains("gen.diaf.cam.squeeze.weight"));
    CHECK(reg.contains("gen.enc0.a.direction"));
    CHECK(reg.contains("gen.enc3.gate.val_bf.bias"));
    CHECK(reg.contains("gen.dbi.fuse.weight"));
    CHECK(reg.contains("gen.dec0.f.weight"));
    CHECK(reg.contains("gen.dec3.gate.gate_af.direction"));
    CHECK(reg.contains("gen.head.bias"));
}
