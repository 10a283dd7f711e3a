#include "dbmif/gradcheck.hpp"

#include <cmath>

#include "dbmif/common.hpp"
#include "dbmif/discriminator.hpp"
#include "dbmif/generator.hpp"
#include "dbmif/losses.hpp"
#include "dbmif/pqmf.hpp"

namespace dbmif {

GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> params, double step, double tol) {
    PrecisionGuard wide(Precision::f64);
    for (Tensor& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape::instance().reset();
    Tensor loss = f(params);
    if (loss.numel() != 1)
        throw precondition_error(cat("gradcheck ", name, ": loss is not scalar"));
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params)
        analytic.push_back(p.has_grad() ? p.grad()
                                        : std::vector<double>(static_cast<size_t>(p.numel()), 0.0));
    Tape::instance().reset();

    GradCheckResult res;
    res.name = name;
    NoGradGuard off;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& vals = params[pi].mutable_values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + step;
            const double up = f(params).item();
            vals[i] = orig - step;
            const double down = f(params).item();
            vals[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
            if (rel > res.max_rel_err) res.max_rel_err = rel;
            ++res.checked;
        }
    }
    res.pass = res.max_rel_err <= tol;
    return res;
}

namespace {

Tensor weighted_sum(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

// Values bounded away from zero, for ops with a kink there.
Tensor randn_away_from(Shape s, std::mt19937_64& rng, double min_abs) {
    Tensor t = Tensor::randn(std::move(s), rng);
    for (double& v : t.mutable_values()) v = (v >= 0.0 ? 1.0 : -1.0) * (min_abs + std::abs(v));
    return t;
}

Tensor rand_uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(s));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.mutable_values()) v = dist(rng);
    return t;
}

struct Case {
    std::string name;
    std::function<Tensor(const std::vector<Tensor>&)> f;
    std::vector<Tensor> params;
};

std::vector<Tensor> registry_tensors(const std::function<void(ParamRegistry&)>& reg_fn) {
    ParamRegistry reg;
    reg_fn(reg);
    return reg.tensors();
}

std::vector<Case> build_cases(std::mt19937_64& rng) {
    std::vector<Case> cases;
    const auto add_case = [&cases](std::string name,
                                   std::function<Tensor(const std::vector<Tensor>&)> f,
                                   std::vector<Tensor> params) {
        cases.push_back({std::move(name), std::move(f), std::move(params)});
    };

    // Elementwise and reduction primitives.
    {
        Tensor a = Tensor::randn({3, 4}, rng), b = Tensor::randn({3, 4}, rng);
        Tensor w = Tensor::randn({3, 4}, rng);
        add_case("add", [w](const std::vector<Tensor>& p) { return weighted_sum(add(p[0], p[1]), w); },
                 {a, b});
        add_case("sub", [w](const std::vector<Tensor>& p) { return weighted_sum(sub(p[0], p[1]), w); },
                 {Tensor::randn({3, 4}, rng), Tensor::randn({3, 4}, rng)});
        add_case("mul", [w](const std::vector<Tensor>& p) { return weighted_sum(mul(p[0], p[1]), w); },
                 {Tensor::randn({3, 4}, rng), Tensor::randn({3, 4}, rng)});
        add_case("add_broadcast_scalar",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(add(p[0], p[1]), w); },
                 {Tensor::randn({3, 4}, rng), Tensor::randn({1}, rng)});
        add_case("mul_broadcast_scalar",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(mul(p[0], p[1]), w); },
                 {Tensor::randn({3, 4}, rng), Tensor::randn({1}, rng)});
        add_case("add_scalar",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(add_scalar(p[0], 0.7), w); },
                 {Tensor::randn({3, 4}, rng)});
        add_case("mul_scalar",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(mul_scalar(p[0], -1.3), w); },
                 {Tensor::randn({3, 4}, rng)});
        add_case("sigmoid",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(sigmoid(p[0]), w); },
                 {Tensor::randn({3, 4}, rng)});
        add_case("tanh", [w](const std::vector<Tensor>& p) { return weighted_sum(tanh(p[0]), w); },
                 {Tensor::randn({3, 4}, rng)});
        add_case("leaky_relu",
                 [w](const std::vector<Tensor>& p) { return weighted_sum(leaky_relu(p[0], 0.1), w); },
                 {randn_away_from({3, 4}, rng, 0.05)});
        add_case("relu", [w](const std::vector<Tensor>& p) { return weighted_sum(relu(p[0]), w); },
                 {randn_away_from({3, 4}, rng, 0.05)});
        add_case("abs", [w](const std::vector<Tensor>& p) { return weighted_sum(abs(p[0]), w); },
                 {randn_away_from({3, 4}, rng, 0.05)});
        add_case("sum", [](const std::vector<Tensor>& p) { return mul_scalar(sum(p[0]), 1.7); },
                 {Tensor::randn({3, 4}, rng)});
        add_case("mean", [](const std::vector<Tensor>& p) { return mul_scalar(mean(p[0]), -2.1); },
                 {Tensor::randn({3, 4}, rng)});
    }

    // Structured primitives.
    {
        Tensor wp = Tensor::randn({3, 1}, rng);
        add_case("global_avg_pool",
                 [wp](const std::vector<Tensor>& p) { return weighted_sum(global_avg_pool(p[0]), wp); },
                 {Tensor::randn({3, 5}, rng)});
        Tensor wx = Tensor::randn({3, 5}, rng);
        add_case("scale_channels",
                 [wx](const std::vector<Tensor>& p) { return weighted_sum(scale_channels(p[0], p[1]), wx); },
                 {Tensor::randn({3, 5}, rng), rand_uniform({3, 1}, rng, 0.1, 0.9)});
        add_case("channel_mix",
                 [wx](const std::vector<Tensor>& p) {
                     return weighted_sum(channel_mix(p[0], p[1], p[2]), wx);
                 },
                 {Tensor::randn({3, 5}, rng), Tensor::randn({3, 5}, rng),
                  rand_uniform({3, 1}, rng, 0.1, 0.9)});
        Tensor wc = Tensor::randn({5, 4}, rng);
        add_case("concat_rows",
                 [wc](const std::vector<Tensor>& p) {
                     return weighted_sum(concat_rows({p[0], p[1]}), wc);
                 },
                 {Tensor::randn({2, 4}, rng), Tensor::randn({3, 4}, rng)});
        Tensor ws = Tensor::randn({3, 4}, rng);
        add_case("slice_rows",
                 [ws](const std::vector<Tensor>& p) { return weighted_sum(slice_rows(p[0], 1, 4), ws); },
                 {Tensor::randn({5, 4}, rng)});
        Tensor wcc = Tensor::randn({3, 7}, rng);
        add_case("concat_cols",
                 [wcc](const std::vector<Tensor>& p) {
                     return weighted_sum(concat_cols({p[0], p[1]}), wcc);
                 },
                 {Tensor::randn({3, 3}, rng), Tensor::randn({3, 4}, rng)});
        Tensor wsc = Tensor::randn({3, 2}, rng);
        add_case("slice_cols",
                 [wsc](const std::vector<Tensor>& p) { return weighted_sum(slice_cols(p[0], 2, 4), wsc); },
                 {Tensor::randn({3, 5}, rng)});
        Tensor wl = Tensor::randn({3, 6}, rng);
        add_case("linear",
                 [wl](const std::vector<Tensor>& p) {
                     return weighted_sum(linear(p[0], p[1], p[2]), wl);
                 },
                 {Tensor::randn({4, 6}, rng), Tensor::randn({3, 4}, rng), Tensor::randn({3}, rng)});
        add_case("weight_norm",
                 [wl](const std::vector<Tensor>& p) {
                     return weighted_sum(slice_cols(weight_norm(p[0], p[1]), 0, 6), wl);
                 },
                 {Tensor::randn({3, 8}, rng), randn_away_from({3}, rng, 0.2)});
    }

    // Convolutions in every geometry the model uses.
    {
        Conv1dGeom plain;
        plain.padding = 1;
        Tensor w1 = Tensor::randn({4, 8}, rng);
        add_case("conv1d",
                 [w1, plain](const std::vector<Tensor>& p) {
                     return weighted_sum(conv1d(p[0], p[1], p[2], plain), w1);
                 },
                 {Tensor::randn({3, 8}, rng), Tensor::randn({4, 3, 3}, rng), Tensor::randn({4}, rng)});
        Conv1dGeom strided;
        strided.stride = 2;
        strided.padding = 1;
        Tensor w2 = Tensor::randn({4, 4}, rng);
        add_case("conv1d_strided",
                 [w2, strided](const std::vector<Tensor>& p) {
                     return weighted_sum(conv1d(p[0], p[1], p[2], strided), w2);
                 },
                 {Tensor::randn({3, 8}, rng), Tensor::randn({4, 3, 4}, rng), Tensor::randn({4}, rng)});
        Conv1dGeom dilated;
        dilated.dilation = 2;
        dilated.padding = 2;
        Tensor w3 = Tensor::randn({4, 8}, rng);
        add_case("conv1d_dilated",
                 [w3, dilated](const std::vector<Tensor>& p) {
                     return weighted_sum(conv1d(p[0], p[1], p[2], dilated), w3);
                 },
                 {Tensor::randn({3, 8}, rng), Tensor::randn({4, 3, 3}, rng), Tensor::randn({4}, rng)});
        Conv1dGeom grouped;
        grouped.groups = 2;
        grouped.padding = 1;
        Tensor w4 = Tensor::randn({4, 8}, rng);
        add_case("conv1d_grouped",
                 [w4, grouped](const std::vector<Tensor>& p) {
                     return weighted_sum(conv1d(p[0], p[1], p[2], grouped), w4);
                 },
                 {Tensor::randn({4, 8}, rng), Tensor::randn({4, 2, 3}, rng), Tensor::randn({4}, rng)});
        Tensor w5 = Tensor::randn({2, 12}, rng);
        add_case("conv1d_transpose",
                 [w5](const std::vector<Tensor>& p) {
                     return weighted_sum(conv1d_transpose(p[0], p[1], p[2], 2, 1), w5);
                 },
                 {Tensor::randn({3, 6}, rng), Tensor::randn({3, 2, 4}, rng), Tensor::randn({2}, rng)});
    }

    // Filter-bank ops (linear maps; the adjoints are the gradients).
    {
        const FilterBank& fb = default_bank();
        Tensor wa = Tensor::randn({fb.bands, 16}, rng);
        add_case("pqmf_analyze",
                 [wa, &fb](const std::vector<Tensor>& p) {
                     return weighted_sum(pqmf_analyze_op(p[0], fb), wa);
                 },
                 {Tensor::randn({1, static_cast<int64_t>(fb.bands) * 16}, rng)});
        Tensor wsyn = Tensor::randn({1, static_cast<int64_t>(fb.bands) * 16}, rng);
        add_case("pqmf_synthesize",
                 [wsyn, &fb](const std::vector<Tensor>& p) {
                     return weighted_sum(pqmf_synthesize_op(p[0], fb), wsyn);
                 },
                 {Tensor::randn({fb.bands, 16}, rng)});
    }

    // Cross-branch gated interaction.
    {
        const int c = 4;
        const int64_t t = 5;
        CrossGate gate = make_cross_gate(c, rng);
        Tensor wa = Tensor::randn({c, t}, rng), wb = Tensor::randn({c, t}, rng),
               wf = Tensor::randn({c, t}, rng);
        std::vector<Tensor> params = registry_tensors(
            [&gate](ParamRegistry& reg) { gate.register_params(reg, "t"); });
        params.push_back(Tensor::randn({c, t}, rng));
        params.push_back(Tensor::randn({c, t}, rng));
        params.push_back(Tensor::randn({c, t}, rng));
        add_case("cross_gate",
                 [gate, wa, wb, wf](const std::vector<Tensor>& p) {
                     const size_t n = p.size();
                     CrossGate::Result r = gate.forward(p[n - 3], p[n - 2], p[n - 1]);
                     return add(add(weighted_sum(r.a, wa), weighted_sum(r.b, wb)),
                                weighted_sum(r.f, wf));
                 },
                 std::move(params));
    }

    // Iterative attention fusion with the acceptance-bar iteration count.
    {
        const int c = 8;
        const int64_t t = 5;
        IterativeFusion fusion = make_iterative_fusion(c, 4, 3, 0.1, rng);
        Tensor w = Tensor::randn({c, t}, rng);
        std::vector<Tensor> params = registry_tensors(
            [&fusion](ParamRegistry& reg) { fusion.register_params(reg, "t"); });
        params.push_back(Tensor::randn({c, t}, rng));
        params.push_back(Tensor::randn({c, t}, rng));
        add_case("iterative_fusion",
                 [fusion, w](const std::vector<Tensor>& p) {
                     const size_t n = p.size();
                     return weighted_sum(fusion.forward(p[n - 2], p[n - 1]).fused, w);
                 },
                 std::move(params));
    }

    // Equilibrium bottleneck on a two-frame toy.  tol = 0 runs the fixed
    // iteration budget so the stopping index stays stable under the probes.
    {
        const int c = 3;
        const int64_t t = 2;
        EquilibriumCore core = make_equilibrium_core(c, 6, 0.0, rng);
        Tensor w = Tensor::randn({c, t}, rng);
        std::vector<Tensor> params = registry_tensors(
            [&core](ParamRegistry& reg) { core.register_params(reg, "t"); });
        params.push_back(Tensor::randn({c, t}, rng));
        params.push_back(Tensor::randn({c, t}, rng));
        params.push_back(Tensor::randn({c, t}, rng));
        add_case("equilibrium_core",
                 [core, w](const std::vector<Tensor>& p) {
                     const size_t n = p.size();
                     return weighted_sum(core.forward(p[n - 3], p[n - 2], p[n - 1]).zf, w);
                 },
                 std::move(params));
    }

    // Truncated discriminator stacks: the real tables' kernels, strides,
    // groups and dilations at toy widths, ending in the 1-channel score
    // layer so both the score and the feature maps get probed.  The leaky
    // activations are only piecewise smooth and a random probe point almost
    // always leaves some pre-activation within the finite-difference step of
    // the corner, so the hidden biases are set to push every frame of each
    // channel at least a fixed margin to one side (alternating sides across
    // channels, keeping both branches of the activation in play).
    const auto condition_away_from_kinks = [](ConvStackDisc& stack, const Tensor& input) {
        NoGradGuard off;
        const double margin = 0.05;  // 500x the probe step
        Tensor t = input;
        for (size_t l = 0; l < stack.layers.size(); ++l) {
            Conv1d& conv = stack.layers[l];
            if (l + 1 == stack.layers.size()) break;  // score layer: no activation after
            Tensor pre = conv.forward(t);
            const int64_t c = pre.dim(0), frames = pre.dim(1);
            std::vector<double> bias(static_cast<size_t>(c));
            for (int64_t ch = 0; ch < c; ++ch) {
                double lo = 1e300, hi = -1e300;
                for (int64_t j = 0; j < frames; ++j) {
                    const double v = pre.values()[static_cast<size_t>(ch * frames + j)];
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                bias[static_cast<size_t>(ch)] = (ch % 2 == 0) ? margin - lo : -margin - hi;
            }
            conv.bias = Tensor::from_values({c}, std::move(bias), true);
            t = leaky_relu(conv.forward(t), stack.leak);
        }
    };
    {
        std::vector<DiscLayerSpec> specs = {{1, 4, 15, 1, 1, 1},
                                            {4, 8, 41, 4, 4, 1},
                                            {8, 8, 5, 1, 1, 1},
                                            {8, 1, 3, 1, 1, 1}};
        ConvStackDisc stack = make_disc_stack(specs, 0.1, rng);
        Tensor input = Tensor::randn({1, 128}, rng);
        condition_away_from_kinks(stack, input);
        Tensor w = Tensor::randn({1, 32}, rng);
        std::vector<Tensor> params = registry_tensors(
            [&stack](ParamRegistry& reg) { stack.register_params(reg, "t"); });
        params.push_back(input);
        add_case("wav_stack_toy",
                 [stack, w](const std::vector<Tensor>& p) {
                     return weighted_sum(stack.forward(p.back()).score, w);
                 },
                 std::move(params));
    }
    {
        std::vector<DiscLayerSpec> specs = {{4, 8, 3, 1, 4, 2},
                                            {8, 8, 7, 2, 4, 2},
                                            {8, 8, 5, 1, 4, 2},
                                            {8, 1, 3, 1, 1, 2}};
        ConvStackDisc stack = make_disc_stack(specs, 0.1, rng);
        Tensor input = Tensor::randn({4, 64}, rng);
        condition_away_from_kinks(stack, input);
        Tensor ws = Tensor::randn({1, 32}, rng);
        Tensor wf = Tensor::randn({8, 32}, rng);
        std::vector<Tensor> params = registry_tensors(
            [&stack](ParamRegistry& reg) { stack.register_params(reg, "t"); });
        params.push_back(input);
        add_case("sub_stack_toy",
                 [stack, ws, wf](const std::vector<Tensor>& p) {
                     ConvStackDisc::Output out = stack.forward(p.back());
                     return add(weighted_sum(out.score, ws),
                                weighted_sum(out.features.back(), wf));
                 },
                 std::move(params));
    }

    // Losses over synthetic ensemble outputs.  Scores stay inside (-0.5, 0.5)
    // so the hinge corners are far from the probe points.
    {
        const auto outputs_from = [](const Tensor& score, const Tensor& f1, const Tensor& f2) {
            ConvStackDisc::Output out;
            out.score = score;
            out.features = {f1, f2};
            return out;
        };
        std::vector<Tensor> params;
        for (int i = 0; i < 12; ++i) params.push_back(rand_uniform({1, 5}, rng, -0.45, 0.45));
        // layout: per example (2) and discriminator (2): real score, fake score, and
        // shared features come after.
        for (int i = 0; i < 16; ++i) params.push_back(Tensor::randn({2, 3}, rng));
        add_case("disc_loss",
                 [outputs_from](const std::vector<Tensor>& p) {
                     std::vector<EnsembleOutputs> real, fake;
                     for (int ex = 0; ex < 2; ++ex) {
                         EnsembleOutputs r, f;
                         for (int k = 0; k < 2; ++k) {
                             const size_t base = static_cast<size_t>(ex * 2 + k);
                             r.push_back(outputs_from(p[base], p[12 + base * 2], p[12 + base * 2 + 1]));
                             f.push_back(outputs_from(p[4 + base], p[12 + 8 + base * 2],
                                                      p[12 + 8 + base * 2 + 1]));
                         }
                         real.push_back(std::move(r));
                         fake.push_back(std::move(f));
                     }
                     return disc_loss(real, fake);
                 },
                 params);
        add_case("gen_adv_loss",
                 [outputs_from](const std::vector<Tensor>& p) {
                     std::vector<EnsembleOutputs> fake;
                     for (int ex = 0; ex < 2; ++ex) {
                         EnsembleOutputs f;
                         for (int k = 0; k < 2; ++k) {
                             const size_t base = static_cast<size_t>(ex * 2 + k);
                             f.push_back(outputs_from(p[4 + base], p[12 + base * 2],
                                                      p[12 + base * 2 + 1]));
                         }
                         fake.push_back(std::move(f));
                     }
                     return gen_adv_loss(fake);
                 },
                 params);
        add_case("feature_matching_loss",
                 [outputs_from](const std::vector<Tensor>& p) {
                     std::vector<EnsembleOutputs> real, fake;
                     for (int ex = 0; ex < 2; ++ex) {
                         EnsembleOutputs r, f;
                         for (int k = 0; k < 2; ++k) {
                             const size_t base = static_cast<size_t>(ex * 2 + k);
                             r.push_back(outputs_from(p[base], p[12 + base * 2], p[12 + base * 2 + 1]));
                             f.push_back(outputs_from(p[4 + base], p[12 + 8 + base * 2],
                                                      p[12 + 8 + base * 2 + 1]));
                         }
                         real.push_back(std::move(r));
                         fake.push_back(std::move(f));
                     }
                     return feature_matching_loss(real, fake);
                 },
                 params);
        add_case("gen_total_loss",
                 [](const std::vector<Tensor>& p) {
                     return gen_total_loss(mean(p[0]), mean(abs(p[1])), 2.5);
                 },
                 {rand_uniform({1, 5}, rng, -0.45, 0.45), randn_away_from({1, 5}, rng, 0.05)});
    }

    return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(int seeds) {
    if (seeds < 1) throw precondition_error(cat("gradient suite: need >= 1 seed, got ", seeds));
    PrecisionGuard wide(Precision::f64);
    std::vector<GradCheckResult> all;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 rng(derive_seed(0x6c5eed, static_cast<uint64_t>(s)));
        for (Case& c : build_cases(rng)) {
            GradCheckResult r = check_gradients(cat(c.name, "/s", s), c.f, std::move(c.params));
            all.push_back(std::move(r));
        }
    }
    return all;
}

}  // namespace dbmif
