#include "dbmif/generator.hpp"

#include <cmath>
#include <limits>

namespace dbmif {

GeneratorConfig GeneratorConfig::scaled(int divisor) const {
    if (divisor < 1) throw config_error(cat("generator: width divisor must be >= 1, got ", divisor));
    GeneratorConfig out = *this;
    for (int& w : out.widths) {
        if (w % divisor != 0)
            throw config_error(cat("generator: width ", w, " not divisible by scale ", divisor));
        w /= divisor;
    }
    return out;
}

void GeneratorConfig::validate() const {
    if (bands < 1) throw config_error("generator: band count must be positive");
    if (widths.size() != 4) throw config_error(cat("generator: need 4 scale widths, got ",
                                                   widths.size()));
    for (size_t i = 1; i < widths.size(); ++i)
        if (widths[i] <= widths[i - 1])
            throw config_error("generator: scale widths must be strictly increasing");
    if (widths[0] < cam_reduction)
        throw config_error(cat("generator: first width ", widths[0],
                               " below attention reduction ", cam_reduction));
    if (diaf_iters < 1) throw config_error("generator: fusion iteration count must be >= 1");
    if (dbi_max_iters < 2) throw config_error("generator: equilibrium needs at least 2 iterations");
    if (dbi_tol < 0.0) throw config_error("generator: negative equilibrium tolerance");
}

// --- channel attention ---

Tensor ChannelAttention::forward(const Tensor& x) const {
    Tensor pooled = global_avg_pool(x);
    Tensor h = leaky_relu(squeeze.forward(pooled), leak);
    return sigmoid(expand.forward(h));
}

void ChannelAttention::register_params(ParamRegistry& reg, const std::string& prefix) const {
    squeeze.register_params(reg, prefix + ".squeeze");
    expand.register_params(reg, prefix + ".expand");
}

ChannelAttention make_channel_attention(int channels, int reduction, double leak,
                                        std::mt19937_64& rng) {
    if (channels < reduction)
        throw config_error(cat("attention: ", channels, " channels cannot reduce by ", reduction));
    ChannelAttention cam;
    cam.leak = leak;
    cam.squeeze = make_linear(channels, channels / reduction, rng);
    cam.expand = make_linear(channels / reduction, channels, rng);
    return cam;
}

// --- iterative fusion ---

IterativeFusion::Result IterativeFusion::forward(const Tensor& xa, const Tensor& xb) const {
    if (xa.shape() != xb.shape())
        throw config_error(cat("fusion: mismatched inputs ", shape_str(xa.shape()), " vs ",
                               shape_str(xb.shape())));
    Result res;
    Tensor x = add(xa, xb);
    for (int k = 0; k < iters; ++k) {
        Tensor w = cam.forward(x);
        x = channel_mix(xa, xb, w);
        res.weights.push_back(w);
    }
    res.fused = x;
    return res;
}

void IterativeFusion::register_params(ParamRegistry& reg, const std::string& prefix) const {
    cam.register_params(reg, prefix + ".cam");
}

IterativeFusion make_iterative_fusion(int channels, int reduction, int iters, double leak,
                                      std::mt19937_64& rng) {
    IterativeFusion f;
    f.cam = make_channel_attention(channels, reduction, leak, rng);
    f.iters = iters;
    return f;
}

// --- cross-branch gating ---

CrossGate::Result CrossGate::forward(const Tensor& xa, const Tensor& xb, const Tensor& xf) const {
    if (xa.shape() != xb.shape() || xa.shape() != xf.shape())
        throw config_error(cat("cross-gate: branch shapes differ: ", shape_str(xa.shape()), " / ",
                               shape_str(xb.shape()), " / ", shape_str(xf.shape())));
    Result r;
    r.a = mul(sigmoid(gate_fa.forward(xf)), val_a.forward(xa));
    r.b = mul(sigmoid(gate_fb.forward(xf)), val_b.forward(xb));
    r.f = add(mul(sigmoid(gate_af.forward(xa)), val_af.forward(xf)),
              mul(sigmoid(gate_bf.forward(xb)), val_bf.forward(xf)));
    return r;
}

void CrossGate::register_params(ParamRegistry& reg, const std::string& prefix) const {
    gate_fa.register_params(reg, prefix + ".gate_fa");
    val_a.register_params(reg, prefix + ".val_a");
    gate_fb.register_params(reg, prefix + ".gate_fb");
    val_b.register_params(reg, prefix + ".val_b");
    gate_af.register_params(reg, prefix + ".gate_af");
    val_af.register_params(reg, prefix + ".val_af");
    gate_bf.register_params(reg, prefix + ".gate_bf");
    val_bf.register_params(reg, prefix + ".val_bf");
}

CrossGate make_cross_gate(int channels, std::mt19937_64& rng) {
    CrossGate g;
    Conv1dGeom pw;  // 1x1, stride 1, no padding
    g.gate_fa = make_conv1d(channels, channels, 1, pw, false, rng);
    g.val_a = make_conv1d(channels, channels, 1, pw, false, rng);
    g.gate_fb = make_conv1d(channels, channels, 1, pw, false, rng);
    g.val_b = make_conv1d(channels, channels, 1, pw, false, rng);
    g.gate_af = make_conv1d(channels, channels, 1, pw, false, rng);
    g.val_af = make_conv1d(channels, channels, 1, pw, false, rng);
    g.gate_bf = make_conv1d(channels, channels, 1, pw, false, rng);
    g.val_bf = make_conv1d(channels, channels, 1, pw, false, rng);
    return g;
}

// --- equilibrium bottleneck ---

static void check_finite(const Tensor& z, int64_t frames, int k, const char* which) {
    const std::vector<double>& v = z.values();
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]))
            throw numeric_error(cat("dbi: non-finite ", which, " state at frame ",
                                    static_cast<int64_t>(i) % frames, ", iteration ", k));
    }
}

// out[:, t] = snaps[pick[t]][:, t]; gradients route back the same way.
static Tensor select_per_frame(const std::vector<Tensor>& snaps, const std::vector<int>& pick) {
    const int64_t c = snaps[0].dim(0);
    const int64_t t = snaps[0].dim(1);
    std::vector<double> out(static_cast<size_t>(c * t));
    for (int64_t j = 0; j < t; ++j) {
        const std::vector<double>& src = snaps[static_cast<size_t>(pick[static_cast<size_t>(j)])]
                                             .values();
        for (int64_t i = 0; i < c; ++i)
            out[static_cast<size_t>(i * t + j)] = src[static_cast<size_t>(i * t + j)];
    }
    std::vector<int> pk = pick;
    return make_op({c, t}, std::move(out), snaps, [pk, c, t](TapeNode& node) {
        const std::vector<double>& go = node.out->gbuf;
        for (int64_t j = 0; j < t; ++j) {
            TensorImpl& in = *node.inputs[static_cast<size_t>(pk[static_cast<size_t>(j)])];
            if (!in.requires_grad) continue;
            double* sink = grad_sink(in).data();
            for (int64_t i = 0; i < c; ++i)
                sink[i * t + j] += go[static_cast<size_t>(i * t + j)];
        }
    });
}

EquilibriumCore::Result EquilibriumCore::forward(const Tensor& xa, const Tensor& xb,
                                                 const Tensor& xf) const {
    if (xa.shape() != xb.shape() || xa.shape() != xf.shape())
        throw config_error(cat("dbi: mismatched injections ", shape_str(xa.shape()), " / ",
                               shape_str(xb.shape()), " / ", shape_str(xf.shape())));
    if (max_iters < 2)
        throw config_error("dbi: need at least 2 iterations for a stopping index");
    const int64_t channels = xa.dim(0);
    const int64_t frames = xa.dim(1);
    Tensor (*act)(const Tensor&) = activation ? activation : &dbmif::tanh;

    Tensor za = Tensor::zeros({channels, frames});
    Tensor zb = Tensor::zeros({channels, frames});
    Tensor zf = Tensor::zeros({channels, frames});

    Result res;
    res.telemetry.deltas.assign(static_cast<size_t>(frames), {});
    std::vector<char> stopped(static_cast<size_t>(frames), 0);
    std::vector<Tensor> zf_snaps;  // zf after iteration 1, 2, ...
    std::vector<double> prev_state;
    int executed = 0;

    for (int k = 1; k <= max_iters; ++k) {
        za = act(intra_a.forward(concat_rows({za, xa})));
        zb = act(intra_b.forward(concat_rows({zb, xb})));
        zf = act(fuse.forward(concat_rows({za, zb, zf, xf})));
        check_finite(za, frames, k, "modality-a");
        check_finite(zb, frames, k, "modality-b");
        check_finite(zf, frames, k, "fusion");
        executed = k;
        zf_snaps.push_back(zf);

        std::vector<double> state;
        state.reserve(static_cast<size_t>(3 * channels * frames));
        state.insert(state.end(), za.values().begin(), za.values().end());
        state.insert(state.end(), zb.values().begin(), zb.values().end());
        state.insert(state.end(), zf.values().begin(), zf.values().end());
        if (k >= 2) {
            bool all_stopped = true;
            for (int64_t j = 0; j < frames; ++j) {
                if (stopped[static_cast<size_t>(j)]) continue;
                double d2 = 0.0;
                for (int64_t row = 0; row < 3 * channels; ++row) {
                    const double diff = state[static_cast<size_t>(row * frames + j)] -
                                        prev_state[static_cast<size_t>(row * frames + j)];
                    d2 += diff * diff;
                }
                const double delta = std::sqrt(d2);
                res.telemetry.deltas[static_cast<size_t>(j)].push_back(delta);
                if (delta < tol)
                    stopped[static_cast<size_t>(j)] = 1;
                else
                    all_stopped = false;
            }
            if (all_stopped) break;
        }
        prev_state = std::move(state);
    }

    res.telemetry.executed = executed;
    res.telemetry.kstar.assign(static_cast<size_t>(frames), 2);
    std::vector<int> pick(static_cast<size_t>(frames));
    for (int64_t j = 0; j < frames; ++j) {
        const std::vector<double>& ds = res.telemetry.deltas[static_cast<size_t>(j)];
        int best = 0;
        for (size_t i = 1; i < ds.size(); ++i)
            if (ds[i] < ds[static_cast<size_t>(best)]) best = static_cast<int>(i);
        const int kstar = best + 2;  // deltas[0] belongs to iteration 2
        res.telemetry.kstar[static_cast<size_t>(j)] = kstar;
        pick[static_cast<size_t>(j)] = kstar - 1;  // zf_snaps[i] holds iteration i+1
    }
    res.zf = select_per_frame(zf_snaps, pick);
    return res;
}

void EquilibriumCore::register_params(ParamRegistry& reg, const std::string& prefix) const {
    intra_a.register_params(reg, prefix + ".intra_a");
    intra_b.register_params(reg, prefix + ".intra_b");
    fuse.register_params(reg, prefix + ".fuse");
}

int64_t EquilibriumCore::param_count() const {
    return intra_a.weight.numel() + intra_a.bias.numel() + intra_b.weight.numel() +
           intra_b.bias.numel() + fuse.weight.numel() + fuse.bias.numel();
}

EquilibriumCore make_equilibrium_core(int channels, int max_iters, double tol,
                                      std::mt19937_64& rng) {
    EquilibriumCore core;
    // The recurrent blocks start well inside the contraction regime (spectral
    // norm of a random C x 2C Gaussian at this scale stays below one), so the
    // iteration settles in a handful of steps from the start of training.
    core.intra_a = make_linear(2 * channels, channels, rng, 0.25);
    core.intra_b = make_linear(2 * channels, channels, rng, 0.25);
    core.fuse = make_linear(4 * channels, channels, rng, 0.25);
    core.max_iters = max_iters;
    core.tol = tol;
    return core;
}

// --- full generator ---

Tensor Generator::forward(const Tensor& sa, const Tensor& sb, GeneratorTrace* trace) const {
    if (sa.rank() != 2 || sa.dim(0) != cfg.bands)
        throw config_error(cat("generator: modality a expected (", cfg.bands, ",T), got ",
                               shape_str(sa.shape())));
    if (sb.shape() != sa.shape())
        throw config_error(cat("generator: modality shapes differ: ", shape_str(sa.shape()),
                               " vs ", shape_str(sb.shape())));
    if (sa.dim(1) % 16 != 0)
        throw precondition_error(cat("generator: frame count ", sa.dim(1),
                                     " not divisible by 16 (four stride-2 scales)"));

    Tensor a = leaky_relu(embed_a.forward(sa), cfg.leak);
    Tensor b = leaky_relu(embed_b.forward(sb), cfg.leak);
    IterativeFusion::Result fused = diaf.forward(a, b);
    Tensor f = fused.fused;
    if (trace) trace->diaf_weights = fused.weights;

    std::vector<Tensor> skip_a{a}, skip_b{b}, skip_f{f};
    for (size_t s = 0; s < enc_a.size(); ++s) {
        a = leaky_relu(enc_a[s].forward(a), cfg.leak);
        b = leaky_relu(enc_b[s].forward(b), cfg.leak);
        f = leaky_relu(enc_f[s].forward(f), cfg.leak);
        CrossGate::Result g = enc_gate[s].forward(a, b, f);
        a = g.a;
        b = g.b;
        f = g.f;
        if (s + 1 < enc_a.size()) {
            skip_a.push_back(a);
            skip_b.push_back(b);
            skip_f.push_back(f);
        }
    }

    EquilibriumCore::Result eq = dbi.forward(a, b, f);
    f = eq.zf;
    if (trace) trace->dbi = std::move(eq.telemetry);

    for (size_t s = 0; s < dec_a.size(); ++s) {
        const size_t skip = dec_a.size() - 1 - s;
        a = add(leaky_relu(dec_a[s].forward(a), cfg.leak), skip_a[skip]);
        b = add(leaky_relu(dec_b[s].forward(b), cfg.leak), skip_b[skip]);
        f = add(leaky_relu(dec_f[s].forward(f), cfg.leak), skip_f[skip]);
        CrossGate::Result g = dec_gate[s].forward(a, b, f);
        a = g.a;
        b = g.b;
        f = g.f;
    }
    return dbmif::tanh(head.forward(f));
}

void Generator::register_params(ParamRegistry& reg, const std::string& prefix) const {
    embed_a.register_params(reg, prefix + ".embed_a");
    embed_b.register_params(reg, prefix + ".embed_b");
    diaf.register_params(reg, prefix + ".diaf");
    for (size_t s = 0; s < enc_a.size(); ++s) {
        const std::string base = cat(prefix, ".enc", s);
        enc_a[s].register_params(reg, base + ".a");
        enc_b[s].register_params(reg, base + ".b");
        enc_f[s].register_params(reg, base + ".f");
        enc_gate[s].register_params(reg, base + ".gate");
    }
    dbi.register_params(reg, prefix + ".dbi");
    for (size_t s = 0; s < dec_a.size(); ++s) {
        const std::string base = cat(prefix, ".dec", s);
        dec_a[s].register_params(reg, base + ".a");
        dec_b[s].register_params(reg, base + ".b");
        dec_f[s].register_params(reg, base + ".f");
        dec_gate[s].register_params(reg, base + ".gate");
    }
    head.register_params(reg, prefix + ".head");
}

Generator make_generator(const GeneratorConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    Generator g;
    g.cfg = cfg;

    Conv1dGeom embed_geom;
    embed_geom.padding = same_padding(cfg.embed_kernel, 1);
    g.embed_a = make_conv1d(cfg.bands, cfg.widths[0], cfg.embed_kernel, embed_geom, false, rng);
    g.embed_b = make_conv1d(cfg.bands, cfg.widths[0], cfg.embed_kernel, embed_geom, false, rng);
    g.diaf = make_iterative_fusion(cfg.widths[0], cfg.cam_reduction, cfg.diaf_iters, cfg.leak, rng);

    // Encoder widths w0 -> w1 -> w2 -> w3 -> w3; each scale halves the frames.
    std::vector<int> enc_w(cfg.widths);
    enc_w.push_back(cfg.widths.back());
    Conv1dGeom down;
    down.stride = 2;
    down.padding = 3;
    for (size_t s = 0; s + 1 < enc_w.size(); ++s) {
        g.enc_a.push_back(make_conv1d(enc_w[s], enc_w[s + 1], cfg.scale_kernel, down, false, rng));
        g.enc_b.push_back(make_conv1d(enc_w[s], enc_w[s + 1], cfg.scale_kernel, down, false, rng));
        g.enc_f.push_back(make_conv1d(enc_w[s], enc_w[s + 1], cfg.scale_kernel, down, false, rng));
        g.enc_gate.push_back(make_cross_gate(enc_w[s + 1], rng));
    }

    g.dbi = make_equilibrium_core(cfg.widths.back(), cfg.dbi_max_iters, cfg.dbi_tol, rng);

    for (size_t s = enc_w.size() - 1; s > 0; --s) {
        g.dec_a.push_back(
            make_conv_transpose1d(enc_w[s], enc_w[s - 1], cfg.scale_kernel, 2, 3, rng));
        g.dec_b.push_back(
            make_conv_transpose1d(enc_w[s], enc_w[s - 1], cfg.scale_kernel, 2, 3, rng));
        g.dec_f.push_back(
            make_conv_transpose1d(enc_w[s], enc_w[s - 1], cfg.scale_kernel, 2, 3, rng));
        g.dec_gate.push_back(make_cross_gate(enc_w[s - 1], rng));
    }

    Conv1dGeom pw;
    g.head = make_conv1d(cfg.widths[0], cfg.bands, 1, pw, false, rng);
    return g;
}

}  // namespace dbmif
