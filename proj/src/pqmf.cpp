#include "dbmif/pqmf.hpp"

#include <cmath>
#include <random>

namespace dbmif {

// --- prototype design ---

static double kaiser_win(double beta, double center, double u) {
    const double r = u / center;
    const double inside = 1.0 - r * r;
    if (inside < 0.0) return 0.0;
    return std::cyl_bessel_i(0.0, beta * std::sqrt(inside)) / std::cyl_bessel_i(0.0, beta);
}

// Windowed ideal lowpass, amplitude 2*fc at the center tap.
static std::vector<double> windowed_sinc(int taps, double fc, double beta) {
    std::vector<double> p(static_cast<size_t>(taps));
    const double center = (taps - 1) / 2.0;
    for (int n = 0; n < taps; ++n) {
        const double u = n - center;
        double v;
        if (u == 0.0) {
            v = 2.0 * fc;
        } else {
            v = std::sin(2.0 * M_PI * fc * u) / (M_PI * u);
        }
        p[static_cast<size_t>(n)] = v * kaiser_win(beta, center, u);
    }
    return p;
}

static FilterBank modulate_taps(const std::vector<double>& p, int bands);

struct RoundTripFit {
    double err_ratio;  // residual power / projected power
    double gain;       // least-squares gain of the round trip
};

static RoundTripFit round_trip_fit(const std::vector<double>& probe, const FilterBank& fb) {
    std::vector<double> rt = round_trip(probe, fb);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < probe.size(); ++i) {
        num += rt[i] * probe[i];
        den += probe[i] * probe[i];
    }
    const double alpha = num / den;
    double resid = 0.0, proj = 0.0;
    for (size_t i = 0; i < probe.size(); ++i) {
        const double tgt = alpha * probe[i];
        const double r = rt[i] - tgt;
        resid += r * r;
        proj += tgt * tgt;
    }
    return {resid / proj, alpha};
}

PrototypeFilter design_prototype(int taps, int bands) {
    if (bands < 2) throw config_error(cat("pqmf: need at least 2 bands, got ", bands));
    if (taps % 2 != 0 || taps < 4 * bands)
        throw config_error(cat("pqmf: tap count must be even and >= 4*bands, got ", taps,
                               " for ", bands, " bands"));

    const double beta = 9.0;
    const double fc_mid = 1.0 / (4.0 * bands);
    const double lo = 0.5 * fc_mid, hi = 1.5 * fc_mid;

    std::mt19937_64 rng(0x70a5eed1);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> probe(16384);
    for (double& v : probe) v = dist(rng);

    auto objective = [&](double fc) {
        return round_trip_fit(probe, modulate_taps(windowed_sinc(taps, fc, beta), bands)).err_ratio;
    };

    // Coarse scan to bracket the minimum, then golden-section inside.
    const int scan = 17;
    int best = 0;
    double best_val = 0.0;
    for (int i = 0; i < scan; ++i) {
        const double fc = lo + (hi - lo) * i / (scan - 1);
        const double v = objective(fc);
        if (i == 0 || v < best_val) {
            best = i;
            best_val = v;
        }
    }
    double a = lo + (hi - lo) * std::max(0, best - 1) / (scan - 1);
    double b = lo + (hi - lo) * std::min(scan - 1, best + 1) / (scan - 1);
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = objective(x1), f2 = objective(x2);
    while (b - a > 1e-9) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = objective(x2);
        }
    }
    const double fc = 0.5 * (a + b);

    PrototypeFilter p;
    p.taps = windowed_sinc(taps, fc, beta);
    p.bands = bands;
    p.cutoff = fc;
    p.kaiser_beta = beta;

    // Normalize so the measured round-trip gain is one.  The round trip is
    // quadratic in the taps, hence the square root.
    const RoundTripFit fit = round_trip_fit(probe, modulate_taps(p.taps, bands));
    if (!(fit.gain > 0.0))
        throw numeric_error("pqmf: degenerate design, non-positive round-trip gain");
    p.gain_scale = 1.0 / std::sqrt(fit.gain);
    for (double& v : p.taps) v *= p.gain_scale;
    return p;
}

// --- modulation ---

static FilterBank modulate_taps(const std::vector<double>& p, int bands) {
    const int L = static_cast<int>(p.size());
    FilterBank fb;
    fb.bands = bands;
    fb.taps = L;
    fb.analysis.assign(static_cast<size_t>(bands), std::vector<double>(static_cast<size_t>(L)));
    fb.synthesis.assign(static_cast<size_t>(bands), std::vector<double>(static_cast<size_t>(L)));
    const double center = (L - 1) / 2.0;
    for (int m = 0; m < bands; ++m) {
        const double wm = (2.0 * m + 1.0) * M_PI / (2.0 * bands);
        const double phase = (m % 2 == 0 ? 1.0 : -1.0) * M_PI / 4.0;
        for (int n = 0; n < L; ++n) {
            const double arg = wm * (n - center);
            fb.analysis[static_cast<size_t>(m)][static_cast<size_t>(n)] =
                2.0 * p[static_cast<size_t>(L - 1 - n)] * std::cos(arg + phase);
            fb.synthesis[static_cast<size_t>(m)][static_cast<size_t>(n)] =
                2.0 * bands * p[static_cast<size_t>(n)] * std::cos(arg - phase);
        }
    }
    return fb;
}

FilterBank modulate(const PrototypeFilter& p) {
    if (p.taps.empty() || p.bands < 2) throw config_error("pqmf: modulate needs a designed prototype");
    return modulate_taps(p.taps, p.bands);
}

const FilterBank& default_bank() {
    static const FilterBank fb = modulate(design_prototype(64, 4));
    return fb;
}

// --- analysis / synthesis ---

SubbandSignal analyze(const std::vector<double>& x, const FilterBank& fb) {
    if (x.empty()) throw precondition_error("pqmf: analyze on empty signal");
    const int M = fb.bands, L = fb.taps;
    const int64_t n = static_cast<int64_t>(x.size());
    const int64_t padded = (n + M - 1) / M * M;
    const int64_t frames = padded / M;
    SubbandSignal out;
    out.original_len = n;
    out.bands.assign(static_cast<size_t>(M), std::vector<double>(static_cast<size_t>(frames), 0.0));
    for (int m = 0; m < M; ++m) {
        const double* h = fb.analysis[static_cast<size_t>(m)].data();
        double* band = out.bands[static_cast<size_t>(m)].data();
        for (int64_t i = 0; i < frames; ++i) {
            const int64_t t = i * M;
            const int64_t k0 = t - n + 1 > 0 ? t - n + 1 : 0;
            const int64_t k1 = t < L - 1 ? t : L - 1;
            double acc = 0.0;
            for (int64_t k = k0; k <= k1; ++k) acc += h[k] * x[static_cast<size_t>(t - k)];
            band[i] = acc;
        }
    }
    return out;
}

std::vector<double> synthesize(const SubbandSignal& s, const FilterBank& fb) {
    const int M = fb.bands, L = fb.taps;
    if (static_cast<int>(s.bands.size()) != M)
        throw precondition_error(cat("pqmf: synthesize got ", s.bands.size(), " bands, bank has ", M));
    const int64_t frames = static_cast<int64_t>(s.bands[0].size());
    for (const auto& b : s.bands)
        if (static_cast<int64_t>(b.size()) != frames)
            throw precondition_error("pqmf: ragged subband lengths");
    const int64_t n = s.original_len > 0 ? s.original_len : frames * M;
    if (n > frames * M)
        throw precondition_error(cat("pqmf: cannot reconstruct ", n, " samples from ", frames,
                                     " frames"));
    std::vector<double> full(static_cast<size_t>(frames * M + L), 0.0);
    for (int m = 0; m < M; ++m) {
        const double* g = fb.synthesis[static_cast<size_t>(m)].data();
        const double* band = s.bands[static_cast<size_t>(m)].data();
        for (int64_t i = 0; i < frames; ++i) {
            const double v = band[i];
            if (v == 0.0) continue;
            double* dst = full.data() + i * M;
            for (int k = 0; k < L; ++k) dst[k] += v * g[k];
        }
    }
    // Drop the analysis+synthesis group delay of L-1 samples.
    std::vector<double> y(full.begin() + (L - 1), full.begin() + (L - 1) + n);
    return y;
}

std::vector<double> round_trip(const std::vector<double>& x, const FilterBank& fb) {
    std::vector<double> flushed(x);
    flushed.resize(x.size() + static_cast<size_t>(fb.taps - 1), 0.0);
    SubbandSignal s = analyze(flushed, fb);
    std::vector<double> y = synthesize(s, fb);
    y.resize(x.size());
    return y;
}

std::vector<double> analyze_adjoint(const std::vector<std::vector<double>>& gs, int64_t n,
                                    const FilterBank& fb) {
    const int M = fb.bands, L = fb.taps;
    const int64_t frames = static_cast<int64_t>(gs[0].size());
    std::vector<double> gx(static_cast<size_t>(n), 0.0);
    for (int m = 0; m < M; ++m) {
        const double* h = fb.analysis[static_cast<size_t>(m)].data();
        const double* g = gs[static_cast<size_t>(m)].data();
        for (int64_t i = 0; i < frames; ++i) {
            const double v = g[i];
            if (v == 0.0) continue;
            const int64_t t = i * M;
            const int64_t k0 = t - n + 1 > 0 ? t - n + 1 : 0;
            const int64_t k1 = t < L - 1 ? t : L - 1;
            for (int64_t k = k0; k <= k1; ++k) gx[static_cast<size_t>(t - k)] += h[k] * v;
        }
    }
    return gx;
}

std::vector<std::vector<double>> synthesize_adjoint(const std::vector<double>& gy, int64_t frames,
                                                    const FilterBank& fb) {
    const int M = fb.bands, L = fb.taps;
    const int64_t n = static_cast<int64_t>(gy.size());
    std::vector<std::vector<double>> gs(static_cast<size_t>(M),
                                        std::vector<double>(static_cast<size_t>(frames), 0.0));
    // y[t] = sum_m sum_i g_m[t + L-1 - i*M] * s_m[i]
    for (int m = 0; m < M; ++m) {
        const double* g = fb.synthesis[static_cast<size_t>(m)].data();
        double* row = gs[static_cast<size_t>(m)].data();
        for (int64_t i = 0; i < frames; ++i) {
            const int64_t off = L - 1 - i * M;
            int64_t t0 = -off > 0 ? -off : 0;
            int64_t t1 = L - 1 - off;  // inclusive upper bound from kernel support
            if (t1 > n - 1) t1 = n - 1;
            double acc = 0.0;
            for (int64_t t = t0; t <= t1; ++t) acc += g[t + off] * gy[static_cast<size_t>(t)];
            row[i] = acc;
        }
    }
    return gs;
}

// --- autodiff wrappers ---

Tensor pqmf_analyze_op(const Tensor& x, const FilterBank& fb) {
    if (x.rank() != 2 || x.dim(0) != 1)
        throw precondition_error(cat("pqmf_analyze_op: expected (1,N), got ", shape_str(x.shape())));
    const int64_t n = x.dim(1);
    const int M = fb.bands;
    if (n % M != 0)
        throw precondition_error(cat("pqmf_analyze_op: length ", n, " not divisible by ", M,
                                     " bands; pad upstream"));
    SubbandSignal s = analyze(x.values(), fb);
    const int64_t frames = n / M;
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(M * frames));
    for (const auto& b : s.bands) flat.insert(flat.end(), b.begin(), b.end());
    const FilterBank* bank = &fb;
    return make_op({M, frames}, std::move(flat), {x}, [n, frames, M, bank](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        if (!ix.requires_grad) return;
        const std::vector<double>& go = node.out->gbuf;
        std::vector<std::vector<double>> gs(static_cast<size_t>(M));
        for (int m = 0; m < M; ++m)
            gs[static_cast<size_t>(m)].assign(go.begin() + m * frames, go.begin() + (m + 1) * frames);
        std::vector<double> gx = analyze_adjoint(gs, n, *bank);
        double* sink = grad_sink(ix).data();
        for (int64_t i = 0; i < n; ++i) sink[i] += gx[static_cast<size_t>(i)];
    });
}

Tensor pqmf_synthesize_op(const Tensor& s, const FilterBank& fb) {
    const int M = fb.bands;
    if (s.rank() != 2 || s.dim(0) != M)
        throw precondition_error(cat("pqmf_synthesize_op: expected (", M, ",frames), got ",
                                     shape_str(s.shape())));
    const int64_t frames = s.dim(1);
    SubbandSignal sig;
    sig.original_len = frames * M;
    sig.bands.assign(static_cast<size_t>(M), {});
    const std::vector<double>& sv = s.values();
    for (int m = 0; m < M; ++m)
        sig.bands[static_cast<size_t>(m)].assign(sv.begin() + m * frames,
                                                 sv.begin() + (m + 1) * frames);
    std::vector<double> y = synthesize(sig, fb);
    const FilterBank* bank = &fb;
    return make_op({1, frames * M}, std::move(y), {s}, [frames, M, bank](TapeNode& node) {
        TensorImpl& is = *node.inputs[0];
        if (!is.requires_grad) return;
        std::vector<std::vector<double>> gs = synthesize_adjoint(node.out->gbuf, frames, *bank);
        double* sink = grad_sink(is).data();
        for (int m = 0; m < M; ++m)
            for (int64_t i = 0; i < frames; ++i)
                sink[m * frames + i] += gs[static_cast<size_t>(m)][static_cast<size_t>(i)];
    });
}

Tensor subband_tensor(const SubbandSignal& s) {
    if (s.bands.empty()) throw precondition_error("subband_tensor: no bands");
    const int64_t m = static_cast<int64_t>(s.bands.size());
    const int64_t t = static_cast<int64_t>(s.bands[0].size());
    std::vector<double> v;
    v.reserve(static_cast<size_t>(m * t));
    for (const std::vector<double>& row : s.bands) {
        if (static_cast<int64_t>(row.size()) != t)
            throw precondition_error("subband_tensor: ragged band lengths");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor::from_values({m, t}, std::move(v));
}

SubbandSignal subband_from_tensor(const Tensor& x, int64_t original_len) {
    if (x.rank() != 2)
        throw precondition_error(cat("subband_from_tensor: expected rank 2, got ",
                                     shape_str(x.shape())));
    SubbandSignal s;
    s.original_len = original_len;
    const int64_t m = x.dim(0), t = x.dim(1);
    s.bands.assign(static_cast<size_t>(m), {});
    const std::vector<double>& v = x.values();
    for (int64_t r = 0; r < m; ++r)
        s.bands[static_cast<size_t>(r)].assign(v.begin() + r * t, v.begin() + (r + 1) * t);
    return s;
}

}  // namespace dbmif
