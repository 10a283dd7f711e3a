#pragma once

#include <cstdint>
#include <vector>

#include "dbmif/tensor.hpp"

namespace dbmif {

// Near-perfect-reconstruction cosine-modulated filter bank with critical
// sampling.  One lowpass prototype generates all analysis/synthesis filters.
struct PrototypeFilter {
    std::vector<double> taps;  // length L, even, symmetric
    int bands = 0;             // M
    double cutoff = 0.0;       // cycles/sample picked by the design search
    double kaiser_beta = 9.0;
    double gain_scale = 1.0;   // post-search amplitude normalization (unit round trip)
};

struct FilterBank {
    int bands = 0;
    int taps = 0;
    std::vector<std::vector<double>> analysis;   // band m: h_m, length L
    std::vector<std::vector<double>> synthesis;  // band m: g_m, length L

    int delay() const { return taps - 1; }  // group delay of the cascade, samples
};

struct SubbandSignal {
    std::vector<std::vector<double>> bands;  // M rows of N_padded/M samples
    int64_t original_len = 0;
};

// Kaiser-windowed sinc (beta 9.0).  The cutoff is found by golden-section
// search over [0.5, 1.5] * 1/(4*bands) cycles/sample, minimizing the
// scale-invariant round-trip error on a fixed white-noise probe; taps are
// then rescaled so the measured round-trip gain is one.
PrototypeFilter design_prototype(int taps, int bands);

FilterBank modulate(const PrototypeFilter& p);

// Convenience: the bank used across the system (64 taps, 4 bands).
const FilterBank& default_bank();

// Causal filtering with h_m, decimated by M.  Input is zero-padded at the
// tail to a multiple of M; each band holds N_padded/M samples.
SubbandSignal analyze(const std::vector<double>& x, const FilterBank& fb);

// Zero-stuff upsample by M, filter with g_m, sum bands, drop the L-1 sample
// group delay and the tail pad so the output length matches the input.
std::vector<double> synthesize(const SubbandSignal& s, const FilterBank& fb);

// Delay-compensated analysis+synthesis pass used for reconstruction-quality
// measurements.  Appends L-1 zeros before analysis so the final samples make
// it into the subband representation (critical sampling of the bare signal
// drops them: the last input samples fall past the last decimation instant),
// then trims back to the input length.
std::vector<double> round_trip(const std::vector<double>& x, const FilterBank& fb);

// Adjoint maps (gradients of the linear ops above, also used in tests).
std::vector<double> analyze_adjoint(const std::vector<std::vector<double>>& gs, int64_t n,
                                    const FilterBank& fb);
std::vector<std::vector<double>> synthesize_adjoint(const std::vector<double>& gy, int64_t frames,
                                                    const FilterBank& fb);

// Autodiff wrappers.  x must be (1,N) with N divisible by the band count;
// the subband map is (M, N/M) and gradients flow through both directions.
Tensor pqmf_analyze_op(const Tensor& x, const FilterBank& fb);
Tensor pqmf_synthesize_op(const Tensor& s, const FilterBank& fb);

// Bridges between the plain subband representation and (M, T) tensors.
Tensor subband_tensor(const SubbandSignal& s);
SubbandSignal subband_from_tensor(const Tensor& x, int64_t original_len);

}  // namespace dbmif
