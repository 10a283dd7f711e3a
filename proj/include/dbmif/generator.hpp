#pragma once

#include <random>
#include <vector>

#include "dbmif/nn.hpp"
#include "dbmif/tensor.hpp"

namespace dbmif {

struct GeneratorConfig {
    int bands = 4;
    std::vector<int> widths = {32, 64, 128, 256};  // scale widths; last is the bottleneck
    int embed_kernel = 7;
    int scale_kernel = 8;   // encoder/decoder, stride 2, pad 3
    int diaf_iters = 3;     // K
    int cam_reduction = 4;  // channel bottleneck ratio inside the attention module
    int dbi_max_iters = 50;
    double dbi_tol = 1e-4;  // early exit on the per-frame iterate change
    double leak = 0.1;

    // Same architecture at 1/divisor channel widths (smoke-test scale).
    GeneratorConfig scaled(int divisor) const;
    void validate() const;
};

// Per-channel gate: global average pool -> squeeze linear -> leaky_relu ->
// expand linear -> sigmoid.  Output shape (C, 1), each entry in (0, 1).
struct ChannelAttention {
    Linear squeeze;
    Linear expand;
    double leak = 0.1;

    Tensor forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

ChannelAttention make_channel_attention(int channels, int reduction, double leak,
                                        std::mt19937_64& rng);

// Iterative attention fusion of the two modality embeddings: starting from
// their sum, K rounds of per-channel soft selection w*a + (1-w)*b where w is
// the attention gate of the previous fusion iterate.
struct IterativeFusion {
    ChannelAttention cam;
    int iters = 3;

    struct Result {
        Tensor fused;
        std::vector<Tensor> weights;  // w^(1..K), each (C, 1)
    };
    Result forward(const Tensor& xa, const Tensor& xb) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

IterativeFusion make_iterative_fusion(int channels, int reduction, int iters, double leak,
                                      std::mt19937_64& rng);

// Cross-branch gated interaction: eight independent 1x1 convolutions.
// Stage 1 recalibrates the unimodal streams with gates from the fusion
// stream; stage 2 sends gated fusion content back, summed over both gates.
struct CrossGate {
    Conv1d gate_fa;  // sigma of this gates the a-stream
    Conv1d val_a;
    Conv1d gate_fb;
    Conv1d val_b;
    Conv1d gate_af;  // sigma of conv(x_a) gates fusion content for the a side
    Conv1d val_af;
    Conv1d gate_bf;
    Conv1d val_bf;

    struct Result {
        Tensor a, b, f;
    };
    Result forward(const Tensor& xa, const Tensor& xb, const Tensor& xf) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

CrossGate make_cross_gate(int channels, std::mt19937_64& rng);

struct DbiTelemetry {
    std::vector<int> kstar;                   // per frame, in [2, max_iters]
    std::vector<std::vector<double>> deltas;  // per frame: delta_2 .. delta_{stop}
    int executed = 0;                         // iterations actually run (max over frames)
};

// Fixed-point bottleneck.  One iteration refreshes the modality states from
// their own previous values plus the injected features, then refreshes the
// fusion state from all three refreshed states plus the fusion injection.
// Parameters are shared across iterations; each frame is an independent
// sample with its own stopping index.
struct EquilibriumCore {
    Linear intra_a;  // acts on [z_a; x_a]
    Linear intra_b;  // acts on [z_b; x_b]
    Linear fuse;     // acts on [z_a; z_b; z_f; x_f]
    int max_iters = 50;
    double tol = 1e-4;
    Tensor (*activation)(const Tensor&) = nullptr;  // null means tanh

    struct Result {
        Tensor zf;  // per frame, the fusion state at that frame's k*
        DbiTelemetry telemetry;
    };
    Result forward(const Tensor& xa, const Tensor& xb, const Tensor& xf) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
    int64_t param_count() const;
};

EquilibriumCore make_equilibrium_core(int channels, int max_iters, double tol,
                                      std::mt19937_64& rng);

struct GeneratorTrace {
    std::vector<Tensor> diaf_weights;
    DbiTelemetry dbi;
};

// Three-branch encoder/decoder over subband maps.  Branch a and b carry the
// two modalities; branch f carries the fusion stream that ultimately produces
// the estimate.  Gated interaction runs after every encoder and decoder
// scale; the bottleneck fusion feature is replaced by the equilibrium state.
struct Generator {
    GeneratorConfig cfg;
    Conv1d embed_a, embed_b;
    IterativeFusion diaf;
    std::vector<Conv1d> enc_a, enc_b, enc_f;
    std::vector<CrossGate> enc_gate;
    EquilibriumCore dbi;
    std::vector<ConvTranspose1d> dec_a, dec_b, dec_f;
    std::vector<CrossGate> dec_gate;
    Conv1d head;  // 1x1 to the subband count, tanh outside

    Tensor forward(const Tensor& sa, const Tensor& sb, GeneratorTrace* trace = nullptr) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

Generator make_generator(const GeneratorConfig& cfg, std::mt19937_64& rng);

}  // namespace dbmif
