#pragma once

#include <random>
#include <vector>

#include "dbmif/nn.hpp"
#include "dbmif/pqmf.hpp"
#include "dbmif/tensor.hpp"

namespace dbmif {

struct DiscLayerSpec {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    int stride = 1;
    int groups = 1;
    int dilation = 1;
};

// Stack of weight-normalized convolutions with leaky_relu between layers and
// a linear score map at the end.  Same-length padding everywhere, so the
// score map has ceil(T / stride product) frames.  Activations after each
// hidden layer are captured for feature matching.
struct ConvStackDisc {
    std::vector<Conv1d> layers;
    std::vector<DiscLayerSpec> layout;
    double leak = 0.1;
    int receptive_field = 1;

    struct Output {
        Tensor score;                 // (1, T')
        std::vector<Tensor> features; // one per hidden layer, post-activation
    };
    Output forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

ConvStackDisc make_disc_stack(const std::vector<DiscLayerSpec>& specs, double leak,
                              std::mt19937_64& rng);

// Layer tables.  `widths` are the output channels per layer; pass the
// defaults for the published architecture or a narrowed set for smoke-scale
// training (group counts are preserved).
std::vector<DiscLayerSpec> wav_disc_layout(const std::vector<int>& widths);
std::vector<DiscLayerSpec> sub_disc_layout(const std::vector<int>& widths, int bands,
                                           int dilation);

struct DiscConfig {
    std::vector<int> wav_widths = {16, 64, 256, 1024, 1024, 1024, 1};
    std::vector<int> sub_widths = {36, 72, 144, 288, 576, 1152, 1152, 1};
    int bands = 4;
    double leak = 0.1;

    // Narrow desk-scale variant keeping every structural property (layer
    // counts, kernels, strides, groups, dilations).
    static DiscConfig tiny();
};

// One full-band discriminator over the raw waveform plus three subband
// discriminators (dilations 1, 2, 3) over the PQMF analysis of the same
// waveform.  Loss sums run over the outputs in this fixed order.
struct DiscEnsemble {
    ConvStackDisc wav;
    std::vector<ConvStackDisc> sub;
    const FilterBank* bank = nullptr;

    std::vector<ConvStackDisc::Output> forward(const Tensor& y) const;  // y: (1, N)
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
    std::vector<Tensor> parameters() const;
    void set_requires_grad(bool on) const;
};

DiscEnsemble make_disc_ensemble(const DiscConfig& cfg, const FilterBank& bank,
                                std::mt19937_64& rng);

}  // namespace dbmif
