#include "dbmif/discriminator.hpp"

namespace dbmif {

ConvStackDisc::Output ConvStackDisc::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(0) != layout.front().in_ch)
        throw precondition_error(cat("disc: expected (", layout.front().in_ch, ",T) input, got ",
                                     shape_str(x.shape())));
    if (x.dim(1) < receptive_field)
        throw precondition_error(cat("disc: input of ", x.dim(1),
                                     " frames is shorter than the receptive field of ",
                                     receptive_field));
    Output out;
    Tensor h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) {
            h = leaky_relu(h, leak);
            out.features.push_back(h);
        }
    }
    out.score = h;
    return out;
}

void ConvStackDisc::register_params(ParamRegistry& reg, const std::string& prefix) const {
    for (size_t i = 0; i < layers.size(); ++i)
        layers[i].register_params(reg, cat(prefix, ".layer", i + 1));
}

ConvStackDisc make_disc_stack(const std::vector<DiscLayerSpec>& specs, double leak,
                              std::mt19937_64& rng) {
    if (specs.empty()) throw config_error("disc: empty layer table");
    ConvStackDisc d;
    d.layout = specs;
    d.leak = leak;
    int64_t jump = 1;
    int64_t rf = 1;
    for (const DiscLayerSpec& s : specs) {
        Conv1dGeom geom;
        geom.stride = s.stride;
        geom.dilation = s.dilation;
        geom.groups = s.groups;
        geom.padding = same_padding(s.kernel, s.dilation);
        d.layers.push_back(make_conv1d(s.in_ch, s.out_ch, s.kernel, geom, true, rng));
        rf += static_cast<int64_t>(s.kernel - 1) * s.dilation * jump;
        jump *= s.stride;
    }
    d.receptive_field = static_cast<int>(rf);
    return d;
}

std::vector<DiscLayerSpec> wav_disc_layout(const std::vector<int>& widths) {
    if (widths.size() != 7 || widths.back() != 1)
        throw config_error("disc: full-band table has 7 layers ending in 1 channel");
    const int kernels[7] = {15, 41, 41, 41, 41, 5, 3};
    const int strides[7] = {1, 4, 4, 4, 4, 1, 1};
    const int groups[7] = {1, 4, 4, 4, 4, 1, 1};
    std::vector<DiscLayerSpec> specs(7);
    int in_ch = 1;
    for (int i = 0; i < 7; ++i) {
        specs[static_cast<size_t>(i)] = {in_ch, widths[static_cast<size_t>(i)], kernels[i],
                                         strides[i], groups[i], 1};
        in_ch = widths[static_cast<size_t>(i)];
    }
    return specs;
}

std::vector<DiscLayerSpec> sub_disc_layout(const std::vector<int>& widths, int bands,
                                           int dilation) {
    if (widths.size() != 8 || widths.back() != 1)
        throw config_error("disc: subband table has 8 layers ending in 1 channel");
    if (dilation < 1 || dilation > 3)
        throw config_error(cat("disc: subband dilation must be 1, 2 or 3, got ", dilation));
    const int kernels[8] = {3, 7, 7, 7, 7, 7, 5, 3};
    const int strides[8] = {1, 2, 2, 2, 2, 2, 1, 1};
    const int groups[8] = {4, 4, 4, 4, 4, 4, 4, 1};
    std::vector<DiscLayerSpec> specs(8);
    int in_ch = bands;
    for (int i = 0; i < 8; ++i) {
        specs[static_cast<size_t>(i)] = {in_ch, widths[static_cast<size_t>(i)], kernels[i],
                                         strides[i], groups[i], dilation};
        in_ch = widths[static_cast<size_t>(i)];
    }
    return specs;
}

DiscConfig DiscConfig::tiny() {
    DiscConfig cfg;
    cfg.wav_widths = {4, 8, 32, 64, 64, 64, 1};
    cfg.sub_widths = {8, 16, 32, 64, 128, 128, 128, 1};
    return cfg;
}

std::vector<ConvStackDisc::Output> DiscEnsemble::forward(const Tensor& y) const {
    if (y.rank() != 2 || y.dim(0) != 1)
        throw precondition_error(cat("disc ensemble: expected (1,N) waveform, got ",
                                     shape_str(y.shape())));
    std::vector<ConvStackDisc::Output> outs;
    outs.push_back(wav.forward(y));
    Tensor bands = pqmf_analyze_op(y, *bank);
    for (const ConvStackDisc& d : sub) outs.push_back(d.forward(bands));
    return outs;
}

void DiscEnsemble::register_params(ParamRegistry& reg, const std::string& prefix) const {
    wav.register_params(reg, prefix + ".k0");
    for (size_t i = 0; i < sub.size(); ++i) sub[i].register_params(reg, cat(prefix, ".k", i + 1));
}

std::vector<Tensor> DiscEnsemble::parameters() const {
    ParamRegistry reg;
    register_params(reg, "d");
    return reg.tensors();
}

void DiscEnsemble::set_requires_grad(bool on) const {
    for (Tensor& t : parameters()) t.set_requires_grad(on);
}

DiscEnsemble make_disc_ensemble(const DiscConfig& cfg, const FilterBank& bank,
                                std::mt19937_64& rng) {
    DiscEnsemble e;
    e.bank = &bank;
    e.wav = make_disc_stack(wav_disc_layout(cfg.wav_widths), cfg.leak, rng);
    for (int d = 1; d <= 3; ++d)
        e.sub.push_back(make_disc_stack(sub_disc_layout(cfg.sub_widths, cfg.bands, d), cfg.leak,
                                        rng));
    return e;
}

}  // namespace dbmif
