#pragma once

#include <random>
#include <string>

#include "dbmif/checkpoint.hpp"
#include "dbmif/tensor.hpp"

namespace dbmif {

// One-dimensional convolution layer over (channels, frames) maps, optionally
// weight-normalized (weight = magnitude * direction / per-row norm).  Without
// normalization the direction tensor is the weight itself.
struct Conv1d {
    Tensor direction;  // (out, in/groups, kernel)
    Tensor magnitude;  // (out), defined only when normalized
    Tensor bias;       // (out)
    Conv1dGeom geom;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    bool normalized = false;

    Tensor forward(const Tensor& x) const;
    Tensor effective_weight() const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Directions are drawn from N(0, 1/sqrt(fan_in)); magnitudes start at the
// direction row norms so the initial effective weight equals the direction;
// biases start at zero.
Conv1d make_conv1d(int in_ch, int out_ch, int kernel, Conv1dGeom geom, bool weight_normed,
                   std::mt19937_64& rng);

// Transposed convolution layer (decoder upsampling).  Weight is plain.
struct ConvTranspose1d {
    Tensor weight;  // (in, out, kernel)
    Tensor bias;    // (out)
    int stride = 1;
    int padding = 0;
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;

    Tensor forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

ConvTranspose1d make_conv_transpose1d(int in_ch, int out_ch, int kernel, int stride, int padding,
                                      std::mt19937_64& rng);

// Dense map y = W x + b on (features, columns) tensors.
struct Linear {
    Tensor weight;  // (out, in)
    Tensor bias;    // (out)
    int in_dim = 0;
    int out_dim = 0;

    Tensor forward(const Tensor& x) const;
    void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// stdev_scale multiplies the default 1/sqrt(fan_in); recurrent maps pass
// < 1 to start inside the contraction regime.
Linear make_linear(int in_dim, int out_dim, std::mt19937_64& rng, double stdev_scale = 1.0);

// Padding that keeps ceil(T/stride) frames for odd kernels at any dilation,
// and for the even encoder kernel 8 at stride 2 gives exact halving.
int same_padding(int kernel, int dilation);

}  // namespace dbmif
