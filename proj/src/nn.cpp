#include "dbmif/nn.hpp"

#include <cmath>

namespace dbmif {

Tensor Conv1d::effective_weight() const {
    return normalized ? weight_norm(direction, magnitude) : direction;
}

Tensor Conv1d::forward(const Tensor& x) const {
    return conv1d(x, effective_weight(), bias, geom);
}

void Conv1d::register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".direction", direction);
    if (normalized) reg.add(prefix + ".magnitude", magnitude);
    reg.add(prefix + ".bias", bias);
}

Conv1d make_conv1d(int in_ch, int out_ch, int kernel, Conv1dGeom geom, bool weight_normed,
                   std::mt19937_64& rng) {
    if (in_ch % geom.groups != 0 || out_ch % geom.groups != 0)
        throw config_error(cat("conv1d: channels ", in_ch, "->", out_ch, " not divisible by ",
                               geom.groups, " groups"));
    Conv1d c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kernel = kernel;
    c.geom = geom;
    c.normalized = weight_normed;
    const int64_t fan_in = static_cast<int64_t>(in_ch / geom.groups) * kernel;
    const double stdev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    c.direction = Tensor::randn({out_ch, in_ch / geom.groups, kernel}, rng, stdev, true);
    if (weight_normed) {
        std::vector<double> norms(static_cast<size_t>(out_ch));
        const std::vector<double>& dv = c.direction.values();
        for (int o = 0; o < out_ch; ++o) {
            double s = 0.0;
            for (int64_t i = 0; i < fan_in; ++i) {
                const double v = dv[static_cast<size_t>(o * fan_in + i)];
                s += v * v;
            }
            norms[static_cast<size_t>(o)] = std::sqrt(s);
        }
        c.magnitude = Tensor::from_values({out_ch}, std::move(norms), true);
    }
    c.bias = Tensor::zeros({out_ch}, true);
    return c;
}

Tensor ConvTranspose1d::forward(const Tensor& x) const {
    return conv1d_transpose(x, weight, bias, stride, padding);
}

void ConvTranspose1d::register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".weight", weight);
    reg.add(prefix + ".bias", bias);
}

ConvTranspose1d make_conv_transpose1d(int in_ch, int out_ch, int kernel, int stride, int padding,
                                      std::mt19937_64& rng) {
    ConvTranspose1d c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kernel = kernel;
    c.stride = stride;
    c.padding = padding;
    const double stdev = 1.0 / std::sqrt(static_cast<double>(in_ch) * kernel);
    c.weight = Tensor::randn({in_ch, out_ch, kernel}, rng, stdev, true);
    c.bias = Tensor::zeros({out_ch}, true);
    return c;
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".weight", weight);
    reg.add(prefix + ".bias", bias);
}

Linear make_linear(int in_dim, int out_dim, std::mt19937_64& rng, double stdev_scale) {
    Linear l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    const double stdev = stdev_scale / std::sqrt(static_cast<double>(in_dim));
    l.weight = Tensor::randn({out_dim, in_dim}, rng, stdev, true);
    l.bias = Tensor::zeros({out_dim}, true);
    return l;
}

int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

}  // namespace dbmif
