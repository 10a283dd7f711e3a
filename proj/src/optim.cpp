#include "dbmif/optim.hpp"

#include <cmath>

namespace dbmif {

double cosine_lr(const AdamConfig& cfg, int64_t steps_done) {
    if (cfg.total_steps <= 0) return cfg.lr_floor;
    const int64_t t = steps_done < cfg.total_steps ? steps_done : cfg.total_steps;
    const double phase = M_PI * static_cast<double>(t) / static_cast<double>(cfg.total_steps);
    return cfg.lr_floor + (cfg.lr - cfg.lr_floor) * 0.5 * (1.0 + std::cos(phase));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg, std::vector<std::string> names)
    : params_(std::move(params)), names_(std::move(names)), cfg_(cfg) {
    if (cfg_.lr < 0 || cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
        throw config_error(cat("adam: bad hyperparameters lr=", cfg_.lr, " beta1=", cfg_.beta1,
                               " beta2=", cfg_.beta2));
    if (!names_.empty() && names_.size() != params_.size())
        throw config_error(cat("adam: ", names_.size(), " names for ", params_.size(),
                               " parameters"));
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.requires_grad())
            throw config_error("adam: parameter without requires_grad");
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
}

void Adam::step() {
    const double lr = current_lr();
    const int64_t t = steps_done_ + 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        if (!p.has_grad())
            throw precondition_error(cat("adam: parameter ",
                                         pi < names_.size() ? names_[pi] : cat("#", pi),
                                         " has no gradient"));
        const std::vector<double>& g = p.grad();
        std::vector<double>& vals = p.mutable_values();
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        for (size_t i = 0; i < vals.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] = round_scalar(vals[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        p.zero_grad();
    }
    ++steps_done_;
}

}  // namespace dbmif
