#pragma once

#include <cstdint>
#include <vector>

#include "dbmif/tensor.hpp"

namespace dbmif {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
    double lr_floor = 0.0;       // cosine anneals from lr down to this
    int64_t total_steps = 1;     // horizon of the cosine schedule
};

// Cosine-annealed LR: floor + (lr-floor) * (1 + cos(pi * t/T)) / 2, clamped at T.
double cosine_lr(const AdamConfig& cfg, int64_t steps_done);

class Adam {
  public:
    // `names` (when given) must parallel `params`; used in error messages.
    Adam(std::vector<Tensor> params, AdamConfig cfg, std::vector<std::string> names = {});

    double current_lr() const { return cosine_lr(cfg_, steps_done_); }
    int64_t steps_done() const { return steps_done_; }
    const AdamConfig& config() const { return cfg_; }

    // Bias-corrected update from each parameter's accumulated gradient,
    // then zeroes the gradients and advances the schedule.  A parameter
    // that never received a gradient is a state error; materialize zeros
    // upstream if a head is intentionally unused.
    void step();

  private:
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int64_t steps_done_ = 0;
};

}  // namespace dbmif
