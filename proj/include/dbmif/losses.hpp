#pragma once

#include <vector>

#include "dbmif/discriminator.hpp"
#include "dbmif/tensor.hpp"

namespace dbmif {

// One entry per discriminator, one outer vector entry per batch example.
using EnsembleOutputs = std::vector<ConvStackDisc::Output>;

// Hinge discriminator objective: sum over discriminators of
// mean(max(0, 1 - D(y))) + mean(max(0, 1 + D(y_hat))), where the mean runs
// over the score map and the batch.
Tensor disc_loss(const std::vector<EnsembleOutputs>& real,
                 const std::vector<EnsembleOutputs>& fake);

// Generator adversarial objective: sum over discriminators of
// mean(max(0, 1 - D(y_hat))).
Tensor gen_adv_loss(const std::vector<EnsembleOutputs>& fake);

// L1 distance between real and generated intermediate activations, each
// feature map normalized by its element count, summed over hidden layers and
// discriminators, averaged over the batch.
Tensor feature_matching_loss(const std::vector<EnsembleOutputs>& real,
                             const std::vector<EnsembleOutputs>& fake);

// adv + lambda * fm.
Tensor gen_total_loss(const Tensor& adv, const Tensor& fm, double lambda);

// Plain-number view of one step's losses for logging.
struct LossReport {
    double l_d = 0.0;
    double l_g_adv = 0.0;
    double l_g_fm = 0.0;
    double l_g = 0.0;
    double lambda = 0.0;
};

}  // namespace dbmif
