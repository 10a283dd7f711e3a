#include "dbmif/losses.hpp"

namespace dbmif {

static void check_batch(const std::vector<EnsembleOutputs>& real,
                        const std::vector<EnsembleOutputs>& fake) {
    if (real.empty() || real.size() != fake.size())
        throw precondition_error(cat("loss: batch sizes differ, ", real.size(), " real vs ",
                                     fake.size(), " fake"));
    for (size_t n = 0; n < real.size(); ++n) {
        if (real[n].size() != fake[n].size())
            throw precondition_error("loss: discriminator counts differ between real and fake");
        for (size_t k = 0; k < real[n].size(); ++k) {
            if (real[n][k].score.shape() != fake[n][k].score.shape())
                throw precondition_error(cat("loss: score shapes differ at discriminator ", k,
                                             ": ", shape_str(real[n][k].score.shape()), " vs ",
                                             shape_str(fake[n][k].score.shape())));
        }
    }
}

// mean over the batch of per-example scalars
static Tensor batch_mean(std::vector<Tensor> vals) {
    Tensor acc = vals[0];
    for (size_t i = 1; i < vals.size(); ++i) acc = add(acc, vals[i]);
    return mul_scalar(acc, 1.0 / static_cast<double>(vals.size()));
}

Tensor disc_loss(const std::vector<EnsembleOutputs>& real,
                 const std::vector<EnsembleOutputs>& fake) {
    check_batch(real, fake);
    const size_t discs = real[0].size();
    Tensor total;
    for (size_t k = 0; k < discs; ++k) {
        std::vector<Tensor> real_hinge, fake_hinge;
        for (size_t n = 0; n < real.size(); ++n) {
            real_hinge.push_back(mean(relu(sub(Tensor::scalar(1.0), real[n][k].score))));
            fake_hinge.push_back(mean(relu(add_scalar(fake[n][k].score, 1.0))));
        }
        Tensor term = add(batch_mean(std::move(real_hinge)), batch_mean(std::move(fake_hinge)));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Tensor gen_adv_loss(const std::vector<EnsembleOutputs>& fake) {
    if (fake.empty()) throw precondition_error("loss: empty batch");
    const size_t discs = fake[0].size();
    Tensor total;
    for (size_t k = 0; k < discs; ++k) {
        std::vector<Tensor> hinge;
        for (size_t n = 0; n < fake.size(); ++n)
            hinge.push_back(mean(relu(sub(Tensor::scalar(1.0), fake[n][k].score))));
        Tensor term = batch_mean(std::move(hinge));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

Tensor feature_matching_loss(const std::vector<EnsembleOutputs>& real,
                             const std::vector<EnsembleOutputs>& fake) {
    check_batch(real, fake);
    const size_t discs = real[0].size();
    Tensor total;
    for (size_t k = 0; k < discs; ++k) {
        for (size_t n = 0; n < real.size(); ++n)
            if (real[n][k].features.size() != fake[n][k].features.size())
                throw precondition_error(cat("loss: feature counts differ at discriminator ", k));
        const size_t feats = real[0][k].features.size();
        for (size_t i = 0; i < feats; ++i) {
            std::vector<Tensor> dist;
            for (size_t n = 0; n < real.size(); ++n) {
                const Tensor& fr = real[n][k].features[i];
                const Tensor& ff = fake[n][k].features[i];
                if (fr.shape() != ff.shape())
                    throw precondition_error(cat("loss: feature ", i, " of discriminator ", k,
                                                 " has shape ", shape_str(fr.shape()),
                                                 " real vs ", shape_str(ff.shape()), " fake"));
                dist.push_back(mean(abs(sub(fr, ff))));
            }
            Tensor term = batch_mean(std::move(dist));
            total = total.defined() ? add(total, term) : term;
        }
    }
    return total;
}

Tensor gen_total_loss(const Tensor& adv, const Tensor& fm, double lambda) {
    if (lambda < 0.0) throw precondition_error("loss: negative feature-matching weight");
    return add(adv, mul_scalar(fm, lambda));
}

}  // namespace dbmif
