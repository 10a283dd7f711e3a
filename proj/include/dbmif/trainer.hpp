#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dbmif/checkpoint.hpp"
#include "dbmif/datapipe.hpp"
#include "dbmif/discriminator.hpp"
#include "dbmif/generator.hpp"
#include "dbmif/losses.hpp"
#include "dbmif/optim.hpp"

namespace dbmif {

struct TrainConfig {
    uint64_t seed = 1;
    int64_t corpus_size = 4;
    int64_t batch_size = 4;
    int64_t epochs = 200;
    double lr = 3e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double lambda_fm = 1000.0;
    int width_scale = 4;      // divide generator widths; 1 selects the published size
    double dbi_tol = 1e-4;
    int dbi_kmax = 50;
    int64_t crop = kSliceSamples;  // leading samples of each pair used per step
    std::string out_dir;

    void validate() const;
    int64_t steps_per_epoch() const;
    int64_t total_steps() const;
};

// Line-based `key = value` text.  Unknown or repeated keys are rejected;
// blank lines and lines starting with '#' are skipped.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig parse_train_config(const std::string& path);

struct TrainStepReport {
    int64_t step = 0;
    LossReport losses;
    double lr = 0.0;       // rate applied by this step's updates
    double wall_ms = 0.0;
};

// One fixed-width record per step; stable across reruns with the same seed
// in 32-bit single-threaded mode.
std::string format_log_line(const TrainStepReport& r);

class Trainer {
  public:
    Trainer(const TrainConfig& cfg, const FilterBank& bank);

    // Called between phases so tests can checksum parameters mid-step.
    using PhaseProbe = std::function<void(const std::string& phase)>;

    // One alternating update: generator forward, discriminator step on
    // (real, detached fake), then generator step against the refreshed
    // discriminators.  Both cosine schedules advance by one.
    TrainStepReport train_step(const std::vector<const PairedExample*>& batch,
                               const PhaseProbe& probe = nullptr);

    // Epoch loop over the corpus with seed-derived batch order; writes one
    // log line per step and saves checkpoints to cfg.out_dir if set.
    std::vector<TrainStepReport> fit(const std::vector<PairedExample>& corpus,
                                     std::ostream& log);

    std::vector<double> enhance(const std::vector<double>& ac,
                                const std::vector<double>& bc) const;

    void save(const std::string& dir) const;
    void load(const std::string& dir);

    Generator& generator() { return gen_; }
    DiscEnsemble& discriminators() { return disc_; }
    ParamRegistry& gen_params() { return gen_reg_; }
    ParamRegistry& disc_params() { return disc_reg_; }
    const TrainConfig& config() const { return cfg_; }
    int64_t steps_done() const { return step_count_; }

  private:
    std::vector<Tensor> unused_head_params() const;

    TrainConfig cfg_;
    const FilterBank* bank_ = nullptr;
    Generator gen_;
    DiscEnsemble disc_;
    ParamRegistry gen_reg_, disc_reg_;
    std::unique_ptr<Adam> opt_g_, opt_d_;
    int64_t step_count_ = 0;
};

// Full run from a config: synthesize the corpus, train, checkpoint.  Runs in
// 32-bit mode.  Returns the per-step reports (also written to `log`).
std::vector<TrainStepReport> run_training(const TrainConfig& cfg, std::ostream& log);

// Full enhancement pipeline: pad both inputs so the analysis frame count is
// a multiple of 16 (plus one filter length so the tail is represented),
// analyze, run the generator, synthesize, trim to the input length.  Runs in
// 32-bit mode with gradients off.
std::vector<double> enhance_waveform(const Generator& gen, const FilterBank& bank,
                                     const std::vector<double>& ac,
                                     const std::vector<double>& bc);

}  // namespace dbmif
