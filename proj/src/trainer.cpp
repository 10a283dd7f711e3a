#include "dbmif/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dbmif/common.hpp"
#include "dbmif/metrics.hpp"

namespace dbmif {

// --- configuration ---

void TrainConfig::validate() const {
    if (corpus_size < 1) throw config_error(cat("config: corpus_size must be >= 1, got ", corpus_size));
    if (batch_size < 1) throw config_error(cat("config: batch_size must be >= 1, got ", batch_size));
    if (epochs < 1) throw config_error(cat("config: epochs must be >= 1, got ", epochs));
    if (lr <= 0.0) throw config_error(cat("config: lr must be positive, got ", lr));
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw config_error(cat("config: betas must lie in [0,1), got ", beta1, ", ", beta2));
    if (lambda_fm < 0.0) throw config_error(cat("config: lambda_fm must be >= 0, got ", lambda_fm));
    if (width_scale < 1) throw config_error(cat("config: width_scale must be >= 1, got ", width_scale));
    if (dbi_kmax < 2) throw config_error(cat("config: dbi_kmax must be >= 2, got ", dbi_kmax));
    if (dbi_tol < 0.0) throw config_error(cat("config: dbi_tol must be >= 0, got ", dbi_tol));
    if (crop < 64 || crop % 64 != 0)
        throw config_error(cat("config: crop must be a positive multiple of 64 samples, got ", crop));
    if (crop > kSliceSamples)
        throw config_error(cat("config: crop ", crop, " exceeds the pair length ", kSliceSamples));
}

int64_t TrainConfig::steps_per_epoch() const {
    return (corpus_size + batch_size - 1) / batch_size;
}

int64_t TrainConfig::total_steps() const { return epochs * steps_per_epoch(); }

namespace {

int64_t parse_int_value(const std::string& key, const std::string& text) {
    size_t pos = 0;
    int64_t v = 0;
    try {
        v = std::stoll(text, &pos);
    } catch (const std::exception&) {
        throw config_error(cat("config: bad integer for ", key, ": '", text, "'"));
    }
    if (pos != text.size()) throw config_error(cat("config: bad integer for ", key, ": '", text, "'"));
    return v;
}

double parse_double_value(const std::string& key, const std::string& text) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &pos);
    } catch (const std::exception&) {
        throw config_error(cat("config: bad number for ", key, ": '", text, "'"));
    }
    if (pos != text.size()) throw config_error(cat("config: bad number for ", key, ": '", text, "'"));
    return v;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw config_error(cat("config line ", lineno, ": expected 'key = value', got '",
                                   stripped, "'"));
        const std::string key = trim(stripped.substr(0, eq));
        const std::string val = trim(stripped.substr(eq + 1));
        if (key.empty() || val.empty())
            throw config_error(cat("config line ", lineno, ": empty key or value"));
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw config_error(cat("config line ", lineno, ": repeated key '", key, "'"));
        seen.push_back(key);
        if (key == "seed") {
            cfg.seed = static_cast<uint64_t>(parse_int_value(key, val));
        } else if (key == "corpus_size") {
            cfg.corpus_size = parse_int_value(key, val);
        } else if (key == "batch_size") {
            cfg.batch_size = parse_int_value(key, val);
        } else if (key == "epochs") {
            cfg.epochs = parse_int_value(key, val);
        } else if (key == "lr") {
            cfg.lr = parse_double_value(key, val);
        } else if (key == "beta1") {
            cfg.beta1 = parse_double_value(key, val);
        } else if (key == "beta2") {
            cfg.beta2 = parse_double_value(key, val);
        } else if (key == "lambda_fm") {
            cfg.lambda_fm = parse_double_value(key, val);
        } else if (key == "width_scale") {
            cfg.width_scale = static_cast<int>(parse_int_value(key, val));
        } else if (key == "dbi_tol") {
            cfg.dbi_tol = parse_double_value(key, val);
        } else if (key == "dbi_kmax") {
            cfg.dbi_kmax = static_cast<int>(parse_int_value(key, val));
        } else if (key == "crop") {
            cfg.crop = parse_int_value(key, val);
        } else if (key == "out_dir") {
            cfg.out_dir = val;
        } else {
            throw config_error(cat("config line ", lineno, ": unknown key '", key, "'"));
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error(cat("config: cannot open ", path));
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_train_config_text(buf.str());
}

std::string format_log_line(const TrainStepReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "step=%lld L_D=%.9e L_G_adv=%.9e L_G_fm=%.9e L_G=%.9e lr=%.9e",
                  static_cast<long long>(r.step), r.losses.l_d, r.losses.l_g_adv,
                  r.losses.l_g_fm, r.losses.l_g, r.lr);
    return std::string(buf);
}

// --- trainer ---

Trainer::Trainer(const TrainConfig& cfg, const FilterBank& bank) : cfg_(cfg), bank_(&bank) {
    cfg_.validate();
    GeneratorConfig gcfg;
    gcfg.bands = bank.bands;
    gcfg.dbi_max_iters = cfg_.dbi_kmax;
    gcfg.dbi_tol = cfg_.dbi_tol;
    gcfg = gcfg.scaled(cfg_.width_scale);
    std::mt19937_64 gen_rng(derive_seed(cfg_.seed, 0xD00D0001));
    gen_ = make_generator(gcfg, gen_rng);

    DiscConfig dcfg = cfg_.width_scale == 1 ? DiscConfig{} : DiscConfig::tiny();
    dcfg.bands = bank.bands;
    std::mt19937_64 disc_rng(derive_seed(cfg_.seed, 0xD00D0002));
    disc_ = make_disc_ensemble(dcfg, bank, disc_rng);

    if (cfg_.crop < disc_.wav.receptive_field)
        throw config_error(cat("config: crop ", cfg_.crop, " is under the waveform ",
                               "discriminator receptive field ", disc_.wav.receptive_field));
    for (const ConvStackDisc& d : disc_.sub)
        if (cfg_.crop / bank.bands < d.receptive_field)
            throw config_error(cat("config: crop ", cfg_.crop, " gives ", cfg_.crop / bank.bands,
                                   " frames, under a subband receptive field of ",
                                   d.receptive_field));

    gen_.register_params(gen_reg_, "gen");
    disc_.register_params(disc_reg_, "disc");

    AdamConfig acfg;
    acfg.lr = cfg_.lr;
    acfg.beta1 = cfg_.beta1;
    acfg.beta2 = cfg_.beta2;
    acfg.total_steps = cfg_.total_steps();
    std::vector<std::string> gen_names, disc_names;
    for (const auto& [name, t] : gen_reg_.entries()) gen_names.push_back(name);
    for (const auto& [name, t] : disc_reg_.entries()) disc_names.push_back(name);
    opt_g_ = std::make_unique<Adam>(gen_reg_.tensors(), acfg, std::move(gen_names));
    opt_d_ = std::make_unique<Adam>(disc_reg_.tensors(), acfg, std::move(disc_names));
}

std::vector<Tensor> Trainer::unused_head_params() const {
    // The last decoder gate recalibrates all three streams, but only the
    // fusion stream continues to the output head, so the four convolutions
    // feeding the unimodal outputs get no gradient from the objective.
    const CrossGate& g = gen_.dec_gate.back();
    std::vector<Tensor> out;
    for (const Conv1d* c : {&g.gate_fa, &g.val_a, &g.gate_fb, &g.val_b}) {
        out.push_back(c->direction);
        if (c->normalized) out.push_back(c->magnitude);
        out.push_back(c->bias);
    }
    return out;
}

TrainStepReport Trainer::train_step(const std::vector<const PairedExample*>& batch,
                                    const PhaseProbe& probe) {
    if (batch.empty()) throw precondition_error("train_step: empty batch");
    const auto t0 = std::chrono::steady_clock::now();
    Tape::instance().reset();
    ++step_count_;

    // Phase 1: generator forward, kept on tape for the generator update.
    std::vector<Tensor> real, fake;
    real.reserve(batch.size());
    fake.reserve(batch.size());
    for (const PairedExample* ex : batch) {
        if (static_cast<int64_t>(ex->ac.size()) < cfg_.crop)
            throw precondition_error(cat("train_step: example of ", ex->ac.size(),
                                         " samples shorter than crop ", cfg_.crop));
        const std::vector<double> ac(ex->ac.begin(), ex->ac.begin() + cfg_.crop);
        const std::vector<double> bc(ex->bc.begin(), ex->bc.begin() + cfg_.crop);
        std::vector<double> clean(ex->clean.begin(), ex->clean.begin() + cfg_.crop);
        Tensor xa = subband_tensor(analyze(ac, *bank_));
        Tensor xb = subband_tensor(analyze(bc, *bank_));
        Tensor sub_hat = gen_.forward(xa, xb);
        fake.push_back(pqmf_synthesize_op(sub_hat, *bank_));
        real.push_back(Tensor::from_values({1, cfg_.crop}, std::move(clean)));
    }
    if (probe) probe("forward");

    const double lr_used = opt_d_->current_lr();

    // Phase 2: discriminator update on (real, detached fake).
    std::vector<EnsembleOutputs> d_real, d_fake;
    d_real.reserve(batch.size());
    d_fake.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        d_real.push_back(disc_.forward(real[i]));
        d_fake.push_back(disc_.forward(fake[i].detach()));
    }
    Tensor l_d = disc_loss(d_real, d_fake);
    if (!std::isfinite(l_d.item()))
        throw numeric_error(cat("train step ", step_count_, ": non-finite discriminator loss ",
                                l_d.item()));
    backward(l_d);
    opt_d_->step();
    if (probe) probe("disc_step");

    // Phase 3: generator update against the refreshed discriminators.  The
    // real-side features are recomputed off-tape so feature matching treats
    // them as constants; discriminator parameters take no gradient here.
    disc_.set_requires_grad(false);
    std::vector<EnsembleOutputs> g_real, g_fake;
    g_real.reserve(batch.size());
    g_fake.reserve(batch.size());
    {
        NoGradGuard off;
        for (size_t i = 0; i < batch.size(); ++i) g_real.push_back(disc_.forward(real[i]));
    }
    for (size_t i = 0; i < batch.size(); ++i) g_fake.push_back(disc_.forward(fake[i]));
    Tensor adv = gen_adv_loss(g_fake);
    Tensor fm = feature_matching_loss(g_real, g_fake);
    Tensor l_g = gen_total_loss(adv, fm, cfg_.lambda_fm);
    if (!std::isfinite(l_g.item()) || !std::isfinite(adv.item()) || !std::isfinite(fm.item()))
        throw numeric_error(cat("train step ", step_count_, ": non-finite generator loss adv=",
                                adv.item(), " fm=", fm.item()));
    backward(l_g);
    for (Tensor t : unused_head_params()) t.materialize_zero_grad();
    opt_g_->step();
    disc_.set_requires_grad(true);
    if (probe) probe("gen_step");

    TrainStepReport report;
    report.step = step_count_;
    report.losses.l_d = l_d.item();
    report.losses.l_g_adv = adv.item();
    report.losses.l_g_fm = fm.item();
    report.losses.l_g = l_g.item();
    report.losses.lambda = cfg_.lambda_fm;
    report.lr = lr_used;
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
    return report;
}

std::vector<TrainStepReport> Trainer::fit(const std::vector<PairedExample>& corpus,
                                          std::ostream& log) {
    if (corpus.empty()) throw precondition_error("fit: empty corpus");
    std::vector<TrainStepReport> reports;
    reports.reserve(static_cast<size_t>(cfg_.total_steps()));
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int64_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(cfg_.seed, 0xE0000000u + static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg_.batch_size)) {
            std::vector<const PairedExample*> batch;
            const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg_.batch_size));
            for (size_t i = at; i < end; ++i) batch.push_back(&corpus[order[i]]);
            TrainStepReport r = train_step(batch);
            log << format_log_line(r) << '\n';
            reports.push_back(r);
        }
    }
    if (!cfg_.out_dir.empty()) save(cfg_.out_dir);
    return reports;
}

std::vector<double> Trainer::enhance(const std::vector<double>& ac,
                                     const std::vector<double>& bc) const {
    return enhance_waveform(gen_, *bank_, ac, bc);
}

void Trainer::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    save_checkpoint(dir + "/gen.ckpt", gen_reg_);
    save_checkpoint(dir + "/disc.ckpt", disc_reg_);
}

void Trainer::load(const std::string& dir) {
    load_checkpoint(dir + "/gen.ckpt", gen_reg_);
    load_checkpoint(dir + "/disc.ckpt", disc_reg_);
}

std::vector<TrainStepReport> run_training(const TrainConfig& cfg, std::ostream& log) {
    PrecisionGuard f32(Precision::f32);
    std::vector<PairedExample> corpus = make_synthetic_corpus(cfg.corpus_size, cfg.seed);
    Trainer trainer(cfg, default_bank());
    return trainer.fit(corpus, log);
}

std::vector<double> enhance_waveform(const Generator& gen, const FilterBank& bank,
                                     const std::vector<double>& ac,
                                     const std::vector<double>& bc) {
    if (ac.size() != bc.size())
        throw precondition_error(cat("enhance: modality lengths differ: ", ac.size(), " vs ",
                                     bc.size()));
    if (ac.empty()) throw precondition_error("enhance: empty input");
    PrecisionGuard f32(Precision::f32);
    NoGradGuard off;
    const int64_t n = static_cast<int64_t>(ac.size());
    const int64_t group = static_cast<int64_t>(bank.bands) * 16;
    int64_t padded = n + bank.taps - 1;  // flush so the tail reaches the subbands
    padded = (padded + group - 1) / group * group;
    std::vector<double> a(ac), b(bc);
    a.resize(static_cast<size_t>(padded), 0.0);
    b.resize(static_cast<size_t>(padded), 0.0);
    Tensor xa = subband_tensor(analyze(a, bank));
    Tensor xb = subband_tensor(analyze(b, bank));
    Tensor sub_hat = gen.forward(xa, xb);
    std::vector<double> y = synthesize(subband_from_tensor(sub_hat, padded), bank);
    y.resize(static_cast<size_t>(n));
    return y;
}

}  // namespace dbmif
