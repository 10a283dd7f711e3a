#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbmif/common.hpp"
#include "dbmif/datapipe.hpp"
#include "dbmif/gradcheck.hpp"
#include "dbmif/metrics.hpp"
#include "dbmif/pqmf.hpp"
#include "dbmif/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dbmif;

int cmd_train(const std::string& config_path) {
    TrainConfig cfg = parse_train_config(config_path);
    std::vector<TrainStepReport> reports;
    if (cfg.out_dir.empty()) {
        reports = run_training(cfg, std::cout);
    } else {
        fs::create_directories(cfg.out_dir);
        std::ofstream log(cfg.out_dir + "/train.log");
        if (!log) throw io_error(cat("train: cannot open ", cfg.out_dir, "/train.log"));
        struct Tee : std::streambuf {
            std::streambuf *a, *b;
            int overflow(int c) override {
                if (c != EOF) {
                    a->sputc(static_cast<char>(c));
                    b->sputc(static_cast<char>(c));
                }
                return c;
            }
        } tee;
        tee.a = std::cout.rdbuf();
        tee.b = log.rdbuf();
        std::ostream both(&tee);
        reports = run_training(cfg, both);
    }
    std::fprintf(stderr, "trained %zu steps\n", reports.size());
    return 0;
}

int cmd_enhance(const std::string& ac_path, const std::string& bc_path,
                const std::string& ckpt_path, const std::string& out_path, int width_scale) {
    WavData ac = read_wav(ac_path);
    WavData bc = read_wav(bc_path);
    if (ac.rate != kSampleRate || bc.rate != kSampleRate)
        throw io_error(cat("enhance: expected ", kSampleRate, " Hz inputs, got ", ac.rate,
                           " and ", bc.rate));
    if (ac.samples.size() != bc.samples.size())
        throw precondition_error(cat("enhance: length mismatch: ", ac.samples.size(), " vs ",
                                     bc.samples.size()));
    GeneratorConfig gcfg;
    gcfg = gcfg.scaled(width_scale);
    std::mt19937_64 rng(0);
    Generator gen = make_generator(gcfg, rng);
    ParamRegistry reg;
    gen.register_params(reg, "gen");
    load_checkpoint(ckpt_path, reg);
    std::vector<double> y = enhance_waveform(gen, default_bank(), ac.samples, bc.samples);
    write_wav(out_path, y, kSampleRate);
    std::fprintf(stderr, "wrote %s (%zu samples)\n", out_path.c_str(), y.size());
    return 0;
}

struct EvalRow {
    std::string id;
    double noisy_db = 0.0;
    double enhanced_db = 0.0;
};

int cmd_eval(const std::string& ref_dir, const std::string& est_dir, const std::string& csv_path) {
    std::vector<std::string> ids;
    for (const fs::directory_entry& e : fs::directory_iterator(ref_dir)) {
        const std::string name = e.path().filename().string();
        const std::string tail = "_clean.wav";
        if (name.size() > tail.size() && name.substr(name.size() - tail.size()) == tail)
            ids.push_back(name.substr(0, name.size() - tail.size()));
    }
    if (ids.empty()) throw io_error(cat("eval: no *_clean.wav files under ", ref_dir));
    std::sort(ids.begin(), ids.end());

    std::vector<EvalRow> rows;
    for (const std::string& id : ids) {
        WavData clean = read_wav(ref_dir + "/" + id + "_clean.wav");
        WavData noisy = read_wav(ref_dir + "/" + id + "_ac.wav");
        std::string est_path = est_dir + "/" + id + ".wav";
        if (!fs::exists(est_path)) est_path = est_dir + "/" + id + "_enhanced.wav";
        WavData est = read_wav(est_path);
        EvalRow row;
        row.id = id;
        row.noisy_db = si_sdr(clean.samples, noisy.samples);
        row.enhanced_db = si_sdr(clean.samples, est.samples);
        rows.push_back(row);
    }

    std::printf("%-12s %12s %12s %10s\n", "id", "si_sdr_ac", "si_sdr_est", "delta");
    double sum_noisy = 0.0, sum_est = 0.0;
    for (const EvalRow& r : rows) {
        std::printf("%-12s %12.3f %12.3f %10.3f\n", r.id.c_str(), r.noisy_db, r.enhanced_db,
                    r.enhanced_db - r.noisy_db);
        sum_noisy += r.noisy_db;
        sum_est += r.enhanced_db;
    }
    const double n = static_cast<double>(rows.size());
    std::printf("%-12s %12.3f %12.3f %10.3f\n", "mean", sum_noisy / n, sum_est / n,
                (sum_est - sum_noisy) / n);

    if (!csv_path.empty()) {
        std::ofstream csv(csv_path);
        if (!csv) throw io_error(cat("eval: cannot open ", csv_path));
        csv << "id,si_sdr_noisy,si_sdr_enhanced,delta\n";
        for (const EvalRow& r : rows) {
            char line[160];
            std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f\n", r.id.c_str(), r.noisy_db,
                          r.enhanced_db, r.enhanced_db - r.noisy_db);
            csv << line;
        }
    }
    return 0;
}

int cmd_design_pqmf(const std::string& taps_path) {
    PrototypeFilter proto = design_prototype(64, 4);
    std::ofstream out(taps_path);
    if (!out) throw io_error(cat("design-pqmf: cannot open ", taps_path));
    for (double t : proto.taps) {
        char line[64];
        std::snprintf(line, sizeof(line), "%.17g\n", t);
        out << line;
    }
    std::fprintf(stderr, "wrote %zu taps (cutoff %.8f)\n", proto.taps.size(), proto.cutoff);
    return 0;
}

int cmd_forge(int64_t n, uint64_t seed, const std::string& out_dir) {
    std::vector<PairedExample> corpus = make_synthetic_corpus(n, seed);
    fs::create_directories(out_dir);
    std::ofstream manifest(out_dir + "/manifest.txt");
    if (!manifest) throw io_error(cat("forge: cannot open ", out_dir, "/manifest.txt"));
    for (size_t i = 0; i < corpus.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "%04zu", i);
        const PairedExample& ex = corpus[i];
        write_wav(cat(out_dir, "/", id, "_clean.wav"), ex.clean);
        write_wav(cat(out_dir, "/", id, "_ac.wav"), ex.ac);
        write_wav(cat(out_dir, "/", id, "_bc.wav"), ex.bc);
        char line[96];
        std::snprintf(line, sizeof(line), "%s %.4f %" PRIu64 "\n", id, ex.snr_db, ex.seed);
        manifest << line;
    }
    std::fprintf(stderr, "wrote %zu example triples to %s\n", corpus.size(), out_dir.c_str());
    return 0;
}

int cmd_gradcheck() {
    std::vector<GradCheckResult> results = run_gradient_suite(5);
    int failures = 0;
    for (const GradCheckResult& r : results) {
        if (!r.pass) {
            ++failures;
            std::printf("FAIL %-28s max_rel=%.3e over %" PRId64 " entries\n", r.name.c_str(),
                        r.max_rel_err, r.checked);
        }
    }
    std::printf("%zu checks, %d failures\n", results.size(), failures);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-branch multimodal speech enhancement toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    CLI::App* train = app.add_subcommand("train", "train from a key = value config file");
    train->add_option("--config", config_path, "config file path")->required();

    std::string ac_path, bc_path, ckpt_path, out_wav;
    int width_scale = 1;
    CLI::App* enhance = app.add_subcommand("enhance", "run the enhancement pipeline on a pair");
    enhance->add_option("--ac", ac_path, "air-conduction wav")->required();
    enhance->add_option("--bc", bc_path, "bone-conduction wav")->required();
    enhance->add_option("--ckpt", ckpt_path, "generator checkpoint file")->required();
    enhance->add_option("--out", out_wav, "output wav")->required();
    enhance->add_option("--width-scale", width_scale, "generator width divisor used in training");

    std::string ref_dir, est_dir, csv_path;
    CLI::App* eval = app.add_subcommand("eval", "score enhanced files against references");
    eval->add_option("--ref", ref_dir, "directory with {id}_clean.wav and {id}_ac.wav")->required();
    eval->add_option("--est", est_dir, "directory with {id}.wav estimates")->required();
    eval->add_option("--csv", csv_path, "optional per-utterance csv output");

    std::string taps_path;
    CLI::App* design = app.add_subcommand("design-pqmf", "emit the designed prototype taps");
    design->add_option("--taps", taps_path, "output text file, one tap per line")->required();

    int64_t forge_n = 0;
    uint64_t forge_seed = 0;
    std::string forge_dir;
    CLI::App* forge = app.add_subcommand("forge", "write a synthetic paired corpus");
    forge->add_option("--n", forge_n, "number of examples")->required();
    forge->add_option("--seed", forge_seed, "corpus seed")->required();
    forge->add_option("--out", forge_dir, "output directory")->required();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient battery");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path);
        if (enhance->parsed())
            return cmd_enhance(ac_path, bc_path, ckpt_path, out_wav, width_scale);
        if (eval->parsed()) return cmd_eval(ref_dir, est_dir, csv_path);
        if (design->parsed()) return cmd_design_pqmf(taps_path);
        if (forge->parsed()) return cmd_forge(forge_n, forge_seed, forge_dir);
        if (gradcheck->parsed()) return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
