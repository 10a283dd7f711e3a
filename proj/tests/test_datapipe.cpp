#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include "dbmif/common.hpp"
#include "dbmif/datapipe.hpp"

using namespace dbmif;

namespace {

double rms(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p += v * v;
    return std::sqrt(p / static_cast<double>(x.size()));
}

double power(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p += v * v;
    return p;
}

std::vector<double> tone(double hz, int64_t len) {
    std::vector<double> x(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i)
        x[static_cast<size_t>(i)] = std::sin(2.0 * M_PI * hz * static_cast<double>(i) / 16000.0);
    return x;
}

// RMS over the tail, past the filter's settling transient.
double steady_rms(const std::vector<double>& x) {
    std::vector<double> tail(x.begin() + 4000, x.end());
    return rms(tail);
}

std::string temp_path(const char* name) { return std::string("/tmp/dbmif_test_") + name; }

}  // namespace

TEST_CASE("bone-conduction lowpass passes 200 Hz and crushes 4 kHz") {
    std::vector<double> low = tone(200.0, 16000);
    std::vector<double> high = tone(4000.0, 16000);
    const double low_db = 20.0 * std::log10(steady_rms(bc_lowpass(low)) / steady_rms(low));
    const double high_db = 20.0 * std::log10(steady_rms(bc_lowpass(high)) / steady_rms(high));
    CHECK(std::abs(low_db) <= 1.0);
    CHECK(high_db <= -30.0);
}

TEST_CASE("bone-conduction simulation keeps the input level") {
    std::mt19937_64 rng(3);
    std::vector<double> voice = make_clean_voice(16000, rng);
    std::vector<double> bc = simulate_bc(voice);
    REQUIRE(bc.size() == voice.size());
    CHECK(rms(bc) == doctest::Approx(rms(voice)).epsilon(1e-9));

    std::vector<double> silence(1000, 0.0);
    for (double v : simulate_bc(silence)) CHECK(v == 0.0);
}

TEST_CASE("mixing at 0 dB with the clean signal itself collapses back to it") {
    std::mt19937_64 rng(5);
    std::vector<double> clean = tone(440.0, 4000);
    std::vector<double> mix = mix_at_snr(clean, clean, 0.0, rng);
    // Equal powers give noise scale 1, the sum is 2x the clean signal, and
    // the RMS rescale halves it again.
    for (size_t i = 0; i < clean.size(); ++i)
        CHECK(mix[i] == doctest::Approx(clean[i]).epsilon(1e-12));
}

TEST_CASE("mixing hits the requested SNR against orthogonal noise") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    std::vector<double> clean = tone(650.0, 16000);
    for (double snr : {-15.0, -7.3, 0.0, 5.0}) {
        std::vector<double> noise(clean.size());
        for (double& v : noise) v = g(rng);
        // Remove the component along the clean signal so the achieved ratio
        // can be read back from a projection.
        double dot = 0.0;
        const double cp = power(clean);
        for (size_t i = 0; i < clean.size(); ++i) dot += noise[i] * clean[i];
        for (size_t i = 0; i < clean.size(); ++i) noise[i] -= dot / cp * clean[i];

        std::vector<double> mix = mix_at_snr(clean, noise, snr, rng);
        double mdot = 0.0;
        for (size_t i = 0; i < clean.size(); ++i) mdot += mix[i] * clean[i];
        const double alpha = mdot / cp;
        double resid = 0.0;
        for (size_t i = 0; i < clean.size(); ++i) {
            const double r = mix[i] - alpha * clean[i];
            resid += r * r;
        }
        const double achieved = 10.0 * std::log10(alpha * alpha * cp / resid);
        CHECK(std::abs(achieved - snr) <= 0.01);
        // The rescale leaves the mixture at the clean level.
        CHECK(std::abs(rms(mix) / rms(clean) - 1.0) <= 1e-6);
    }
}

TEST_CASE("mixing validates its inputs") {
    std::mt19937_64 rng(9);
    std::vector<double> clean = tone(440.0, 1000);
    CHECK_THROWS_AS(mix_at_snr(clean, tone(100.0, 999), 0.0, rng), precondition_error);
    CHECK_THROWS_AS(mix_at_snr(std::vector<double>(1000, 0.0), clean, 0.0, rng),
                    precondition_error);
    CHECK_THROWS_AS(mix_at_snr(clean, std::vector<double>(1000, 0.0), 0.0, rng),
                    precondition_error);
    CHECK_THROWS_AS(mix_at_snr({}, clean, 0.0, rng), precondition_error);
}

TEST_CASE("longer noise is cropped, not truncated") {
    std::mt19937_64 rng(11);
    std::vector<double> clean = tone(300.0, 2000);
    std::vector<double> noise(10000);
    std::normal_distribution<double> g;
    for (double& v : noise) v = g(rng);
    std::vector<double> mix = mix_at_snr(clean, noise, 0.0, rng);
    CHECK(mix.size() == clean.size());
}

TEST_CASE("slice boundaries carry complementary linear ramps") {
    std::vector<double> ones(20000, 1.0);
    std::vector<double> s = slice_and_fade(ones, 1000);
    REQUIRE(s.size() == 16000);
    for (int64_t i = 0; i < 800; ++i)
        CHECK(s[static_cast<size_t>(i)] == static_cast<double>(i) / 800.0);
    for (int64_t i = 800; i < 15200; ++i) CHECK(s[static_cast<size_t>(i)] == 1.0);
    for (int64_t i = 15200; i < 16000; ++i)
        CHECK(s[static_cast<size_t>(i)] == static_cast<double>(16000 - i) / 800.0);
    // The ramps from consecutive windows sum to one across the overlap.
    for (int64_t i = 0; i < 800; ++i)
        CHECK(s[static_cast<size_t>(i)] + s[static_cast<size_t>(15200 + i)] == 1.0);
}

TEST_CASE("slice offsets select the right window and are bounds-checked") {
    std::vector<double> x(40000);
    for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
    std::vector<double> s = slice_and_fade(x, 12345);
    CHECK(s[8000] == 12345.0 + 8000.0);  // interior sample passes through
    CHECK_THROWS_AS(slice_and_fade(x, -1), precondition_error);
    CHECK_THROWS_AS(slice_and_fade(x, 24001), precondition_error);
    CHECK_NOTHROW(slice_and_fade(x, 24000));
}

TEST_CASE("synthetic corpus is deterministic and well-formed") {
    std::vector<PairedExample> a = make_synthetic_corpus(4, 2026);
    std::vector<PairedExample> b = make_synthetic_corpus(4, 2026);
    REQUIRE(a.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(a[i].clean.size() == 16000);
        CHECK(a[i].ac.size() == 16000);
        CHECK(a[i].bc.size() == 16000);
        CHECK(a[i].clean == b[i].clean);
        CHECK(a[i].ac == b[i].ac);
        CHECK(a[i].bc == b[i].bc);
        CHECK(a[i].snr_db == b[i].snr_db);
        CHECK(a[i].snr_db >= -15.0);
        CHECK(a[i].snr_db <= 5.0);
    }
    // Different seeds produce different audio.
    std::vector<PairedExample> c = make_synthetic_corpus(1, 2027);
    CHECK(c[0].ac != a[0].ac);
    CHECK_THROWS_AS(make_synthetic_corpus(0, 1), precondition_error);
}

TEST_CASE("corpus examples honor the drawn SNR and keep the BC channel clean") {
    std::vector<PairedExample> corpus = make_synthetic_corpus(6, 99);
    for (const PairedExample& ex : corpus) {
        // The per-example seed replays the generation chain, giving access
        // to the pre-fade clean signal the mixer actually saw.
        std::mt19937_64 rng(ex.seed);
        std::vector<double> clean = make_clean_voice(16000, rng);
        CHECK(slice_and_fade(clean, 0) == ex.clean);

        const double measured =
            10.0 * std::log10(power(clean) / power(ex.noise_component));
        CHECK(std::abs(measured - ex.snr_db) <= 0.01);

        // BC is derived from the clean signal alone; no noise in that path.
        CHECK(slice_and_fade(simulate_bc(clean), 0) == ex.bc);

        // The AC channel sits at the clean level after the rescale.  The
        // fade touches clean and mixture identically, so the RMS ratio of
        // the faded pair still reads within the mixing tolerance scaled by
        // the fade's own power effect, which cancels between the two.
        const double ac_rms = rms(ex.ac);
        const double clean_rms_prefade = rms(clean);
        CHECK(ac_rms <= clean_rms_prefade * 1.001);
    }
}

TEST_CASE("wav files round-trip within quantization") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dist(-1.2, 1.2);  // includes clamped values
    std::vector<double> x(2048);
    for (double& v : x) v = dist(rng);
    const std::string path = temp_path("roundtrip.wav");
    write_wav(path, x);
    WavData back = read_wav(path);
    CHECK(back.rate == 16000);
    REQUIRE(back.samples.size() == x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double clamped = std::max(-1.0, std::min(1.0, x[i]));
        CHECK(std::abs(back.samples[i] - clamped) <= 0.5 / 32767.0 + 1e-12);
    }
    std::remove(path.c_str());
}

TEST_CASE("wav reader rejects foreign formats") {
    CHECK_THROWS_AS(read_wav("/tmp/dbmif_test_missing.wav"), io_error);

    const std::string garbage = temp_path("garbage.wav");
    {
        std::ofstream f(garbage, std::ios::binary);
        f << "this is not audio and runs long enough to pass the size check....";
    }
    CHECK_THROWS_AS(read_wav(garbage), io_error);
    std::remove(garbage.c_str());

    // Take a valid file and corrupt individual format fields.
    const std::string base = temp_path("valid.wav");
    write_wav(base, std::vector<double>(64, 0.25));
    std::ifstream in(base, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    const auto corrupt = [&bytes](size_t pos, char v, const char* name) {
        std::vector<char> mut = bytes;
        mut[pos] = v;
        const std::string path = temp_path(name);
        std::ofstream f(path, std::ios::binary);
        f.write(mut.data(), static_cast<std::streamsize>(mut.size()));
        f.close();
        return path;
    };
    // Offsets inside the fmt chunk: 20 format code, 22 channels, 34 bits.
    const std::string stereo = corrupt(22, 2, "stereo.wav");
    CHECK_THROWS_WITH_AS(read_wav(stereo), doctest::Contains("channel"), io_error);
    const std::string eight = corrupt(34, 8, "eightbit.wav");
    CHECK_THROWS_WITH_AS(read_wav(eight), doctest::Contains("bit"), io_error);
    const std::string fmt3 = corrupt(20, 3, "float.wav");
    CHECK_THROWS_AS(read_wav(fmt3), io_error);
    std::remove(base.c_str());
    std::remove(stereo.c_str());
    std::remove(eight.c_str());
    std::remove(fmt3.c_str());
}
