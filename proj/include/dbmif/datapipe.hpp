#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dbmif {

inline constexpr int kSampleRate = 16000;
inline constexpr int kSliceSamples = 16000;  // 1 s
inline constexpr int kFadeSamples = 800;     // 50 ms

// Sixth-order Butterworth lowpass at 1 kHz, exposed separately so its
// stopband behavior can be measured without the downstream level matching.
std::vector<double> bc_lowpass(const std::vector<double>& x);

// Bone-conduction stand-in: the lowpass above, a mild static nonlinearity
// tanh(1.5 x)/tanh(1.5), then RMS matched back to the input level.
std::vector<double> simulate_bc(const std::vector<double>& y);

// Scales the noise so clean-vs-noise power hits snr_db, adds it to the clean
// signal, then rescales the mixture to the clean signal's RMS.  Longer noise
// is randomly cropped with the supplied generator.
std::vector<double> mix_at_snr(const std::vector<double>& clean, const std::vector<double>& noise,
                               double snr_db, std::mt19937_64& rng);

// 1 s window starting at `offset` with linear 50 ms boundary ramps.
std::vector<double> slice_and_fade(const std::vector<double>& x, int64_t offset);

enum class NoiseKind { white, pink, babble };

// Synthetic sources used by the corpus generator, exposed for direct tests.
std::vector<double> make_clean_voice(int64_t len, std::mt19937_64& rng);
std::vector<double> make_noise(NoiseKind kind, int64_t len, std::mt19937_64& rng);

struct PairedExample {
    std::vector<double> clean;  // y, faded slice
    std::vector<double> ac;     // x_a = clean + noise at the drawn SNR, faded
    std::vector<double> bc;     // x_b = simulate_bc(clean), faded
    std::vector<double> noise_component;  // scaled noise actually injected (pre-rescale)
    double snr_db = 0.0;
    uint64_t seed = 0;
};

// Deterministic per (seed, index); noise goes into the AC channel only.
std::vector<PairedExample> make_synthetic_corpus(int64_t n, uint64_t seed);

// Strict 16-bit PCM mono WAV.
void write_wav(const std::string& path, const std::vector<double>& samples, int rate = kSampleRate);
struct WavData {
    std::vector<double> samples;
    int rate = 0;
};
WavData read_wav(const std::string& path);

}  // namespace dbmif
