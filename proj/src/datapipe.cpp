#include "dbmif/datapipe.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dbmif/common.hpp"

namespace dbmif {

// --- bone-conduction simulation ---

namespace {

struct Biquad {
    double b0, b1, b2, a1, a2;
};

// RBJ lowpass section at normalized frequency w0 with quality q.
Biquad lowpass_section(double w0, double q) {
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad s;
    s.b0 = (1.0 - c) / 2.0 / a0;
    s.b1 = (1.0 - c) / a0;
    s.b2 = s.b0;
    s.a1 = -2.0 * c / a0;
    s.a2 = (1.0 - alpha) / a0;
    return s;
}

void apply_biquad(const Biquad& s, std::vector<double>& x) {
    double z1 = 0.0, z2 = 0.0;  // direct form II transposed
    for (double& v : x) {
        const double y = s.b0 * v + z1;
        z1 = s.b1 * v - s.a1 * y + z2;
        z2 = s.b2 * v - s.a2 * y;
        v = y;
    }
}

double rms(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) p += v * v;
    return std::sqrt(p / static_cast<double>(x.size() ? x.size() : 1));
}

}  // namespace

std::vector<double> bc_lowpass(const std::vector<double>& x) {
    // Butterworth order 6 = three cascaded second-order sections; the section
    // quality factors are 1/(2 sin((2i+1)pi/12)).
    static const double qs[3] = {0.51763809020504159, 0.70710678118654757, 1.9318516525781366};
    const double w0 = 2.0 * M_PI * 1000.0 / kSampleRate;
    std::vector<double> y(x);
    for (double q : qs) apply_biquad(lowpass_section(w0, q), y);
    return y;
}

std::vector<double> simulate_bc(const std::vector<double>& y) {
    std::vector<double> out = bc_lowpass(y);
    const double knee = std::tanh(1.5);
    for (double& v : out) v = std::tanh(1.5 * v) / knee;
    const double in_rms = rms(y);
    const double out_rms = rms(out);
    if (in_rms > 0.0 && out_rms > 0.0) {
        const double g = in_rms / out_rms;
        for (double& v : out) v *= g;
    }
    return out;
}

// --- mixing ---

namespace {

struct MixParts {
    std::vector<double> mixture;       // rescaled to the clean RMS
    std::vector<double> scaled_noise;  // the injected component, pre-rescale
};

MixParts mix_parts(const std::vector<double>& clean, const std::vector<double>& noise,
                   double snr_db, std::mt19937_64& rng) {
    if (clean.empty()) throw precondition_error("mix: empty clean signal");
    if (noise.size() < clean.size())
        throw precondition_error(cat("mix: noise of ", noise.size(),
                                     " samples shorter than clean of ", clean.size()));
    size_t offset = 0;
    if (noise.size() > clean.size()) {
        std::uniform_int_distribution<size_t> crop(0, noise.size() - clean.size());
        offset = crop(rng);
    }
    double clean_pow = 0.0, noise_pow = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        clean_pow += clean[i] * clean[i];
        noise_pow += noise[offset + i] * noise[offset + i];
    }
    if (clean_pow == 0.0) throw precondition_error("mix: silent clean signal, SNR undefined");
    if (noise_pow == 0.0) throw precondition_error("mix: silent noise crop, SNR undefined");

    const double scale = std::sqrt(clean_pow / (noise_pow * std::pow(10.0, snr_db / 10.0)));
    MixParts parts;
    parts.scaled_noise.resize(clean.size());
    parts.mixture.resize(clean.size());
    double mix_pow = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        parts.scaled_noise[i] = scale * noise[offset + i];
        parts.mixture[i] = clean[i] + parts.scaled_noise[i];
        mix_pow += parts.mixture[i] * parts.mixture[i];
    }
    if (mix_pow > 0.0) {
        const double g = std::sqrt(clean_pow / mix_pow);
        for (double& v : parts.mixture) v *= g;
    }
    return parts;
}

}  // namespace

std::vector<double> mix_at_snr(const std::vector<double>& clean, const std::vector<double>& noise,
                               double snr_db, std::mt19937_64& rng) {
    return mix_parts(clean, noise, snr_db, rng).mixture;
}

std::vector<double> slice_and_fade(const std::vector<double>& x, int64_t offset) {
    if (offset < 0 || offset + kSliceSamples > static_cast<int64_t>(x.size()))
        throw precondition_error(cat("slice: offset ", offset, " + ", kSliceSamples,
                                     " exceeds signal of ", x.size(), " samples"));
    std::vector<double> out(x.begin() + offset, x.begin() + offset + kSliceSamples);
    for (int64_t i = 0; i < kFadeSamples; ++i)
        out[static_cast<size_t>(i)] *= static_cast<double>(i) / kFadeSamples;
    for (int64_t i = kSliceSamples - kFadeSamples; i < kSliceSamples; ++i)
        out[static_cast<size_t>(i)] *= static_cast<double>(kSliceSamples - i) / kFadeSamples;
    return out;
}

// --- synthetic sources ---

namespace {

// Economy pink filter (three leaky integrators plus a direct tap).
std::vector<double> pink_from_white(const std::vector<double>& w) {
    std::vector<double> out(w.size());
    double b0 = 0.0, b1 = 0.0, b2 = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        b0 = 0.99765 * b0 + w[i] * 0.0990460;
        b1 = 0.96300 * b1 + w[i] * 0.2965164;
        b2 = 0.57000 * b2 + w[i] * 1.0526913;
        out[i] = b0 + b1 + b2 + w[i] * 0.1848;
    }
    return out;
}

void normalize_rms(std::vector<double>& x, double target) {
    const double r = rms(x);
    if (r > 0.0) {
        const double g = target / r;
        for (double& v : x) v *= g;
    }
}

}  // namespace

std::vector<double> make_clean_voice(int64_t len, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double f0 = 100.0 + 200.0 * unit(rng);
    const int harmonics = 2 + static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
    std::vector<double> amp(static_cast<size_t>(harmonics)), phase(static_cast<size_t>(harmonics));
    for (int h = 0; h < harmonics; ++h) {
        amp[static_cast<size_t>(h)] = (0.5 + 0.5 * unit(rng)) / (h + 1);
        phase[static_cast<size_t>(h)] = 2.0 * M_PI * unit(rng);
    }
    const double am_rate = 1.0 + 3.0 * unit(rng);  // slow level movement, Hz
    const double am_phase = 2.0 * M_PI * unit(rng);

    std::vector<double> voice(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        double v = 0.0;
        for (int h = 0; h < harmonics; ++h)
            v += amp[static_cast<size_t>(h)] *
                 std::sin(2.0 * M_PI * f0 * (h + 1) * t + phase[static_cast<size_t>(h)]);
        const double env = (0.7 + 0.3 * std::sin(2.0 * M_PI * am_rate * t + am_phase)) *
                           std::sin(M_PI * static_cast<double>(i) / static_cast<double>(len));
        voice[static_cast<size_t>(i)] = v * env;
    }

    // A few pink bursts give the harmonic bed a consonant-like texture.
    std::normal_distribution<double> gauss;
    std::vector<double> white(static_cast<size_t>(len));
    for (double& v : white) v = gauss(rng);
    std::vector<double> pink = pink_from_white(white);
    normalize_rms(pink, 1.0);
    const int bursts = std::uniform_int_distribution<int>(2, 5)(rng);
    std::vector<double> burst_env(static_cast<size_t>(len), 0.0);
    for (int b = 0; b < bursts; ++b) {
        const int64_t width = 800 + static_cast<int64_t>(2400 * unit(rng));  // 50..200 ms
        const int64_t start = static_cast<int64_t>((static_cast<double>(len) - width) * unit(rng));
        for (int64_t i = 0; i < width; ++i) {
            const double w = std::sin(M_PI * static_cast<double>(i) / static_cast<double>(width));
            burst_env[static_cast<size_t>(start + i)] += w * w;
        }
    }
    normalize_rms(voice, 0.1);
    for (int64_t i = 0; i < len; ++i)
        voice[static_cast<size_t>(i)] += 0.02 * burst_env[static_cast<size_t>(i)] *
                                         pink[static_cast<size_t>(i)];
    normalize_rms(voice, 0.1);
    return voice;
}

std::vector<double> make_noise(NoiseKind kind, int64_t len, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    std::vector<double> white(static_cast<size_t>(len));
    for (double& v : white) v = gauss(rng);
    std::vector<double> out;
    switch (kind) {
        case NoiseKind::white:
            out = std::move(white);
            break;
        case NoiseKind::pink:
            out = pink_from_white(white);
            break;
        case NoiseKind::babble: {
            // Pink bed with several wandering amplitude modulators: crude
            // crowd murmur, enough to exercise nonstationary noise handling.
            out = pink_from_white(white);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            double rate[3], ph[3];
            for (int m = 0; m < 3; ++m) {
                rate[m] = 2.0 + 6.0 * unit(rng);
                ph[m] = 2.0 * M_PI * unit(rng);
            }
            for (int64_t i = 0; i < len; ++i) {
                const double t = static_cast<double>(i) / kSampleRate;
                double env = 1.0;
                for (int m = 0; m < 3; ++m)
                    env *= 0.65 + 0.35 * std::sin(2.0 * M_PI * rate[m] * t + ph[m]);
                out[static_cast<size_t>(i)] *= env;
            }
            break;
        }
    }
    normalize_rms(out, 1.0);
    return out;
}

std::vector<PairedExample> make_synthetic_corpus(int64_t n, uint64_t seed) {
    if (n < 1) throw precondition_error(cat("corpus: need at least one example, got ", n));
    std::vector<PairedExample> corpus;
    corpus.reserve(static_cast<size_t>(n));
    for (int64_t idx = 0; idx < n; ++idx) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<uint64_t>(idx)));
        PairedExample ex;
        ex.seed = derive_seed(seed, static_cast<uint64_t>(idx));
        std::vector<double> clean = make_clean_voice(kSliceSamples, rng);
        std::vector<double> bc = simulate_bc(clean);
        const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
        std::vector<double> noise =
            make_noise(static_cast<NoiseKind>(kind), kSliceSamples + 2000, rng);
        ex.snr_db = std::uniform_real_distribution<double>(-15.0, 5.0)(rng);
        MixParts parts = mix_parts(clean, noise, ex.snr_db, rng);
        ex.noise_component = std::move(parts.scaled_noise);
        ex.clean = slice_and_fade(clean, 0);
        ex.ac = slice_and_fade(parts.mixture, 0);
        ex.bc = slice_and_fade(bc, 0);
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

// --- WAV I/O ---

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

void put_u16(std::ofstream& f, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples, int rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error(cat("wav: cannot open ", path, " for writing"));
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    put_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(f, 16);
    put_u16(f, 1);  // PCM
    put_u16(f, 1);  // mono
    put_u32(f, static_cast<uint32_t>(rate));
    put_u32(f, static_cast<uint32_t>(rate * 2));
    put_u16(f, 2);   // block align
    put_u16(f, 16);  // bits
    f.write("data", 4);
    put_u32(f, data_bytes);
    for (double v : samples) {
        const double c = std::max(-1.0, std::min(1.0, v));
        const int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
        put_u16(f, static_cast<uint16_t>(q));
    }
    if (!f) throw io_error(cat("wav: write failed for ", path));
}

WavData read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error(cat("wav: cannot open ", path));
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw io_error(cat("wav: ", path, " is not a RIFF/WAVE file"));

    WavData out;
    bool have_fmt = false;
    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t size = get_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + size > bytes.size())
            throw io_error(cat("wav: truncated chunk in ", path));
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (size < 16) throw io_error(cat("wav: malformed fmt chunk in ", path));
            const uint16_t format = get_u16(bytes.data() + body);
            const uint16_t channels = get_u16(bytes.data() + body + 2);
            const uint32_t rate = get_u32(bytes.data() + body + 4);
            const uint16_t bits = get_u16(bytes.data() + body + 14);
            if (format != 1) throw io_error(cat("wav: ", path, " is not integer PCM (format ",
                                                format, ")"));
            if (channels != 1) throw io_error(cat("wav: ", path, " has ", channels,
                                                  " channels, need mono"));
            if (bits != 16) throw io_error(cat("wav: ", path, " has ", bits,
                                               "-bit samples, need 16"));
            out.rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw io_error(cat("wav: data before fmt in ", path));
            const size_t count = size / 2;
            out.samples.resize(count);
            for (size_t i = 0; i < count; ++i) {
                const int16_t q = static_cast<int16_t>(get_u16(bytes.data() + body + 2 * i));
                out.samples[i] = static_cast<double>(q) / 32767.0;
            }
            return out;
        }
        pos = body + size + (size % 2);  // chunks are word-aligned
    }
    throw io_error(cat("wav: no data chunk in ", path));
}

}  // namespace dbmif
