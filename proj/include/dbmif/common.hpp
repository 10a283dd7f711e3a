#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dbmif {

// Bad sizes, bad hyperparameters, malformed config files.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller handed us data that violates a documented precondition.
struct precondition_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf or other numeric breakdown detected mid-computation.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File format / filesystem trouble.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class... Parts>
std::string cat(Parts&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

// splitmix64: cheap, well-mixed way to derive independent seeds from
// (master seed, stream index) without correlated low bits.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 0x51ed2700));
}

}  // namespace dbmif
