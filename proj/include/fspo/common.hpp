#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fspo {

// A caller broke a documented precondition. Not recoverable by retry.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Invalid configuration (bad sizes, bad hyperparameters, malformed config file).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Data generation could not satisfy the request (e.g. no chain of the
// requested hop count exists in the world).
struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based when known, 0 otherwise.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, int line_no = 0)
        : std::runtime_error(line_no > 0 ? msg + " (line " + std::to_string(line_no) + ")" : msg),
          line(line_no) {}
    int line;
};

// Exhaustive enumeration would exceed the configured output cap.
struct EnumerationLimitError : std::runtime_error {
    EnumerationLimitError(const std::string& msg, double estimate)
        : std::runtime_error(msg), estimated_outputs(estimate) {}
    double estimated_outputs;
};

// 64-bit FNV-1a. Used for vocab fingerprints and the metrics header hash.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic sub-stream derivation, e.g. one seed per Monte-Carlo trial.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ull));
}

// mt19937_64 wrapper with a portable uniform double (53-bit mantissa fill),
// so sampled trajectories do not depend on the standard library's
// distribution implementations.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : gen_(mix64(seed)) {}

    uint64_t next_u64() { return gen_(); }

    double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Index into a probability vector by CDF inversion. Zero-probability
    // entries are never returned.
    int pick(std::span<const double> probs) {
        const double u = next_double();
        double acc = 0.0;
        int last_positive = -1;
        for (size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            last_positive = static_cast<int>(i);
            acc += probs[i];
            if (u < acc) return last_positive;
        }
        if (last_positive < 0) throw ContractViolation("pick: no positive-probability entry");
        return last_positive;  // u landed in the rounding tail
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace fspo
