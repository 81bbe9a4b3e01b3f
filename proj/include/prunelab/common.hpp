#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prunelab {

// Error taxonomy. Every type carries a stable code that the CLI prints as a
// single machine-parseable line before exiting nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(msg), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("E_SHAPE", m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("E_CONFIG", m) {}
};
struct RangeError : Error {
    explicit RangeError(const std::string& m) : Error("E_RANGE", m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error("E_CONTRACT", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("E_NUMERIC", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("E_IO", m) {}
};
struct MonotonicityError : Error {
    explicit MonotonicityError(const std::string& m) : Error("E_MONOTONIC", m) {}
};
struct EvalError : Error {
    explicit EvalError(const std::string& m) : Error("E_EVAL", m) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& m) : Error("E_TRAINING", m) {}
};

// Deterministic RNG. mt19937_64 is fully specified by the standard, and the
// normal sampler is our own Box-Muller so no implementation-defined
// distribution code sneaks in.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // [0, n)
    uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_{false};
    double spare_{0.0};
};

// In-place Fisher-Yates; std::shuffle's draw sequence is not pinned by the
// standard, this one is.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(v[i - 1], v[j]);
    }
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace prunelab
