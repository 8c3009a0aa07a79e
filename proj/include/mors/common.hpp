#pragma once

#include <cstdlib>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mors {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError/DimensionError -> 2, DataError -> 3, NumericalError -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DimensionError : public ConfigError {
public:
    explicit DimensionError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(msg) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Worker-thread cap. MORS_THREADS only affects speed: parallel sections write
// disjoint slices, so results do not depend on the thread count.
inline std::size_t max_threads() {
    static const std::size_t cached = [] {
        if (const char* env = std::getenv("MORS_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<std::size_t>(v);
        }
        unsigned hc = std::thread::hardware_concurrency();
        return static_cast<std::size_t>(hc == 0 ? 1 : hc);
    }();
    return cached;
}

// Runs fn(i) for i in [0, n). Each index must touch disjoint output memory.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t nt = std::min(max_threads(), n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += nt) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// splitmix64, used to derive independent RNG streams from (seed, tags).
inline std::uint64_t mix_seed(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix_seed(mix_seed(seed) ^ tag);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag1, std::uint64_t tag2) {
    return mix_seed(mix_seed(seed, tag1) ^ tag2);
}

}  // namespace mors
