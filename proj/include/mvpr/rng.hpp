#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace mvpr {

// All randomness in the pipeline is drawn from streams derived by hashing a
// base seed with a tag and optional indices. A resumed run re-derives the
// exact same streams from (seed, epoch, ...) counters, so checkpoints never
// need to persist engine internals.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = splitmix64(base ^ 0x6d76707253454544ull);
    for (char c : tag) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a) {
    return splitmix64(derive_seed(base, tag) ^ splitmix64(a));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b) {
    return splitmix64(derive_seed(base, tag, a) ^ splitmix64(~b));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b, std::uint64_t c) {
    return splitmix64(derive_seed(base, tag, a, b) ^ splitmix64(c + 0x9e3779b97f4a7c15ull));
}

// Deterministic sampling helpers on top of std::mt19937_64. The standard
// fully specifies the engine's output sequence, but not the distributions'
// use of it, so the draws below are spelled out explicitly: two runs of the
// same build and two builds against different standard libraries produce the
// same stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1): 53 high bits of the engine output.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is < 2^-53 for the n used here.
    std::uint64_t uniform_index(std::uint64_t n) { return n ? engine_() % n : 0; }

    // Box-Muller, one variate per call (the spare is kept).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mvpr
