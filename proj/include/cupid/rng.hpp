#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace cupid {

// Self-contained xoshiro256++ generator. std::mt19937 would do for the engine
// itself, but the standard distributions are implementation-defined, and every
// draw here must reproduce bit-for-bit across toolchains (masking, batch
// sampling, weight init, checkpoint resume).
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
        have_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // n must be > 0. Modulo bias is below 2^-50 for the n used here.
    uint64_t bounded(uint64_t n) { return next_u64() % n; }

    // Box-Muller with cached spare.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double gaussian(double mu, double sigma) { return mu + sigma * gaussian(); }

    // Rejection-sampled truncation at +/- cut standard deviations.
    double truncated_gaussian(double sigma, double cut = 2.0) {
        double g = gaussian();
        while (std::fabs(g) > cut) g = gaussian();
        return g * sigma;
    }

    // Derive an independent stream; tag separates uses of the same seed.
    Rng fork(uint64_t tag) const {
        uint64_t x = state_[0] ^ (state_[2] + 0x9e3779b97f4a7c15ULL * (tag + 1));
        Rng child(0);
        for (auto& word : child.state_) word = splitmix64(x);
        child.have_spare_ = false;
        return child;
    }

    std::array<uint64_t, 4> save_state() const { return state_; }

    void restore_state(const std::array<uint64_t, 4>& s) {
        state_ = s;
        have_spare_ = false;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::array<uint64_t, 4> state_{};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cupid
