#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ptq {

// Seeded RNG with hand-rolled distributions so that streams are
// bit-identical across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // uniform index in [0, n)
    size_t index(size_t n) {
        size_t i = static_cast<size_t>(uniform() * static_cast<double>(n));
        return i < n ? i : n - 1;
    }

    // standard normal via Box-Muller
    float gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) {
            u1 = uniform();
        }
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * 3.14159265358979323846 * u2;
        spare_      = static_cast<float>(r * std::sin(t));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(t));
    }

  private:
    std::mt19937_64 engine_;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

} // namespace ptq
