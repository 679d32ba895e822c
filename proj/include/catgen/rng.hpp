#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace catgen {

// Deterministic random source. All draws are derived from raw mt19937_64
// words so that results are bit-reproducible across platforms; the standard
// <random> distributions are avoided because their output is
// implementation-defined.
struct Rng {
    std::mt19937_64 gen;

    explicit Rng(uint64_t seed = 0) : gen(seed) {}

    // uniform on the open interval (0, 1), 53-bit resolution
    double uniform() { return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53; }

    // uniform on (eps, 1-eps); keeps log(u) and log(-log u) finite
    double uniform_open(double eps = 1e-10) {
        double u = uniform();
        if (u < eps) u = eps;
        if (u > 1.0 - eps) u = 1.0 - eps;
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; draws two uniforms per normal, spare is discarded
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double gumbel(double loc = 0.0) { return loc - std::log(-std::log(uniform_open())); }

    // integer in [0, n)
    int64_t below(int64_t n) {
        return static_cast<int64_t>((static_cast<unsigned __int128>(gen()) * static_cast<uint64_t>(n)) >> 64);
    }

    std::string state() const {
        std::ostringstream oss;
        oss << gen;
        return oss.str();
    }
    void set_state(const std::string& s) {
        std::istringstream iss(s);
        iss >> gen;
    }
};

}  // namespace catgen
