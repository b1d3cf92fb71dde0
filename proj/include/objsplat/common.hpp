#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace objsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;

// Base class for all library errors. Subtypes let callers map failures to
// distinct exit codes without string matching.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidGaussian : Error {
    explicit InvalidGaussian(const std::string& msg) : Error(msg) {}
};

struct InsufficientPoints : Error {
    explicit InsufficientPoints(const std::string& msg) : Error(msg) {}
};

struct ObjectTooSparse : Error {
    explicit ObjectTooSparse(const std::string& msg) : Error(msg) {}
};

struct SimulationDiverged : Error {
    explicit SimulationDiverged(const std::string& msg) : Error(msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double sqr(double x) { return x * x; }

// Deterministic PRNG. Draws are hand-rolled from raw mt19937_64 output so
// streams do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        // splitmix64; small state, passes BigCrush, trivially portable.
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. No cached second sample, so the draw
    // sequence is a pure function of the call count.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

private:
    uint64_t state_;
};

}  // namespace objsplat
