#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace ntk {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double pi = std::numbers::pi;
inline constexpr double nan = std::numeric_limits<double>::quiet_NaN();
inline constexpr double inf = std::numeric_limits<double>::infinity();

// Error hierarchy. Every failure mode named by the public operations has its
// own type so callers can catch narrowly; all derive from ntk::Error.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define NTK_ERROR(Name)                                   \
    class Name : public Error {                           \
    public:                                               \
        explicit Name(const std::string& what)            \
            : Error(std::string(#Name ": ") + what) {}    \
    }

NTK_ERROR(DegenerateGradient);
NTK_ERROR(NoExit);
NTK_ERROR(NotGrazing);
NTK_ERROR(InvalidState);
NTK_ERROR(EmptyHalfSpace);
NTK_ERROR(BoundViolation);
NTK_ERROR(DivergenceDetected);
NTK_ERROR(MaxIterExceeded);
NTK_ERROR(HypothesisViolated);
NTK_ERROR(GrazingStart);
NTK_ERROR(FitFailure);
NTK_ERROR(EmptySingularCloud);
NTK_ERROR(SingularLeak);
NTK_ERROR(GrazingNormal);
NTK_ERROR(InsufficientHistory);
NTK_ERROR(ConfigError);

#undef NTK_ERROR

// Random streams. mt19937_64 is fully specified by the standard, and the
// conversion to doubles below is done by hand so that draws are identical
// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return engine_(); }

    // Independent child stream, derived deterministically from a master seed
    // and a stream index (splitmix64 finalizer).
    static Rng stream(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 engine_;
};

// Orthonormal tangent pair (t1, t2) with t1 x t2 = n for a unit vector n.
inline void tangent_frame(const Vec3& n, Vec3& t1, Vec3& t2) {
    Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    t1 = (a - a.dot(n) * n).normalized();
    t2 = n.cross(t1);
}

inline Vec3 uniform_direction(Rng& rng) {
    double z = rng.uniform(-1.0, 1.0);
    double phi = 2.0 * pi * rng.uniform();
    double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {s * std::cos(phi), s * std::sin(phi), z};
}

}  // namespace ntk
