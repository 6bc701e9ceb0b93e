#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace nsr {

template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T> using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T> using RowX = Eigen::Matrix<T, 1, Eigen::Dynamic>;
using Vec3d = Vec3<double>;

enum class ErrorCode {
    config,
    contract,
    io,
    parse,
    missing_image,
    invalid_transform,
    non_finite,
    extraction,
    empty_mesh,
    generation,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::contract: return "contract";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::missing_image: return "missing_image";
    case ErrorCode::invalid_transform: return "invalid_transform";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::extraction: return "extraction";
    case ErrorCode::empty_mesh: return "empty_mesh";
    case ErrorCode::generation: return "generation";
    }
    return "unknown";
}

/// All library failures are reported through this exception; `code()` lets
/// callers distinguish e.g. an empty reconstruction from an I/O problem.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

/// splitmix64 finalizer; used to derive independent RNG streams from
/// (seed, stream, index) tuples so parallel consumers stay deterministic.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

using Rng = std::mt19937_64;

/// Uniform double in [0,1) built from the top 53 bits; unlike
/// std::uniform_real_distribution its output is fixed across standard libraries.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    // Lemire's multiply-shift; bias is negligible for n << 2^64.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(rng()) * n) >> 64);
}

inline double normal01(Rng& rng) {
    double u1 = uniform01(rng);
    double u2 = uniform01(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T> T sigmoid(T x) {
    // two-branch form: never evaluates exp of a large positive argument
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T> bool all_finite(const T& m) { return m.allFinite(); }

} // namespace nsr
