#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mft {

// splitmix64 step; used to derive independent sub-seeds (chains, draws,
// prediction blocks) from one user-facing seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix_seed(seed + 0x632be59bd9b4e019ULL * (stream + 1));
}

// Standard-normal quantile function (Acklam's rational approximation,
// relative error ~1e-9). One uniform per normal keeps the draw consumption
// pattern trivially deterministic and is fast enough for field-noise
// generation over millions of entries.
inline double normal_quantile(double u) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    if (u < plow) {
        const double q = std::sqrt(-2.0 * std::log(u));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (u > 1.0 - plow) {
        const double q = std::sqrt(-2.0 * std::log(1.0 - u));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = u - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Deterministic RNG wrapper; normals come from the inverse CDF so every
// normal consumes exactly one engine step.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // uniform on (0,1); never returns exactly 0 or 1
    double uniform() {
        const std::uint64_t u = eng_();
        return (static_cast<double>(u >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double normal() { return normal_quantile(uniform()); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return eng_() % n;
    }

private:
    std::mt19937_64 eng_;
};

} // namespace mft
