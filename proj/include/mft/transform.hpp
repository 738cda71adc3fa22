#pragma once

#include <cmath>
#include <string>

#include "mft/errors.hpp"
#include "mft/tensor.hpp"

namespace mft {

// Monotone map from [0,1]-bounded fields to the real line:
//   forward(x) = logit[(exp(clip(x)/eps) - 1) / (exp(1/eps) - 1)]
// evaluated entirely in the log domain, since exp(1/eps) overflows for the
// default eps. Values are clipped into [lo, hi] first so the logit stays
// finite at the boundaries.
struct TransformSpec {
    double epsilon = 1e-3;
    double lo = 0.01;
    double hi = 0.99;

    void validate() const {
        if (!(epsilon > 0.0)) throw domain_error("transform: epsilon must be > 0");
        if (!(0.0 < lo && lo < hi && hi < 1.0))
            throw domain_error("transform: need 0 < lo < hi < 1");
    }
};

inline double clip(double x, const TransformSpec& spec) {
    if (!std::isfinite(x)) throw numeric_error("transform: non-finite input");
    return std::min(std::max(x, spec.lo), spec.hi);
}

// forward(x) = (x-1)/eps + log1p(-exp(-x/eps)) - log1p(-exp((x-1)/eps))
// after clipping; algebraically identical to the logit form above.
inline double transform_forward(double x, const TransformSpec& spec) {
    if (!std::isfinite(x)) throw numeric_error("transform: non-finite input");
    const double c = clip(x, spec);
    const double e = spec.epsilon;
    return (c - 1.0) / e + std::log1p(-std::exp(-c / e)) - std::log1p(-std::exp((c - 1.0) / e));
}

namespace detail {

// log(sigmoid(y)) and log(1 - sigmoid(y)) without overflow
inline double log_sigmoid(double y) {
    return y >= 0.0 ? -std::log1p(std::exp(-y)) : y - std::log1p(std::exp(y));
}

inline double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    if (!std::isfinite(m)) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

} // namespace detail

// inverse of forward; output clamped into [lo, hi].
// With g = sigmoid(y): x = 1 + eps * log(g + (1-g) exp(-1/eps)).
inline double transform_inverse(double y, const TransformSpec& spec) {
    if (!std::isfinite(y)) throw numeric_error("transform: non-finite input");
    const double e = spec.epsilon;
    const double log_g = detail::log_sigmoid(y);
    const double log_1mg = detail::log_sigmoid(-y);
    const double x = 1.0 + e * detail::log_sum_exp(log_g, log_1mg - 1.0 / e);
    return std::min(std::max(x, spec.lo), spec.hi);
}

enum class TransformDirection { forward, inverse };

// Elementwise map over a tensor. The forward direction requires values in
// [0,1] up to a 1e-9 slack before clipping.
inline DenseTensor apply_tensor(const DenseTensor& t, const TransformSpec& spec,
                                TransformDirection dir) {
    spec.validate();
    std::vector<double> out(t.size());
    if (dir == TransformDirection::forward) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double v = t[i];
            if (!std::isfinite(v)) throw numeric_error("transform: non-finite tensor value");
            if (v < -1e-9 || v > 1.0 + 1e-9)
                throw domain_error("transform: forward input outside [0,1] at entry " +
                                   std::to_string(i));
            out[i] = transform_forward(v, spec);
        }
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = transform_inverse(t[i], spec);
    }
    return DenseTensor(t.dims(), std::move(out));
}

} // namespace mft
