#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "mft/errors.hpp"
#include "mft/gp.hpp"
#include "mft/mf_emulator.hpp"
#include "mft/rng.hpp"
#include "mft/tensor.hpp"

namespace mft {

struct SynthConfig {
    int grid_lf = 25;  // coarse grid side length
    int grid_hf = 50;  // fine grid side length
    int n_months = 12;
    int n_years = 5;
    int n_lf = 100;
    int n_hf = 10;
    int p = 3; // x3 is inert by construction
    std::uint64_t seed = 0;
    double discrepancy_scale = 1.0;
    int lhs_candidates = 64;

    void validate() const {
        if (grid_lf < 2 || grid_hf < 2) throw config_error("synth: grids must be >= 2");
        if (n_hf > n_lf) throw config_error("synth: n_hf must not exceed n_lf");
        if (n_lf < 1 || n_hf < 1) throw config_error("synth: design sizes must be >= 1");
        if (n_months < 1 || n_years < 1) throw config_error("synth: temporal sizes must be >= 1");
        if (p < 2) throw config_error("synth: need at least 2 inputs");
        if (lhs_candidates < 1) throw config_error("synth: lhs_candidates must be >= 1");
        if (discrepancy_scale < 0.0) throw config_error("synth: negative discrepancy scale");
    }
};

// One stratified sample per [i/n, (i+1)/n) stratum in every column, in
// random order.
inline DesignMatrix lhs_plain(int n, int p, std::uint64_t seed) {
    if (n < 1 || p < 1) throw domain_error("lhs: need n >= 1 and p >= 1");
    Rng rng(seed);
    Eigen::MatrixXd X(n, p);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int d = 0; d < p; ++d) {
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
        for (int i = 0; i < n; ++i)
            X(i, d) = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + rng.uniform()) /
                      static_cast<double>(n);
    }
    return DesignMatrix{X};
}

inline double min_pairwise_distance(const Eigen::MatrixXd& X) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = i + 1; j < X.rows(); ++j)
            best = std::min(best, (X.row(i) - X.row(j)).norm());
    return best;
}

// Best of n_candidates Latin hypercubes under the maximin criterion.
// Candidate 0 reproduces lhs_plain at the same seed.
inline DesignMatrix lhs_maximin(int n, int p, std::uint64_t seed, int n_candidates) {
    if (n_candidates < 1) throw domain_error("lhs_maximin: need at least one candidate");
    DesignMatrix best = lhs_plain(n, p, sub_seed(seed, 0));
    if (n < 2) return best;
    double best_d = min_pairwise_distance(best.pts);
    for (int c = 1; c < n_candidates; ++c) {
        DesignMatrix cand = lhs_plain(n, p, sub_seed(seed, static_cast<std::uint64_t>(c)));
        const double d = min_pairwise_distance(cand.pts);
        if (d > best_d) {
            best_d = d;
            best = std::move(cand);
        }
    }
    return best;
}

// Square grid of cell centers on [0,1]^2; index = i + side*j with the first
// coordinate varying fastest.
inline MeshCoords square_mesh(int side) {
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(side) * side, 2);
    for (int j = 0; j < side; ++j)
        for (int i = 0; i < side; ++i) {
            const Eigen::Index row = i + static_cast<Eigen::Index>(side) * j;
            pts(row, 0) = (i + 0.5) / side;
            pts(row, 1) = (j + 0.5) / side;
        }
    return MeshCoords{pts};
}

namespace detail {

// two-term oscillatory sum in the style of the Shubert test function; the
// terms carry different phase rates so their input modulation is linearly
// independent
inline double shubert2(double z, double phase1, double phase2) {
    return std::cos(2.0 * z + 1.0 + phase1) + 2.0 * std::cos(3.0 * z + 2.0 + phase2);
}

inline void check_unit_cube(const Eigen::VectorXd& x, int p) {
    if (x.size() != p) throw dimension_error("simulate: input length mismatch");
    for (Eigen::Index d = 0; d < x.size(); ++d)
        if (!(x(d) >= -1e-12 && x(d) <= 1.0 + 1e-12))
            throw domain_error("simulate: input outside the unit cube");
}

// coarse-physics field value at one spatiotemporal point
inline double lf_value(double s1, double s2, int m, int y, int n_m, int n_y, double x1,
                       double x2) {
    const double tau = 6.283185307179586476925286766559;
    const double spatial = shubert2(tau * s1, 3.4 * x1, 5.6 * x1) * shubert2(tau * s2, 0.0, 0.0);
    const double season = 1.0 + 1.05 * std::sin(tau * (m + 0.5) / n_m + 0.8 + 2.8 * x2);
    const double t_y = n_y > 1 ? static_cast<double>(y) / (n_y - 1) - 0.5 : 0.0;
    const double yearly = 1.0 + (0.25 + 1.2 * x1) * t_y;
    return spatial * season * yearly;
}

// additive fine-fidelity discrepancy; no year dependence by construction.
// The leading constant sets the discrepancy Frobenius norm to roughly 20%
// of the fine-fidelity signal norm at unit scale (measured over a probe
// design at the default configuration).
inline double disc_value(double s1, double s2, int m, int n_m, double x1, double x2) {
    const double tau = 6.283185307179586476925286766559;
    const double g1 = std::sin(1.5 * tau * s1 + 1.6 * x2 + 0.5);
    const double g2 = std::cos(tau * s2 + 1.1 * x1 + 1.0);
    const double dm = 1.0 + 0.75 * std::cos(tau * (m + 0.5) / n_m + 0.3 + 1.4 * x1);
    return 1.0 * g1 * g2 * dm;
}

} // namespace detail

// Deterministic coarse simulator on the coarse grid: an oscillatory spatial
// pattern phase-modulated by x1, a seasonal cycle with phase set by x2, and
// a mild input-dependent yearly trend. Invariant to x3 by construction.
inline DenseTensor simulate_lf(const Eigen::VectorXd& x, const SynthConfig& cfg) {
    cfg.validate();
    detail::check_unit_cube(x, cfg.p);
    const int g = cfg.grid_lf;
    std::vector<double> v(static_cast<std::size_t>(g) * g * cfg.n_months * cfg.n_years);
    std::size_t pos = 0;
    for (int y = 0; y < cfg.n_years; ++y)
        for (int m = 0; m < cfg.n_months; ++m)
            for (int j = 0; j < g; ++j)
                for (int i = 0; i < g; ++i)
                    v[pos++] = detail::lf_value((i + 0.5) / g, (j + 0.5) / g, m, y, cfg.n_months,
                                                cfg.n_years, x(0), x(1));
    return DenseTensor({static_cast<std::size_t>(g) * g, static_cast<std::size_t>(cfg.n_months),
                        static_cast<std::size_t>(cfg.n_years)},
                       std::move(v));
}

// Fine simulator: the coarse physics evaluated on the fine grid plus a
// distinct input-dependent additive discrepancy.
inline DenseTensor simulate_hf(const Eigen::VectorXd& x, const SynthConfig& cfg) {
    cfg.validate();
    detail::check_unit_cube(x, cfg.p);
    const int g = cfg.grid_hf;
    std::vector<double> v(static_cast<std::size_t>(g) * g * cfg.n_months * cfg.n_years);
    std::size_t pos = 0;
    for (int y = 0; y < cfg.n_years; ++y)
        for (int m = 0; m < cfg.n_months; ++m)
            for (int j = 0; j < g; ++j)
                for (int i = 0; i < g; ++i) {
                    const double s1 = (i + 0.5) / g, s2 = (j + 0.5) / g;
                    v[pos++] = detail::lf_value(s1, s2, m, y, cfg.n_months, cfg.n_years, x(0), x(1)) +
                               cfg.discrepancy_scale *
                                   detail::disc_value(s1, s2, m, cfg.n_months, x(0), x(1));
                }
    return DenseTensor({static_cast<std::size_t>(g) * g, static_cast<std::size_t>(cfg.n_months),
                        static_cast<std::size_t>(cfg.n_years)},
                       std::move(v));
}

struct SynthData {
    DesignMatrix X_lf, X_hf;
    MeshCoords mesh_lf, mesh_hf;
    DenseTensor z_lf, z_hf;
};

// Full study inputs: maximin designs (fine design nested as the leading
// coarse rows) and both stacked ensembles.
inline SynthData generate_synth(const SynthConfig& cfg) {
    cfg.validate();
    SynthData d;
    d.X_lf = lhs_maximin(cfg.n_lf, cfg.p, cfg.seed, cfg.lhs_candidates);
    d.X_hf = DesignMatrix{d.X_lf.pts.topRows(cfg.n_hf)};
    d.mesh_lf = square_mesh(cfg.grid_lf);
    d.mesh_hf = square_mesh(cfg.grid_hf);
    std::vector<DenseTensor> lf_slices, hf_slices;
    lf_slices.reserve(static_cast<std::size_t>(cfg.n_lf));
    for (int i = 0; i < cfg.n_lf; ++i)
        lf_slices.push_back(simulate_lf(d.X_lf.pts.row(i).transpose(), cfg));
    hf_slices.reserve(static_cast<std::size_t>(cfg.n_hf));
    for (int i = 0; i < cfg.n_hf; ++i)
        hf_slices.push_back(simulate_hf(d.X_hf.pts.row(i).transpose(), cfg));
    d.z_lf = stack_last_mode(lf_slices);
    d.z_hf = stack_last_mode(hf_slices);
    return d;
}

} // namespace mft
