#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mft/errors.hpp"
#include "mft/parallel.hpp"
#include "mft/rng.hpp"
#include "mft/tensor.hpp"
#include "mft/transform.hpp"
#include "mft/tucker.hpp"

namespace mft {

// Posterior predictive summary at one input: pointwise mean/SD and the
// empirical central 95% interval bounds, plus the sampled latent weights.
// Full field draws are only materialized on request (they are n_entries x
// n_draws and get large on fine grids).
struct PredictionResult {
    Eigen::VectorXd x_star;
    DenseTensor mean;
    DenseTensor sd;
    DenseTensor lo;  // 2.5% quantile
    DenseTensor hi;  // 97.5% quantile
    Eigen::MatrixXd latent_draws;              // n_draws x n_latent
    std::optional<Eigen::MatrixXd> field_draws; // n_draws x n_entries if requested
};

struct PredictOptions {
    int n_draws = 500;
    std::uint64_t seed = 0;
    bool store_field_draws = false;
    bool include_noise = true;
};

namespace detail {

// Type-7 quantile (linear interpolation of order statistics) of an
// unsorted column; scratch is reused across calls.
inline double quantile_inplace(Eigen::VectorXd& col, double p) {
    const Eigen::Index n = col.size();
    const double h = (static_cast<double>(n) - 1.0) * p;
    const Eigen::Index k = static_cast<Eigen::Index>(std::floor(h));
    std::nth_element(col.data(), col.data() + k, col.data() + n);
    const double vk = col(k);
    if (k + 1 >= n) return vk;
    const double frac = h - static_cast<double>(k);
    if (frac == 0.0) return vk;
    const double vk1 = *std::min_element(col.data() + k + 1, col.data() + n);
    return vk + frac * (vk1 - vk);
}

// Field map for a Tucker basis block: column j is the vectorized field of
// the mode-3 core slice j pushed through the spatial/month/year factors.
// Multiplying by a latent weight vector reproduces the basis-times-weight
// field assembly.
inline Eigen::MatrixXd field_map(const DenseTensor& core, const Eigen::MatrixXd& Us,
                                 const Eigen::MatrixXd& Um, const Eigen::MatrixXd& Uy) {
    if (core.order() != 4) throw dimension_error("field_map: core must be 4-mode");
    const std::size_t r_x = core.dim(3);
    const std::size_t slice_len = core.size() / r_x;
    const std::size_t n = static_cast<std::size_t>(Us.rows()) *
                          static_cast<std::size_t>(Um.rows()) *
                          static_cast<std::size_t>(Uy.rows());
    Eigen::MatrixXd F(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r_x));
    for (std::size_t j = 0; j < r_x; ++j) {
        // mode-3 slices are contiguous in the layout
        DenseTensor slice({core.dim(0), core.dim(1), core.dim(2)},
                          std::vector<double>(core.data() + j * slice_len,
                                              core.data() + (j + 1) * slice_len));
        DenseTensor field = mode_product(mode_product(mode_product(slice, Us, 0), Um, 1), Uy, 2);
        F.col(static_cast<Eigen::Index>(j)) = vectorize(field);
    }
    return F;
}

// Per-draw conditional law of the latent weights at one input, accumulated
// by the draw loop and consumed by the field-assembly pass.
struct LatentSummary {
    Eigen::VectorXd m_sum;        // sum of conditional means
    Eigen::MatrixXd S_sum;        // sum of conditional covariances
    Eigen::MatrixXd mm_sum;       // sum of m m^T
    Eigen::MatrixXd latent_draws; // n_draws x q sampled latents
    Eigen::VectorXd noise_sd;     // per-draw field noise SD
    int n_draws = 0;

    void init(int draws, int q) {
        m_sum = Eigen::VectorXd::Zero(q);
        S_sum = Eigen::MatrixXd::Zero(q, q);
        mm_sum = Eigen::MatrixXd::Zero(q, q);
        latent_draws.resize(draws, q);
        noise_sd.resize(draws);
        n_draws = draws;
    }

    void record(int d, const Eigen::VectorXd& m, const Eigen::MatrixXd& S, double noise_var,
                Rng& rng) {
        m_sum += m;
        S_sum += S;
        mm_sum += m * m.transpose();
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        Eigen::MatrixXd L;
        if (llt.info() == Eigen::Success) {
            L = llt.matrixL();
        } else {
            // PSD but rank-deficient conditional: eigen square root
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
            L = es.eigenvectors() *
                es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        }
        Eigen::VectorXd z(m.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
        latent_draws.row(d) = (m + L * z).transpose();
        noise_sd(d) = std::sqrt(noise_var);
    }
};

// rowwise diagonal of F * M * F^T for PSD M, via an eigen square root
inline Eigen::VectorXd rowwise_quad(const Eigen::MatrixXd& F, const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()));
    const Eigen::MatrixXd L =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return (F * L).rowwise().squaredNorm();
}

constexpr std::size_t kFieldBlock = 8192;

// Assembles the pointwise summaries for one prediction. F maps latent
// weights to the vectorized field; the Gaussian field noise is added per
// draw. Without a transform the mean/SD are computed analytically from the
// conditional laws (no latent sampling error); the interval bounds always
// come from the sampled draws. With a transform everything is computed from
// inverse-transformed draws.
inline PredictionResult assemble_field(const Eigen::VectorXd& x_star,
                                       const std::vector<std::size_t>& field_dims,
                                       const Eigen::MatrixXd& F, const LatentSummary& lat,
                                       const std::optional<TransformSpec>& transform,
                                       const PredictOptions& opts, std::uint64_t noise_stream) {
    const std::size_t n = static_cast<std::size_t>(F.rows());
    const int D = lat.n_draws;
    const double inv_d = 1.0 / static_cast<double>(D);

    PredictionResult out;
    out.x_star = x_star;
    out.latent_draws = lat.latent_draws;

    std::vector<double> mean_v(n), sd_v(n), lo_v(n), hi_v(n);

    if (!transform) {
        const Eigen::VectorXd mean = F * (lat.m_sum * inv_d);
        const Eigen::VectorXd var_cond = rowwise_quad(F, lat.S_sum * inv_d);
        const Eigen::VectorXd second_moment = rowwise_quad(F, lat.mm_sum * inv_d);
        const double noise_var =
            opts.include_noise ? lat.noise_sd.array().square().mean() : 0.0;
        for (std::size_t e = 0; e < n; ++e) {
            const Eigen::Index ei = static_cast<Eigen::Index>(e);
            mean_v[e] = mean(ei);
            const double var = var_cond(ei) + noise_var +
                               std::max(0.0, second_moment(ei) - mean(ei) * mean(ei));
            sd_v[e] = std::sqrt(std::max(0.0, var));
        }
    }

    if (opts.store_field_draws)
        out.field_draws.emplace(D, static_cast<Eigen::Index>(n));

    // blockwise sampled-field pass for the interval bounds (and, with a
    // transform, for all summaries)
    const std::size_t n_blocks = (n + kFieldBlock - 1) / kFieldBlock;
    std::vector<double> mean_s, sd_s;
    if (transform) {
        mean_s.resize(n);
        sd_s.resize(n);
    }
    Eigen::MatrixXd buf;
    Eigen::VectorXd col;
    for (std::size_t blk = 0; blk < n_blocks; ++blk) {
        const std::size_t e0 = blk * kFieldBlock;
        const std::size_t len = std::min(kFieldBlock, n - e0);
        buf.resize(D, static_cast<Eigen::Index>(len));
        buf.noalias() = lat.latent_draws *
                        F.middleRows(static_cast<Eigen::Index>(e0), static_cast<Eigen::Index>(len))
                            .transpose();
        if (opts.include_noise) {
            Rng rng(sub_seed(noise_stream, blk));
            for (int d = 0; d < D; ++d) {
                const double s = lat.noise_sd(d);
                for (std::size_t e = 0; e < len; ++e)
                    buf(d, static_cast<Eigen::Index>(e)) += s * rng.normal();
            }
        }
        if (transform) {
            for (Eigen::Index i = 0; i < buf.size(); ++i)
                buf(i) = transform_inverse(buf(i), *transform);
        }
        for (std::size_t e = 0; e < len; ++e) {
            const Eigen::Index ei = static_cast<Eigen::Index>(e);
            if (transform) {
                const double mu = buf.col(ei).mean();
                mean_s[e0 + e] = mu;
                sd_s[e0 + e] = std::sqrt((buf.col(ei).array() - mu).square().sum() /
                                         std::max(1, D - 1));
            }
            col = buf.col(ei);
            lo_v[e0 + e] = quantile_inplace(col, 0.025);
            col = buf.col(ei);
            hi_v[e0 + e] = quantile_inplace(col, 0.975);
        }
        if (out.field_draws)
            out.field_draws->middleCols(static_cast<Eigen::Index>(e0),
                                        static_cast<Eigen::Index>(len)) = buf;
    }
    if (transform) {
        mean_v = std::move(mean_s);
        sd_v = std::move(sd_s);
    }

    out.mean = DenseTensor(field_dims, std::move(mean_v));
    out.sd = DenseTensor(field_dims, std::move(sd_v));
    out.lo = DenseTensor(field_dims, std::move(lo_v));
    out.hi = DenseTensor(field_dims, std::move(hi_v));
    return out;
}

} // namespace detail

} // namespace mft
