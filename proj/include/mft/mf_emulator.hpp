#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mft/errors.hpp"
#include "mft/gp.hpp"
#include "mft/io.hpp"
#include "mft/mcmc.hpp"
#include "mft/prediction.hpp"
#include "mft/sf_emulator.hpp"
#include "mft/tensor.hpp"
#include "mft/tucker.hpp"

namespace mft {

// Spatial coordinates of one fidelity level's grid, one row per location.
struct MeshCoords {
    Eigen::MatrixXd pts;

    MeshCoords() = default;
    explicit MeshCoords(Eigen::MatrixXd m) : pts(std::move(m)) {
        if (!pts.allFinite()) throw numeric_error("mesh: non-finite coordinates");
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            for (Eigen::Index j = i + 1; j < pts.rows(); ++j)
                if ((pts.row(i) - pts.row(j)).cwiseAbs().maxCoeff() <= 1e-12)
                    throw domain_error("mesh: duplicate points at indices " + std::to_string(i) +
                                       " and " + std::to_string(j));
    }

    Eigen::Index n() const { return pts.rows(); }
};

// Interpolates a spatial factor to a finer mesh: each target row is the
// unweighted mean of the rows at its k nearest source locations (Euclidean),
// ties broken by source index.
inline Eigen::MatrixXd interpolate_bases(const Eigen::MatrixXd& spatial_factor,
                                         const MeshCoords& lf_mesh, const MeshCoords& hf_mesh,
                                         int k) {
    if (lf_mesh.n() == 0 || hf_mesh.n() == 0)
        throw dimension_error("interpolate_bases: empty mesh");
    if (spatial_factor.rows() != lf_mesh.n())
        throw dimension_error("interpolate_bases: factor rows must match source mesh");
    if (k < 1 || k > static_cast<int>(lf_mesh.n()))
        throw domain_error("interpolate_bases: k out of range");
    Eigen::MatrixXd out(hf_mesh.n(), spatial_factor.cols());
    std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(lf_mesh.n()));
    for (Eigen::Index i = 0; i < hf_mesh.n(); ++i) {
        for (Eigen::Index j = 0; j < lf_mesh.n(); ++j)
            d[static_cast<std::size_t>(j)] = {(lf_mesh.pts.row(j) - hf_mesh.pts.row(i)).squaredNorm(), j};
        std::partial_sort(d.begin(), d.begin() + k, d.end());
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(spatial_factor.cols());
        for (int t = 0; t < k; ++t) acc += spatial_factor.row(d[static_cast<std::size_t>(t)].second);
        out.row(i) = acc / static_cast<double>(k);
    }
    return out;
}

// Effective weights of the coarse model at the fine design set: exact row
// restriction where the designs are nested, otherwise the GP conditional
// mean at posterior-mean hyperparameters.
inline Eigen::MatrixXd hf_effective_weights(const SFEmulator& lf, const DesignMatrix& X_hf) {
    if (X_hf.p() != lf.design.p())
        throw dimension_error("hf_effective_weights: input dimensionality mismatch");
    const int r_x = lf.r_x(), n_lf = lf.n_x(), p = lf.p();
    Eigen::MatrixXd out(X_hf.n(), r_x);

    std::vector<Eigen::Index> pending;
    for (Eigen::Index i = 0; i < X_hf.n(); ++i) {
        Eigen::Index hit = -1;
        for (Eigen::Index j = 0; j < n_lf; ++j)
            if (X_hf.pts.row(i) == lf.design.pts.row(j)) {
                hit = j;
                break;
            }
        if (hit >= 0)
            out.row(i) = lf.gamma_hat.row(hit);
        else
            pending.push_back(i);
    }
    if (pending.empty()) return out;

    if (!lf.fitted())
        throw state_error("hf_effective_weights: non-nested designs need a fitted coarse model");
    const Eigen::VectorXd theta = lf.samples.natural_mean();
    const double lambda = theta(theta.size() - 1);
    const std::vector<Eigen::MatrixXd> dists = abs_dist_matrices(lf.design.pts, lf.design.pts);
    Eigen::MatrixXd cov = (1.0 / lambda) * lf.noise_gram_inv;
    std::vector<GPHyperparams> hs(static_cast<std::size_t>(r_x));
    for (int j = 0; j < r_x; ++j) {
        auto& h = hs[static_cast<std::size_t>(j)];
        h.precision = theta(j * (p + 1));
        h.length_scales = theta.segment(j * (p + 1) + 1, p);
        Eigen::MatrixXd block = cov_from_dists(dists, h);
        block.diagonal().array() += kCovJitterRel / h.precision;
        cov.block(static_cast<Eigen::Index>(j) * n_lf, static_cast<Eigen::Index>(j) * n_lf, n_lf,
                  n_lf) += block;
    }
    const auto llt = detail::robust_llt(cov);
    const Eigen::VectorXd w = llt.solve(lf.gamma_hat_vec());
    for (Eigen::Index i : pending) {
        for (int j = 0; j < r_x; ++j) {
            const auto& h = hs[static_cast<std::size_t>(j)];
            double m = 0.0;
            for (int a = 0; a < n_lf; ++a) {
                double s = 0.0;
                for (int dd = 0; dd < p; ++dd)
                    s += std::abs(lf.design.pts(a, dd) - X_hf.pts(i, dd)) / h.length_scales(dd);
                m += std::exp(-s) / h.precision * w(static_cast<Eigen::Index>(j) * n_lf + a);
            }
            out(i, j) = m;
        }
    }
    return out;
}

// Fine-grid field implied by the coarse model at given effective weights:
// core pushed through (interpolated spatial, month, year, weights).
inline DenseTensor interpolated_reconstruction(const TuckerModel& lf_tucker,
                                               const Eigen::MatrixXd& interp_spatial,
                                               const Eigen::MatrixXd& weights) {
    DenseTensor y = mode_product(lf_tucker.core, interp_spatial, 0);
    y = mode_product(y, lf_tucker.factors[1], 1);
    y = mode_product(y, lf_tucker.factors[2], 2);
    return mode_product(y, weights, 3);
}

// Fine-fidelity data minus the interpolated coarse prediction at the fine
// design points (no noise term at the design points).
inline DenseTensor discrepancy_ensemble(const DenseTensor& z_hf, const TuckerModel& lf_tucker,
                                        const Eigen::MatrixXd& interp_spatial,
                                        const Eigen::MatrixXd& hf_gamma) {
    if (z_hf.order() != 4) throw dimension_error("discrepancy_ensemble: expected 4-mode data");
    const DenseTensor recon = interpolated_reconstruction(lf_tucker, interp_spatial, hf_gamma);
    if (recon.dims() != z_hf.dims())
        throw dimension_error("discrepancy_ensemble: shape mismatch between data and reconstruction");
    return subtract(z_hf, recon);
}

namespace detail {

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

} // namespace detail

// Pieces of the joint fine-fidelity design operator K = [coarse block,
// discrepancy block] needed to build its Gram without materializing K.
struct MFGramParts {
    Eigen::MatrixXd lf_core_unfold;   // G4: r_x x R
    Eigen::MatrixXd disc_core_unfold; // G4': r_x' x R'
    Eigen::MatrixXd interp_gram;      // interp^T interp (r_s x r_s)
    Eigen::MatrixXd cross_s;          // interp^T U_s' (r_s x r_s')
    Eigen::MatrixXd cross_m;          // U_m^T U_m'
    Eigen::MatrixXd cross_y;          // U_y^T U_y'
    Eigen::Index n_hf = 0;            // fine design count
    std::array<Eigen::Index, 3> lf_ranks{};   // r_s, r_m, r_y
    std::array<Eigen::Index, 3> disc_ranks{}; // r_s', r_m', r_y'
};

inline MFGramParts make_gram_parts(const TuckerModel& lf_tucker,
                                   const Eigen::MatrixXd& interp_spatial,
                                   const TuckerModel& disc_tucker, Eigen::Index n_hf) {
    MFGramParts g;
    g.lf_core_unfold = unfold(lf_tucker.core, 3);
    g.disc_core_unfold = unfold(disc_tucker.core, 3);
    g.interp_gram = interp_spatial.transpose() * interp_spatial;
    g.cross_s = interp_spatial.transpose() * disc_tucker.factors[0];
    g.cross_m = lf_tucker.factors[1].transpose() * disc_tucker.factors[1];
    g.cross_y = lf_tucker.factors[2].transpose() * disc_tucker.factors[2];
    g.n_hf = n_hf;
    for (int k = 0; k < 3; ++k) {
        g.lf_ranks[static_cast<std::size_t>(k)] =
            static_cast<Eigen::Index>(lf_tucker.core.dim(static_cast<std::size_t>(k)));
        g.disc_ranks[static_cast<std::size_t>(k)] =
            static_cast<Eigen::Index>(disc_tucker.core.dim(static_cast<std::size_t>(k)));
    }
    return g;
}

// K^T K assembled from per-mode Grams. The interpolated spatial columns are
// not orthonormal (hence the interp Gram); the month/year factors are shared
// and orthonormal, and the discrepancy basis block is orthonormal, so its
// own Gram is the identity.
inline Eigen::MatrixXd mf_reduced_gram(const MFGramParts& g) {
    const Eigen::MatrixXd I_m = Eigen::MatrixXd::Identity(g.lf_ranks[1], g.lf_ranks[1]);
    const Eigen::MatrixXd I_y = Eigen::MatrixXd::Identity(g.lf_ranks[2], g.lf_ranks[2]);
    const Eigen::MatrixXd M_B = detail::kron(I_y, detail::kron(I_m, g.interp_gram));
    const Eigen::MatrixXd M_X = detail::kron(g.cross_y, detail::kron(g.cross_m, g.cross_s));

    const Eigen::MatrixXd tl = g.lf_core_unfold * M_B * g.lf_core_unfold.transpose();
    const Eigen::MatrixXd tr = g.lf_core_unfold * M_X * g.disc_core_unfold.transpose();
    const Eigen::MatrixXd br = g.disc_core_unfold * g.disc_core_unfold.transpose();

    Eigen::MatrixXd S(tl.rows() + br.rows(), tl.rows() + br.rows());
    S.topLeftCorner(tl.rows(), tl.cols()) = tl;
    S.topRightCorner(tr.rows(), tr.cols()) = tr;
    S.bottomLeftCorner(tr.cols(), tr.rows()) = tr.transpose();
    S.bottomRightCorner(br.rows(), br.cols()) = br;
    return kron_with_identity(S, g.n_hf);
}

// K^T vec(z_hf): per-design inner products against both basis blocks.
inline Eigen::VectorXd mf_project_data(const DenseTensor& z_hf, const TuckerModel& lf_tucker,
                                       const Eigen::MatrixXd& interp_spatial,
                                       const TuckerModel& disc_tucker) {
    DenseTensor p = mode_product(z_hf, interp_spatial.transpose(), 0);
    p = mode_product(p, lf_tucker.factors[1].transpose(), 1);
    p = mode_product(p, lf_tucker.factors[2].transpose(), 2);
    const Eigen::MatrixXd W_lf = unfold(p, 3) * unfold(lf_tucker.core, 3).transpose();
    const Eigen::VectorXd d_part = project_data(z_hf, disc_tucker);
    Eigen::VectorXd out(W_lf.size() + d_part.size());
    out.head(W_lf.size()) = Eigen::Map<const Eigen::VectorXd>(W_lf.data(), W_lf.size());
    out.tail(d_part.size()) = d_part;
    return out;
}

// Fitted multi-fidelity emulator.
struct MFEmulator {
    SFEmulator lf;                   // coarse fit (own Tucker, design, posterior)
    Eigen::MatrixXd interp_spatial;  // n_s_hf x r_s
    Eigen::MatrixXd hf_gamma;        // n_hf x r_x
    TuckerModel disc_tucker;
    Eigen::MatrixXd zeta_hat;        // n_hf x r_x'
    DesignMatrix design_hf;
    MeshCoords mesh_lf, mesh_hf;
    int k_interp = 3;
    Eigen::MatrixXd gram_K;          // K^T K
    Eigen::MatrixXd noise_gram_inv_K; // (K^T K)^{-1}
    PosteriorSamples samples;
    double a_delta = 1.0, b_delta = 0.5;
    double a_delta_prime = 0.0, b_delta_prime = 0.0;

    int n_lf() const { return lf.n_x(); }
    int n_hf() const { return static_cast<int>(design_hf.n()); }
    int p() const { return static_cast<int>(design_hf.p()); }
    int r_x() const { return lf.r_x(); }
    int r_x_disc() const { return static_cast<int>(disc_tucker.core.dim(3)); }
    bool fitted() const { return samples.n_chains() > 0; }

    std::vector<std::size_t> field_dims() const {
        return {static_cast<std::size_t>(interp_spatial.rows()),
                static_cast<std::size_t>(lf.tucker.factors[1].rows()),
                static_cast<std::size_t>(lf.tucker.factors[2].rows())};
    }

    // theta_hat = [gamma_lf, gamma_hf, zeta], each group weight-major
    Eigen::VectorXd theta_hat() const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(n_lf()) * r_x() +
                            static_cast<Eigen::Index>(n_hf()) * (r_x() + r_x_disc()));
        out.head(static_cast<Eigen::Index>(n_lf()) * r_x()) = lf.gamma_hat_vec();
        out.segment(static_cast<Eigen::Index>(n_lf()) * r_x(),
                    static_cast<Eigen::Index>(n_hf()) * r_x()) =
            Eigen::Map<const Eigen::VectorXd>(hf_gamma.data(), hf_gamma.size());
        out.tail(static_cast<Eigen::Index>(n_hf()) * r_x_disc()) =
            Eigen::Map<const Eigen::VectorXd>(zeta_hat.data(), zeta_hat.size());
        return out;
    }
};

// Natural-domain parameter layout for the joint fit:
// [r_x gamma-GPs x (prec, ls_1..p)] [r_x' zeta-GPs x (prec, ls_1..p)]
// [lambda_eta] [lambda_delta].
struct MFParamView {
    int r_x, r_x_disc, p;
    int n_params() const { return (r_x + r_x_disc) * (p + 1) + 2; }
    int gamma_at(int j) const { return j * (p + 1); }
    int zeta_at(int j) const { return (r_x + j) * (p + 1); }
    int lambda_eta_at() const { return n_params() - 2; }
    int lambda_delta_at() const { return n_params() - 1; }

    GPHyperparams gamma_gp(const Eigen::VectorXd& theta, int j) const {
        GPHyperparams h;
        h.precision = theta(gamma_at(j));
        h.length_scales = theta.segment(gamma_at(j) + 1, p);
        return h;
    }
    GPHyperparams zeta_gp(const Eigen::VectorXd& theta, int j) const {
        GPHyperparams h;
        h.precision = theta(zeta_at(j));
        h.length_scales = theta.segment(zeta_at(j) + 1, p);
        return h;
    }
};

// Latent prior over [gamma_lf, gamma_hf, zeta]: each gamma weight shares one
// GP across the union of coarse and fine designs; the zeta block is
// independent of the gamma blocks (off-blocks exactly zero).
inline Eigen::MatrixXd mf_sigma_theta(const Eigen::VectorXd& natural_params,
                                      const MFParamView& view,
                                      const std::vector<Eigen::MatrixXd>& dists_union,
                                      const std::vector<Eigen::MatrixXd>& dists_hf, int n_lf,
                                      int n_hf) {
    const int r_x = view.r_x, r_xd = view.r_x_disc;
    const Eigen::Index q = static_cast<Eigen::Index>(n_lf) * r_x +
                           static_cast<Eigen::Index>(n_hf) * (r_x + r_xd);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q, q);
    const Eigen::Index hf0 = static_cast<Eigen::Index>(n_lf) * r_x;
    const Eigen::Index z0 = hf0 + static_cast<Eigen::Index>(n_hf) * r_x;
    for (int j = 0; j < r_x; ++j) {
        GPHyperparams h = view.gamma_gp(natural_params, j);
        Eigen::MatrixXd u = cov_from_dists(dists_union, h);
        u.diagonal().array() += kCovJitterRel / h.precision;
        out.block(static_cast<Eigen::Index>(j) * n_lf, static_cast<Eigen::Index>(j) * n_lf, n_lf,
                  n_lf) = u.topLeftCorner(n_lf, n_lf);
        out.block(static_cast<Eigen::Index>(j) * n_lf, hf0 + static_cast<Eigen::Index>(j) * n_hf,
                  n_lf, n_hf) = u.topRightCorner(n_lf, n_hf);
        out.block(hf0 + static_cast<Eigen::Index>(j) * n_hf, static_cast<Eigen::Index>(j) * n_lf,
                  n_hf, n_lf) = u.bottomLeftCorner(n_hf, n_lf);
        out.block(hf0 + static_cast<Eigen::Index>(j) * n_hf,
                  hf0 + static_cast<Eigen::Index>(j) * n_hf, n_hf, n_hf) =
            u.bottomRightCorner(n_hf, n_hf);
    }
    for (int j = 0; j < r_xd; ++j) {
        GPHyperparams h = view.zeta_gp(natural_params, j);
        Eigen::MatrixXd u = cov_from_dists(dists_hf, h);
        u.diagonal().array() += kCovJitterRel / h.precision;
        out.block(z0 + static_cast<Eigen::Index>(j) * n_hf, z0 + static_cast<Eigen::Index>(j) * n_hf,
                  n_hf, n_hf) = u;
    }
    return out;
}

// Covariance of the observed effective weights under the joint reduced
// model: latent prior plus block-diagonal projected-noise terms.
inline Eigen::MatrixXd mf_observed_cov(const Eigen::VectorXd& natural_params,
                                       const MFParamView& view,
                                       const std::vector<Eigen::MatrixXd>& dists_union,
                                       const std::vector<Eigen::MatrixXd>& dists_hf, int n_lf,
                                       int n_hf, const Eigen::MatrixXd& A_C,
                                       const Eigen::MatrixXd& A_K) {
    Eigen::MatrixXd cov =
        mf_sigma_theta(natural_params, view, dists_union, dists_hf, n_lf, n_hf);
    const double lambda_eta = natural_params(view.lambda_eta_at());
    const double lambda_delta = natural_params(view.lambda_delta_at());
    const Eigen::Index q_lf = static_cast<Eigen::Index>(n_lf) * view.r_x;
    const Eigen::Index q_hf = static_cast<Eigen::Index>(n_hf) * (view.r_x + view.r_x_disc);
    cov.topLeftCorner(q_lf, q_lf) += (1.0 / lambda_eta) * A_C;
    cov.bottomRightCorner(q_hf, q_hf) += (1.0 / lambda_delta) * A_K;
    return cov;
}

namespace detail {

// Joint log posterior over log parameters for the multi-fidelity reduced
// model, with per-block covariance caching.
class MFLogTarget {
public:
    MFLogTarget(Eigen::VectorXd theta_hat, const Eigen::MatrixXd* A_C, const Eigen::MatrixXd* A_K,
                std::vector<Eigen::MatrixXd> dists_union, std::vector<Eigen::MatrixXd> dists_hf,
                MFParamView view, int n_lf, int n_hf, double a_eta_p, double b_eta_p,
                double a_delta_p, double b_delta_p)
        : theta_hat_(std::move(theta_hat)), A_C_(A_C), A_K_(A_K),
          dists_union_(std::move(dists_union)), dists_hf_(std::move(dists_hf)), view_(view),
          n_lf_(n_lf), n_hf_(n_hf), a_eta_p_(a_eta_p), b_eta_p_(b_eta_p), a_delta_p_(a_delta_p),
          b_delta_p_(b_delta_p),
          gamma_cache_(static_cast<std::size_t>(view.r_x)),
          zeta_cache_(static_cast<std::size_t>(view.r_x_disc)) {}

    double operator()(const Eigen::VectorXd& q) {
        if (q.size() != view_.n_params()) throw dimension_error("mf target: parameter size mismatch");
        if (q.cwiseAbs().maxCoeff() > 600.0) return -std::numeric_limits<double>::infinity();
        const Eigen::Index q_lf = static_cast<Eigen::Index>(n_lf_) * view_.r_x;
        const Eigen::Index hf0 = q_lf;
        const Eigen::Index z0 = hf0 + static_cast<Eigen::Index>(n_hf_) * view_.r_x;
        const Eigen::Index nq = theta_hat_.size();

        const double lambda_eta = std::exp(q(view_.lambda_eta_at()));
        const double lambda_delta = std::exp(q(view_.lambda_delta_at()));
        cov_.resize(nq, nq);
        cov_.setZero();
        cov_.topLeftCorner(q_lf, q_lf) = (1.0 / lambda_eta) * (*A_C_);
        cov_.bottomRightCorner(nq - q_lf, nq - q_lf) = (1.0 / lambda_delta) * (*A_K_);

        double logprior = gamma_logpdf(lambda_eta, a_eta_p_, b_eta_p_) +
                          gamma_logpdf(lambda_delta, a_delta_p_, b_delta_p_);
        const int p = view_.p;
        for (int j = 0; j < view_.r_x; ++j) {
            const Eigen::VectorXd key = q.segment(view_.gamma_at(j), p + 1);
            const Eigen::MatrixXd& u =
                gamma_cache_[static_cast<std::size_t>(j)].get(key, [&](Eigen::MatrixXd& out) {
                    GPHyperparams h;
                    h.precision = std::exp(key(0));
                    h.length_scales = key.tail(p).array().exp();
                    out = cov_from_dists(dists_union_, h);
                    out.diagonal().array() += kCovJitterRel / h.precision;
                });
            cov_.block(static_cast<Eigen::Index>(j) * n_lf_, static_cast<Eigen::Index>(j) * n_lf_,
                       n_lf_, n_lf_) += u.topLeftCorner(n_lf_, n_lf_);
            cov_.block(static_cast<Eigen::Index>(j) * n_lf_,
                       hf0 + static_cast<Eigen::Index>(j) * n_hf_, n_lf_, n_hf_) +=
                u.topRightCorner(n_lf_, n_hf_);
            cov_.block(hf0 + static_cast<Eigen::Index>(j) * n_hf_,
                       static_cast<Eigen::Index>(j) * n_lf_, n_hf_, n_lf_) +=
                u.bottomLeftCorner(n_hf_, n_lf_);
            cov_.block(hf0 + static_cast<Eigen::Index>(j) * n_hf_,
                       hf0 + static_cast<Eigen::Index>(j) * n_hf_, n_hf_, n_hf_) +=
                u.bottomRightCorner(n_hf_, n_hf_);
            logprior += folded_normal_logpdf(std::exp(key(0)));
            for (int d = 0; d < p; ++d) logprior += lognormal_logpdf(std::exp(key(1 + d)));
        }
        for (int j = 0; j < view_.r_x_disc; ++j) {
            const Eigen::VectorXd key = q.segment(view_.zeta_at(j), p + 1);
            const Eigen::MatrixXd& u =
                zeta_cache_[static_cast<std::size_t>(j)].get(key, [&](Eigen::MatrixXd& out) {
                    GPHyperparams h;
                    h.precision = std::exp(key(0));
                    h.length_scales = key.tail(p).array().exp();
                    out = cov_from_dists(dists_hf_, h);
                    out.diagonal().array() += kCovJitterRel / h.precision;
                });
            cov_.block(z0 + static_cast<Eigen::Index>(j) * n_hf_,
                       z0 + static_cast<Eigen::Index>(j) * n_hf_, n_hf_, n_hf_) += u;
            logprior += folded_normal_logpdf(std::exp(key(0)));
            for (int d = 0; d < p; ++d) logprior += lognormal_logpdf(std::exp(key(1 + d)));
        }

        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < nq; ++i) logdet += std::log(llt_.matrixL()(i, i));
        const double quad = llt_.matrixL().solve(theta_hat_).squaredNorm();
        constexpr double log2pi = 1.8378770664093454835606594728112;
        return -0.5 * (static_cast<double>(nq) * log2pi + quad) - logdet + logprior + q.sum();
    }

private:
    Eigen::VectorXd theta_hat_;
    const Eigen::MatrixXd *A_C_, *A_K_;
    std::vector<Eigen::MatrixXd> dists_union_, dists_hf_;
    MFParamView view_;
    int n_lf_, n_hf_;
    double a_eta_p_, b_eta_p_, a_delta_p_, b_delta_p_;
    std::vector<BlockCache> gamma_cache_, zeta_cache_;
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

} // namespace detail

struct MFFitOptions {
    std::optional<TransformSpec> transform;
    double a_eta = 1.0, b_eta = 0.5;
    double a_delta = 1.0, b_delta = 0.5;
    int k_interp = 3;
    int hooi_max_iter = 50;
    double hooi_tol = 1e-8;
    // MCMC settings for the internal coarse fit when none is supplied
    std::optional<MCMCConfig> lf_mcmc;
};

// Joint multi-fidelity fit: coarse Tucker fit, basis interpolation to the
// fine mesh, discrepancy Tucker fit, then one MCMC over all GP
// hyperparameters and both noise precisions.
inline MFEmulator fit_mf(const DenseTensor& z_lf, const DenseTensor& z_hf,
                         const DesignMatrix& X_lf, const DesignMatrix& X_hf,
                         const MeshCoords& mesh_lf, const MeshCoords& mesh_hf,
                         const RankSpec& ranks, const RankSpec& ranks_disc,
                         const MCMCConfig& cfg, const MFFitOptions& opts = {},
                         const SFEmulator* prefit_lf = nullptr) {
    if (z_hf.order() != 4) throw dimension_error("fit_mf: fine ensemble must be 4-mode");
    if (z_hf.dim(3) != static_cast<std::size_t>(X_hf.n()))
        throw dimension_error("fit_mf: fine design-mode size must match design rows");
    if (z_hf.dim(0) != static_cast<std::size_t>(mesh_hf.n()) ||
        z_lf.dim(0) != static_cast<std::size_t>(mesh_lf.n()))
        throw dimension_error("fit_mf: spatial mode sizes must match mesh sizes");

    MFEmulator em;
    em.a_delta = opts.a_delta;
    em.b_delta = opts.b_delta;
    em.k_interp = opts.k_interp;
    em.design_hf = X_hf;
    em.mesh_lf = mesh_lf;
    em.mesh_hf = mesh_hf;

    if (prefit_lf) {
        em.lf = *prefit_lf;
    } else {
        SFFitOptions lf_opts;
        lf_opts.transform = opts.transform;
        lf_opts.a_eta = opts.a_eta;
        lf_opts.b_eta = opts.b_eta;
        lf_opts.hooi_max_iter = opts.hooi_max_iter;
        lf_opts.hooi_tol = opts.hooi_tol;
        MCMCConfig lf_cfg = opts.lf_mcmc ? *opts.lf_mcmc : cfg;
        em.lf = fit_sf(z_lf, X_lf, ranks, lf_cfg, lf_opts);
    }

    const DenseTensor z_hf_t =
        em.lf.transform ? apply_tensor(z_hf, *em.lf.transform, TransformDirection::forward) : z_hf;

    em.interp_spatial = interpolate_bases(em.lf.tucker.factors[0], mesh_lf, mesh_hf, opts.k_interp);
    em.hf_gamma = hf_effective_weights(em.lf, X_hf);
    const DenseTensor disc = discrepancy_ensemble(z_hf_t, em.lf.tucker, em.interp_spatial, em.hf_gamma);
    std::vector<std::size_t> dranks;
    if (disc.sq_norm() == 0.0) {
        // degenerate zero-discrepancy data: keep a minimal basis
        dranks.assign(4, 1);
    } else {
        dranks = ranks_disc.resolve(disc);
    }
    em.disc_tucker = hooi(disc, dranks, opts.hooi_max_iter, opts.hooi_tol);
    em.zeta_hat = effective_weights(em.disc_tucker);

    const MFGramParts parts =
        make_gram_parts(em.lf.tucker, em.interp_spatial, em.disc_tucker, X_hf.n());
    em.gram_K = mf_reduced_gram(parts);
    {
        Eigen::MatrixXd gk = em.gram_K;
        // floor for degenerate directions (e.g. an exactly zero discrepancy)
        const double floor = std::max(1e-10 * gk.diagonal().maxCoeff(), 1e-12);
        gk.diagonal().array() += floor;
        Eigen::LLT<Eigen::MatrixXd> llt(gk);
        if (llt.info() != Eigen::Success)
            throw numeric_error("fit_mf: joint design gram not invertible");
        em.noise_gram_inv_K = llt.solve(Eigen::MatrixXd::Identity(gk.rows(), gk.cols()));
    }

    // noise-precision posterior updates from the fine-fidelity residual
    {
        const std::size_t n_field = z_hf_t.size() / z_hf_t.dim(3);
        const Eigen::VectorXd ktz =
            mf_project_data(z_hf_t, em.lf.tucker, em.interp_spatial, em.disc_tucker);
        const double fitted_sq = ktz.dot(em.noise_gram_inv_K * ktz);
        const double resid = std::max(0.0, z_hf_t.sq_norm() - fitted_sq);
        em.a_delta_prime =
            opts.a_delta + static_cast<double>(X_hf.n()) *
                               (static_cast<double>(n_field) -
                                static_cast<double>(em.r_x() + em.r_x_disc())) /
                               2.0;
        em.b_delta_prime = opts.b_delta + resid / 2.0;
    }

    // joint MCMC
    const int p = em.p();
    MFParamView view{em.r_x(), em.r_x_disc(), p};
    std::vector<std::string> names = detail::sf_param_names(em.r_x(), p, "lf_");
    {
        auto disc_names = detail::sf_param_names(em.r_x_disc(), p, "disc_");
        names.insert(names.end(), disc_names.begin(), disc_names.end());
    }
    names.push_back("lambda_eta");
    names.push_back("lambda_delta");

    Eigen::MatrixXd union_pts(X_lf.n() + X_hf.n(), p);
    union_pts.topRows(X_lf.n()) = X_lf.pts;
    union_pts.bottomRows(X_hf.n()) = X_hf.pts;
    std::vector<Eigen::MatrixXd> dists_union = abs_dist_matrices(union_pts, union_pts);
    std::vector<Eigen::MatrixXd> dists_hf = abs_dist_matrices(X_hf.pts, X_hf.pts);

    Eigen::VectorXd init = Eigen::VectorXd::Zero(view.n_params());
    init(view.lambda_eta_at()) = std::log(em.lf.a_eta_prime / em.lf.b_eta_prime);
    init(view.lambda_delta_at()) = std::log(em.a_delta_prime / em.b_delta_prime);

    const Eigen::VectorXd th = em.theta_hat();
    const Eigen::MatrixXd* A_C = &em.lf.noise_gram_inv;
    const Eigen::MatrixXd* A_K = &em.noise_gram_inv_K;
    em.samples = run_chains(
        [&](int) {
            return LogTarget(detail::MFLogTarget(th, A_C, A_K, dists_union, dists_hf, view,
                                                 em.n_lf(), em.n_hf(), em.lf.a_eta_prime,
                                                 em.lf.b_eta_prime, em.a_delta_prime,
                                                 em.b_delta_prime));
        },
        init, cfg, names);
    return em;
}

// Joint posterior prediction on the fine grid: latent (gamma*, zeta*) are
// conditioned on all observed effective weights, the field is assembled from
// interpolated coarse bases plus discrepancy bases, and the fine-fidelity
// noise is added.
inline std::vector<PredictionResult> predict_mf_batch(const MFEmulator& em,
                                                      const Eigen::MatrixXd& x_stars,
                                                      const PredictOptions& opts = {}) {
    if (!em.fitted()) throw state_error("predict_mf: emulator not fitted");
    if (x_stars.cols() != em.design_hf.p())
        throw dimension_error("predict_mf: input dimensionality mismatch");
    const int T = static_cast<int>(x_stars.rows());
    const int r_x = em.r_x(), r_xd = em.r_x_disc(), p = em.p();
    const int n_lf = em.n_lf(), n_hf = em.n_hf();
    const int q_lat = r_x + r_xd;
    MFParamView view{r_x, r_xd, p};

    const std::vector<int> thin = em.samples.thinned_indices(opts.n_draws);
    const int D = static_cast<int>(thin.size());

    const Eigen::MatrixXd F_lf = detail::field_map(em.lf.tucker.core, em.interp_spatial,
                                                   em.lf.tucker.factors[1], em.lf.tucker.factors[2]);
    const Eigen::MatrixXd F_disc =
        detail::field_map(em.disc_tucker.core, em.disc_tucker.factors[0],
                          em.disc_tucker.factors[1], em.disc_tucker.factors[2]);
    Eigen::MatrixXd F(F_lf.rows(), q_lat);
    F.leftCols(r_x) = F_lf;
    F.rightCols(r_xd) = F_disc;

    Eigen::MatrixXd union_pts(n_lf + n_hf, p);
    union_pts.topRows(n_lf) = em.lf.design.pts;
    union_pts.bottomRows(n_hf) = em.design_hf.pts;
    const std::vector<Eigen::MatrixXd> dists_union = abs_dist_matrices(union_pts, union_pts);
    const std::vector<Eigen::MatrixXd> dists_hf = abs_dist_matrices(em.design_hf.pts, em.design_hf.pts);
    const Eigen::VectorXd th = em.theta_hat();
    const Eigen::Index q_obs = th.size();
    const Eigen::Index hf0 = static_cast<Eigen::Index>(n_lf) * r_x;
    const Eigen::Index z0 = hf0 + static_cast<Eigen::Index>(n_hf) * r_x;

    std::vector<detail::LatentSummary> lat(static_cast<std::size_t>(T));
    for (auto& l : lat) l.init(D, q_lat);

    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::MatrixXd cross(q_obs, q_lat);
    for (int d = 0; d < D; ++d) {
        const Eigen::VectorXd theta = em.samples.draw_natural(thin[static_cast<std::size_t>(d)]);
        Eigen::MatrixXd cov = mf_observed_cov(theta, view, dists_union, dists_hf, n_lf, n_hf,
                                              em.lf.noise_gram_inv, em.noise_gram_inv_K);
        llt.compute(cov);
        if (llt.info() != Eigen::Success) {
            cov.diagonal().array() += kCovJitterRel * cov.diagonal().maxCoeff();
            llt.compute(cov);
            if (llt.info() != Eigen::Success)
                throw numeric_error("predict_mf: observed covariance not positive definite");
        }
        const Eigen::VectorXd w = llt.solve(th);
        const double lambda_delta = theta(view.lambda_delta_at());

        for (int t = 0; t < T; ++t) {
            cross.setZero();
            Eigen::VectorXd prior_var(q_lat);
            for (int j = 0; j < r_x; ++j) {
                GPHyperparams h = view.gamma_gp(theta, j);
                prior_var(j) = 1.0 / h.precision;
                for (int a = 0; a < n_lf; ++a) {
                    double s = 0.0;
                    for (int dd = 0; dd < p; ++dd)
                        s += std::abs(em.lf.design.pts(a, dd) - x_stars(t, dd)) / h.length_scales(dd);
                    cross(static_cast<Eigen::Index>(j) * n_lf + a, j) = std::exp(-s) / h.precision;
                }
                for (int a = 0; a < n_hf; ++a) {
                    double s = 0.0;
                    for (int dd = 0; dd < p; ++dd)
                        s += std::abs(em.design_hf.pts(a, dd) - x_stars(t, dd)) / h.length_scales(dd);
                    cross(hf0 + static_cast<Eigen::Index>(j) * n_hf + a, j) =
                        std::exp(-s) / h.precision;
                }
            }
            for (int j = 0; j < r_xd; ++j) {
                GPHyperparams h = view.zeta_gp(theta, j);
                prior_var(r_x + j) = 1.0 / h.precision;
                for (int a = 0; a < n_hf; ++a) {
                    double s = 0.0;
                    for (int dd = 0; dd < p; ++dd)
                        s += std::abs(em.design_hf.pts(a, dd) - x_stars(t, dd)) / h.length_scales(dd);
                    cross(z0 + static_cast<Eigen::Index>(j) * n_hf + a, r_x + j) =
                        std::exp(-s) / h.precision;
                }
            }
            const Eigen::VectorXd m = cross.transpose() * w;
            const Eigen::MatrixXd V = llt.matrixL().solve(cross);
            Eigen::MatrixXd S = prior_var.asDiagonal().toDenseMatrix() - V.transpose() * V;
            S = 0.5 * (S + S.transpose()).eval();
            Rng rng(sub_seed(mix_seed(opts.seed ^ 0x5fa11ULL),
                             static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(D) +
                                 static_cast<std::uint64_t>(d)));
            lat[static_cast<std::size_t>(t)].record(d, m, S, 1.0 / lambda_delta, rng);
        }
    }

    const std::vector<std::size_t> fdims = em.field_dims();
    std::vector<PredictionResult> out(static_cast<std::size_t>(T));
    parallel_for(static_cast<std::size_t>(T), [&](std::size_t t) {
        out[t] = detail::assemble_field(x_stars.row(static_cast<Eigen::Index>(t)).transpose(),
                                        fdims, F, lat[t], em.lf.transform, opts,
                                        sub_seed(mix_seed(opts.seed ^ 0x015eULL), t));
    });
    return out;
}

inline PredictionResult predict_mf(const MFEmulator& em, const Eigen::VectorXd& x_star,
                                   const PredictOptions& opts = {}) {
    Eigen::MatrixXd X(1, x_star.size());
    X.row(0) = x_star.transpose();
    return predict_mf_batch(em, X, opts)[0];
}

// --- persistence ---

inline void save_mf(const MFEmulator& em, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_sf(em.lf, dir / "lf_model");
    save_mft1(DenseTensor({static_cast<std::size_t>(em.interp_spatial.rows()),
                           static_cast<std::size_t>(em.interp_spatial.cols())},
                          std::vector<double>(em.interp_spatial.data(),
                                              em.interp_spatial.data() + em.interp_spatial.size())),
              dir / "interp_spatial.mft");
    save_tucker(em.disc_tucker, dir / "disc_tucker");
    write_design_csv(dir / "design_hf.csv", em.design_hf.pts);
    write_mesh_csv(dir / "mesh_lf.csv", em.mesh_lf.pts);
    write_mesh_csv(dir / "mesh_hf.csv", em.mesh_hf.pts);
    save_posterior_csv(em.samples, dir / "posterior.csv");
    Eigen::MatrixXd hf_gamma = em.hf_gamma;
    save_mft1(DenseTensor({static_cast<std::size_t>(hf_gamma.rows()),
                           static_cast<std::size_t>(hf_gamma.cols())},
                          std::vector<double>(hf_gamma.data(), hf_gamma.data() + hf_gamma.size())),
              dir / "hf_gamma.mft");
    nlohmann::json j;
    j["type"] = "mf";
    j["k_interp"] = em.k_interp;
    j["a_delta"] = em.a_delta;
    j["b_delta"] = em.b_delta;
    j["a_delta_prime"] = em.a_delta_prime;
    j["b_delta_prime"] = em.b_delta_prime;
    nlohmann::json diag;
    if (em.samples.rhat.size() > 0)
        for (int k = 0; k < em.samples.n_params(); ++k)
            diag["rhat"][em.samples.param_names[static_cast<std::size_t>(k)]] = em.samples.rhat(k);
    j["diagnostics"] = diag;
    std::ofstream f(dir / "manifest.json");
    f << j.dump(2) << "\n";
    if (!f) throw format_error("mf: cannot write manifest in " + dir.string());
}

inline MFEmulator load_mf(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw format_error("mf: missing manifest in " + dir.string());
    nlohmann::json j;
    f >> j;
    if (j.at("type") != "mf") throw format_error("mf: manifest type mismatch in " + dir.string());
    MFEmulator em;
    em.lf = load_sf(dir / "lf_model");
    {
        DenseTensor t = load_mft1(dir / "interp_spatial.mft");
        em.interp_spatial = Eigen::Map<const Eigen::MatrixXd>(
            t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    }
    em.disc_tucker = load_tucker(dir / "disc_tucker");
    em.zeta_hat = em.disc_tucker.factors[3];
    em.design_hf = DesignMatrix{read_design_csv(dir / "design_hf.csv")};
    em.mesh_lf = MeshCoords{read_mesh_csv(dir / "mesh_lf.csv")};
    em.mesh_hf = MeshCoords{read_mesh_csv(dir / "mesh_hf.csv")};
    em.samples = load_posterior_csv(dir / "posterior.csv");
    {
        DenseTensor t = load_mft1(dir / "hf_gamma.mft");
        em.hf_gamma = Eigen::Map<const Eigen::MatrixXd>(
            t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
    }
    em.k_interp = j.at("k_interp").get<int>();
    em.a_delta = j.at("a_delta").get<double>();
    em.b_delta = j.at("b_delta").get<double>();
    em.a_delta_prime = j.at("a_delta_prime").get<double>();
    em.b_delta_prime = j.at("b_delta_prime").get<double>();
    const MFGramParts parts =
        make_gram_parts(em.lf.tucker, em.interp_spatial, em.disc_tucker, em.design_hf.n());
    em.gram_K = mf_reduced_gram(parts);
    Eigen::MatrixXd gk = em.gram_K;
    gk.diagonal().array() += std::max(1e-10 * gk.diagonal().maxCoeff(), 1e-12);
    Eigen::LLT<Eigen::MatrixXd> llt(gk);
    if (llt.info() != Eigen::Success) throw numeric_error("mf: joint gram not invertible on load");
    em.noise_gram_inv_K = llt.solve(Eigen::MatrixXd::Identity(gk.rows(), gk.cols()));
    return em;
}

} // namespace mft
