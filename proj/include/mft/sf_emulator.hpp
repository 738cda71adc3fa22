#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mft/errors.hpp"
#include "mft/gp.hpp"
#include "mft/io.hpp"
#include "mft/mcmc.hpp"
#include "mft/parallel.hpp"
#include "mft/prediction.hpp"
#include "mft/tensor.hpp"
#include "mft/transform.hpp"
#include "mft/tucker.hpp"

namespace mft {

// Ranks either given explicitly or selected per mode by explained variance.
struct RankSpec {
    std::optional<std::vector<std::size_t>> explicit_ranks;
    double variance_target = 0.99;

    std::vector<std::size_t> resolve(const DenseTensor& t) const {
        if (explicit_ranks) {
            if (explicit_ranks->size() != t.order())
                throw config_error("ranks: expected one rank per mode");
            return *explicit_ranks;
        }
        return select_ranks(t, variance_target);
    }
};

inline Eigen::MatrixXd kron_with_identity(const Eigen::MatrixXd& M, Eigen::Index n) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(M.rows() * n, M.cols() * n);
    for (Eigen::Index j = 0; j < M.rows(); ++j)
        for (Eigen::Index k = 0; k < M.cols(); ++k)
            out.block(j * n, k * n, n, n).diagonal().setConstant(M(j, k));
    return out;
}

// Design-mode factor columns: the only input-dependent quantities in the
// basis representation. Validates that mapping them through the transposed
// core unfolding reproduces the directly summed full weights.
inline Eigen::MatrixXd effective_weights(const TuckerModel& m) {
    if (m.order() != 4)
        throw dimension_error("effective_weights: expected a 4-mode model (space, month, year, design)");
    const Eigen::MatrixXd& Ux = m.factors[3];
    const Eigen::MatrixXd G4 = unfold(m.core, 3); // r_x x (r_s r_m r_y)
    const Eigen::MatrixXd W = Ux * G4;            // full weights, design-major

    // independent summation straight from the elementwise definition
    const std::size_t rs = m.core.dim(0), rm = m.core.dim(1), ry = m.core.dim(2),
                      rx = m.core.dim(3);
    const std::size_t n_x = static_cast<std::size_t>(Ux.rows());
    double max_diff = 0.0;
    for (std::size_t jy = 0; jy < ry; ++jy)
        for (std::size_t jm = 0; jm < rm; ++jm)
            for (std::size_t js = 0; js < rs; ++js) {
                const std::size_t col = js + rs * (jm + rm * jy);
                for (std::size_t i = 0; i < n_x; ++i) {
                    double s = 0.0;
                    for (std::size_t jx = 0; jx < rx; ++jx)
                        s += m.core.at({js, jm, jy, jx}) *
                             Ux(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jx));
                    max_diff = std::max(max_diff,
                                        std::abs(s - W(static_cast<Eigen::Index>(i),
                                                       static_cast<Eigen::Index>(col))));
                }
            }
    const double scale = std::max(1.0, W.cwiseAbs().maxCoeff());
    if (max_diff > 1e-10 * scale)
        throw numeric_error("effective_weights: weight-map identity violated");
    return Ux;
}

inline Eigen::MatrixXd gram_core_matrix(const TuckerModel& m) {
    const Eigen::MatrixXd G4 = unfold(m.core, 3);
    return G4 * G4.transpose();
}

// Gram of the stacked basis-times-weight design operator. Because the basis
// tensors are outer products of orthonormal factor columns, the operator's
// Gram collapses to (G4 G4^T) (x) I without materializing the basis matrix.
inline Eigen::MatrixXd reduced_gram(const TuckerModel& m) {
    if (m.order() != 4) throw dimension_error("reduced_gram: expected a 4-mode model");
    for (std::size_t k = 0; k < 3; ++k)
        if (max_orthonormality_defect(m.factors[k]) > 1e-8)
            throw domain_error("reduced_gram: factor " + std::to_string(k) +
                               " is not orthonormal");
    return kron_with_identity(gram_core_matrix(m), m.factors[3].rows());
}

// Projection of the data onto the basis-times-weight operator (its adjoint
// applied to vec(z)), computed by successive mode products.
inline Eigen::VectorXd project_data(const DenseTensor& z, const TuckerModel& m) {
    if (z.order() != 4) throw dimension_error("project_data: expected 4-mode data");
    for (std::size_t k = 0; k < 3; ++k)
        if (z.dim(k) != static_cast<std::size_t>(m.factors[k].rows()))
            throw dimension_error("project_data: data dims do not match factors");
    DenseTensor p = z;
    for (std::size_t k = 0; k < 3; ++k)
        p = mode_product(p, m.factors[k].transpose(), k);
    const Eigen::MatrixXd W_proj = unfold(p, 3);         // n_x x (r_s r_m r_y)
    const Eigen::MatrixXd G4 = unfold(m.core, 3);        // r_x x R
    Eigen::MatrixXd out = W_proj * G4.transpose();       // n_x x r_x
    return Eigen::Map<const Eigen::VectorXd>(out.data(), out.size());
}

// Gamma-posterior update for the field noise precision: the shape absorbs
// the dimension drop from data space to effective-weight space, the rate
// absorbs the squared projection residual.
inline std::pair<double, double> reduced_hyperparams(const DenseTensor& z, const TuckerModel& m,
                                                     double a_eta, double b_eta) {
    if (!(a_eta > 0.0 && b_eta > 0.0))
        throw domain_error("reduced_hyperparams: priors must be positive");
    const std::size_t n_x = z.dim(3);
    const std::size_t n = z.size() / n_x;
    const std::size_t r_x = m.core.dim(3);
    const Eigen::VectorXd ctz = project_data(z, m);
    const Eigen::MatrixXd gram = gram_core_matrix(m);
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw numeric_error("reduced_hyperparams: singular core gram");
    // r^T (gram (x) I)^{-1} r via the matrix identity (M (x) I) vec(X) = vec(X M^T)
    Eigen::Map<const Eigen::MatrixXd> R(ctz.data(), static_cast<Eigen::Index>(n_x),
                                        static_cast<Eigen::Index>(r_x));
    const Eigen::MatrixXd solved = llt.solve(R.transpose()).transpose();
    const double fitted_sq = (R.array() * solved.array()).sum();
    const double resid = std::max(0.0, z.sq_norm() - fitted_sq);
    const double a_prime = a_eta + static_cast<double>(n_x) * static_cast<double>(n - r_x) / 2.0;
    const double b_prime = b_eta + resid / 2.0;
    return {a_prime, b_prime};
}

// Fitted single-fidelity emulator.
struct SFEmulator {
    TuckerModel tucker; // modes: space, month, year, design
    DesignMatrix design;
    Eigen::MatrixXd gamma_hat;    // n_x x r_x observed effective weights
    Eigen::MatrixXd core_unfold4; // r_x x (r_s r_m r_y)
    Eigen::MatrixXd gram_core;    // core_unfold4 * core_unfold4^T
    Eigen::MatrixXd noise_gram_inv; // (reduced gram)^{-1}, dense
    PosteriorSamples samples;
    double a_eta = 1.0, b_eta = 0.5;
    double a_eta_prime = 0.0, b_eta_prime = 0.0;
    double data_sq_norm = 0.0;
    std::optional<TransformSpec> transform;

    int n_x() const { return static_cast<int>(design.n()); }
    int p() const { return static_cast<int>(design.p()); }
    int r_x() const { return static_cast<int>(tucker.core.dim(3)); }
    bool fitted() const { return samples.n_chains() > 0; }

    std::vector<std::size_t> field_dims() const {
        return {static_cast<std::size_t>(tucker.factors[0].rows()),
                static_cast<std::size_t>(tucker.factors[1].rows()),
                static_cast<std::size_t>(tucker.factors[2].rows())};
    }

    Eigen::VectorXd gamma_hat_vec() const {
        return Eigen::Map<const Eigen::VectorXd>(gamma_hat.data(), gamma_hat.size());
    }
};

namespace detail {

inline std::vector<std::string> sf_param_names(int r_x, int p, const std::string& prefix) {
    std::vector<std::string> names;
    for (int j = 0; j < r_x; ++j) {
        names.push_back(prefix + "ew" + std::to_string(j + 1) + "_prec");
        for (int d = 0; d < p; ++d)
            names.push_back(prefix + "ew" + std::to_string(j + 1) + "_ls_x" + std::to_string(d + 1));
    }
    return names;
}

// Two-slot per-block covariance cache: during componentwise Metropolis the
// current state and one proposal alternate, so two slots give a perfect hit
// rate for untouched blocks.
struct BlockCache {
    struct Slot {
        Eigen::VectorXd key;
        Eigen::MatrixXd cov;
        bool valid = false;
        long age = 0;
    };
    std::array<Slot, 2> slots;
    long tick = 0;

    template <class Fill>
    const Eigen::MatrixXd& get(const Eigen::VectorXd& key, Fill fill) {
        for (auto& s : slots)
            if (s.valid && s.key.size() == key.size() && s.key == key) {
                s.age = ++tick;
                return s.cov;
            }
        auto& victim = !slots[0].valid ? slots[0]
                       : (!slots[1].valid ? slots[1]
                                          : (slots[0].age <= slots[1].age ? slots[0] : slots[1]));
        victim.key = key;
        fill(victim.cov);
        victim.valid = true;
        victim.age = ++tick;
        return victim.cov;
    }
};

// Log posterior density (up to a constant) over log-transformed parameters
// [per-weight precision + length scales ..., field noise precision] for the
// reduced single-fidelity model.
class SFLogTarget {
public:
    SFLogTarget(Eigen::VectorXd gamma_hat, const Eigen::MatrixXd* noise_gram_inv,
                std::vector<Eigen::MatrixXd> dists, int r_x, int p, double a_prime,
                double b_prime)
        : gamma_hat_(std::move(gamma_hat)), A_(noise_gram_inv), dists_(std::move(dists)),
          r_x_(r_x), p_(p), a_prime_(a_prime), b_prime_(b_prime),
          cache_(static_cast<std::size_t>(r_x)) {}

    double operator()(const Eigen::VectorXd& q) {
        const int P = r_x_ * (p_ + 1) + 1;
        if (q.size() != P) throw dimension_error("sf target: parameter size mismatch");
        if (q.cwiseAbs().maxCoeff() > 600.0) return -std::numeric_limits<double>::infinity();
        const Eigen::Index n_obs = gamma_hat_.size();
        const int n_x = static_cast<int>(n_obs) / r_x_;

        cov_.resize(n_obs, n_obs);
        cov_ = std::exp(-q(P - 1)) * (*A_);
        double logprior = gamma_logpdf(std::exp(q(P - 1)), a_prime_, b_prime_);
        for (int j = 0; j < r_x_; ++j) {
            const Eigen::VectorXd key = q.segment(j * (p_ + 1), p_ + 1);
            const Eigen::MatrixXd& block =
                cache_[static_cast<std::size_t>(j)].get(key, [&](Eigen::MatrixXd& out) {
                    GPHyperparams h;
                    h.precision = std::exp(key(0));
                    h.length_scales = key.tail(p_).array().exp();
                    out = cov_from_dists(dists_, h);
                    out.diagonal().array() += kCovJitterRel / h.precision;
                });
            cov_.block(j * n_x, j * n_x, n_x, n_x) += block;
            logprior += folded_normal_logpdf(std::exp(key(0)));
            for (int d = 0; d < p_; ++d) logprior += lognormal_logpdf(std::exp(key(1 + d)));
        }

        llt_.compute(cov_);
        if (llt_.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < n_obs; ++i) logdet += std::log(llt_.matrixL()(i, i));
        const double quad = llt_.matrixL().solve(gamma_hat_).squaredNorm();
        constexpr double log2pi = 1.8378770664093454835606594728112;
        const double loglik =
            -0.5 * (static_cast<double>(n_obs) * log2pi + quad) - logdet;
        return loglik + logprior + q.sum(); // + log-Jacobian of the exp transform
    }

private:
    Eigen::VectorXd gamma_hat_;
    const Eigen::MatrixXd* A_;
    std::vector<Eigen::MatrixXd> dists_;
    int r_x_, p_;
    double a_prime_, b_prime_;
    std::vector<BlockCache> cache_;
    Eigen::MatrixXd cov_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

} // namespace detail

struct SFFitOptions {
    std::optional<TransformSpec> transform;
    double a_eta = 1.0, b_eta = 0.5;
    int hooi_max_iter = 50;
    double hooi_tol = 1e-8;
};

// Fits the reduced single-fidelity model: Tucker compression, observed
// effective weights, then MCMC over the per-weight GP hyperparameters and
// the field noise precision.
inline SFEmulator fit_sf(const DenseTensor& ensemble, const DesignMatrix& design,
                         const RankSpec& ranks, const MCMCConfig& cfg,
                         const SFFitOptions& opts = {}) {
    if (ensemble.order() != 4)
        throw dimension_error("fit_sf: ensemble must be 4-mode (space, month, year, design)");
    if (ensemble.dim(3) != static_cast<std::size_t>(design.n()))
        throw dimension_error("fit_sf: design-mode size must match design rows");

    SFEmulator em;
    em.transform = opts.transform;
    em.a_eta = opts.a_eta;
    em.b_eta = opts.b_eta;
    em.design = design;

    const DenseTensor z = opts.transform
                              ? apply_tensor(ensemble, *opts.transform, TransformDirection::forward)
                              : ensemble;
    em.data_sq_norm = z.sq_norm();
    em.tucker = hooi(z, ranks.resolve(z), opts.hooi_max_iter, opts.hooi_tol);
    em.gamma_hat = effective_weights(em.tucker);
    em.core_unfold4 = unfold(em.tucker.core, 3);
    em.gram_core = em.core_unfold4 * em.core_unfold4.transpose();

    Eigen::LLT<Eigen::MatrixXd> llt(em.gram_core);
    if (llt.info() != Eigen::Success)
        throw numeric_error("fit_sf: singular core gram (degenerate design-mode factor)");
    em.noise_gram_inv = kron_with_identity(
        llt.solve(Eigen::MatrixXd::Identity(em.r_x(), em.r_x())), design.n());

    auto [ap, bp] = reduced_hyperparams(z, em.tucker, opts.a_eta, opts.b_eta);
    em.a_eta_prime = ap;
    em.b_eta_prime = bp;

    const int p = em.p(), r_x = em.r_x();
    std::vector<std::string> names = detail::sf_param_names(r_x, p, "");
    names.push_back("lambda_eta");

    Eigen::VectorXd init = Eigen::VectorXd::Zero(r_x * (p + 1) + 1);
    init(init.size() - 1) = std::log(ap / bp);

    const Eigen::VectorXd gh = em.gamma_hat_vec();
    const std::vector<Eigen::MatrixXd> dists = abs_dist_matrices(design.pts, design.pts);
    const Eigen::MatrixXd* A = &em.noise_gram_inv;
    em.samples = run_chains(
        [&](int) { return LogTarget(detail::SFLogTarget(gh, A, dists, r_x, p, ap, bp)); },
        init, cfg, names);
    return em;
}

// Batch posterior prediction. For each retained hyperparameter draw the
// latent weights at every requested input are conditioned on the observed
// effective weights; the field pass then assembles pointwise summaries.
// spatial_override substitutes a different spatial factor with matching
// column count (used for coarse-to-fine interpolated prediction).
inline std::vector<PredictionResult> predict_sf_batch(
    const SFEmulator& em, const Eigen::MatrixXd& x_stars, const PredictOptions& opts = {},
    const Eigen::MatrixXd* spatial_override = nullptr) {
    if (!em.fitted()) throw state_error("predict: emulator not fitted");
    if (x_stars.cols() != em.design.p())
        throw dimension_error("predict: input dimensionality mismatch");
    const int T = static_cast<int>(x_stars.rows());
    const int r_x = em.r_x(), p = em.p(), n_x = em.n_x();
    const Eigen::Index n_obs = static_cast<Eigen::Index>(n_x) * r_x;

    const std::vector<int> thin = em.samples.thinned_indices(opts.n_draws);
    const int D = static_cast<int>(thin.size());

    const Eigen::MatrixXd& Us =
        spatial_override ? *spatial_override : em.tucker.factors[0];
    if (spatial_override && spatial_override->cols() != em.tucker.factors[0].cols())
        throw dimension_error("predict: spatial override rank mismatch");
    const Eigen::MatrixXd F =
        detail::field_map(em.tucker.core, Us, em.tucker.factors[1], em.tucker.factors[2]);
    std::vector<std::size_t> fdims = {static_cast<std::size_t>(Us.rows()),
                                      static_cast<std::size_t>(em.tucker.factors[1].rows()),
                                      static_cast<std::size_t>(em.tucker.factors[2].rows())};

    const std::vector<Eigen::MatrixXd> dists = abs_dist_matrices(em.design.pts, em.design.pts);
    const Eigen::VectorXd gh = em.gamma_hat_vec();

    std::vector<detail::LatentSummary> lat(static_cast<std::size_t>(T));
    for (auto& l : lat) l.init(D, r_x);

    Eigen::MatrixXd cov(n_obs, n_obs);
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::MatrixXd cross(n_obs, r_x);
    for (int d = 0; d < D; ++d) {
        const Eigen::VectorXd theta = em.samples.draw_natural(thin[static_cast<std::size_t>(d)]);
        const double lambda = theta(theta.size() - 1);
        cov = (1.0 / lambda) * em.noise_gram_inv;
        std::vector<GPHyperparams> hs(static_cast<std::size_t>(r_x));
        for (int j = 0; j < r_x; ++j) {
            auto& h = hs[static_cast<std::size_t>(j)];
            h.precision = theta(j * (p + 1));
            h.length_scales = theta.segment(j * (p + 1) + 1, p);
            Eigen::MatrixXd block = cov_from_dists(dists, h);
            block.diagonal().array() += kCovJitterRel / h.precision;
            cov.block(static_cast<Eigen::Index>(j) * n_x, static_cast<Eigen::Index>(j) * n_x,
                      n_x, n_x) += block;
        }
        llt.compute(cov);
        if (llt.info() != Eigen::Success) {
            cov.diagonal().array() += kCovJitterRel * cov.diagonal().maxCoeff();
            llt.compute(cov);
            if (llt.info() != Eigen::Success)
                throw numeric_error("predict: observed covariance not positive definite");
        }
        const Eigen::VectorXd w = llt.solve(gh);

        for (int t = 0; t < T; ++t) {
            cross.setZero();
            Eigen::VectorXd prior_var(r_x);
            for (int j = 0; j < r_x; ++j) {
                const auto& h = hs[static_cast<std::size_t>(j)];
                Eigen::VectorXd k(n_x);
                for (int i = 0; i < n_x; ++i) {
                    double s = 0.0;
                    for (int dd = 0; dd < p; ++dd)
                        s += std::abs(em.design.pts(i, dd) - x_stars(t, dd)) / h.length_scales(dd);
                    k(i) = std::exp(-s) / h.precision;
                }
                cross.block(static_cast<Eigen::Index>(j) * n_x, j, n_x, 1) = k;
                prior_var(j) = 1.0 / h.precision;
            }
            const Eigen::VectorXd m = cross.transpose() * w;
            const Eigen::MatrixXd V = llt.matrixL().solve(cross);
            Eigen::MatrixXd S = prior_var.asDiagonal().toDenseMatrix() - V.transpose() * V;
            S = 0.5 * (S + S.transpose()).eval();
            Rng rng(sub_seed(mix_seed(opts.seed ^ 0x5fa11ULL),
                             static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(D) +
                                 static_cast<std::uint64_t>(d)));
            lat[static_cast<std::size_t>(t)].record(d, m, S, 1.0 / lambda, rng);
        }
    }

    std::vector<PredictionResult> out(static_cast<std::size_t>(T));
    parallel_for(static_cast<std::size_t>(T), [&](std::size_t t) {
        out[t] = detail::assemble_field(
            x_stars.row(static_cast<Eigen::Index>(t)).transpose(), fdims, F, lat[t],
            em.transform, opts,
            sub_seed(mix_seed(opts.seed ^ 0x015eULL), t));
    });
    return out;
}

inline PredictionResult predict_sf(const SFEmulator& em, const Eigen::VectorXd& x_star,
                                   const PredictOptions& opts = {},
                                   const Eigen::MatrixXd* spatial_override = nullptr) {
    Eigen::MatrixXd X(1, x_star.size());
    X.row(0) = x_star.transpose();
    return predict_sf_batch(em, X, opts, spatial_override)[0];
}

// --- persistence: directory with tucker artifacts, design, posterior ---

inline void save_posterior_csv(const PosteriorSamples& s, const std::filesystem::path& path) {
    std::vector<std::string> header{"chain", "iteration"};
    header.insert(header.end(), s.param_names.begin(), s.param_names.end());
    std::vector<std::vector<double>> rows;
    for (int c = 0; c < s.n_chains(); ++c)
        for (int i = 0; i < s.n_retained(); ++i) {
            std::vector<double> row{static_cast<double>(c), static_cast<double>(i)};
            for (int j = 0; j < s.n_params(); ++j)
                row.push_back(std::exp(s.chains[static_cast<std::size_t>(c)](i, j)));
            rows.push_back(std::move(row));
        }
    write_csv(path, header, rows);
}

inline PosteriorSamples load_posterior_csv(const std::filesystem::path& path) {
    CsvTable t = read_csv(path);
    if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "iteration")
        throw format_error("posterior csv: unexpected header in " + path.string());
    PosteriorSamples s;
    s.param_names.assign(t.header.begin() + 2, t.header.end());
    const int P = static_cast<int>(s.param_names.size());
    int n_chains = 0;
    for (Eigen::Index i = 0; i < t.values.rows(); ++i)
        n_chains = std::max(n_chains, static_cast<int>(t.values(i, 0)) + 1);
    if (n_chains == 0) throw format_error("posterior csv: no draws in " + path.string());
    const int per = static_cast<int>(t.values.rows()) / n_chains;
    s.chains.assign(static_cast<std::size_t>(n_chains), Eigen::MatrixXd(per, P));
    for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
        const int c = static_cast<int>(t.values(i, 0));
        const int it = static_cast<int>(t.values(i, 1));
        for (int j = 0; j < P; ++j)
            s.chains[static_cast<std::size_t>(c)](it, j) = std::log(t.values(i, j + 2));
    }
    return s;
}

inline void save_sf(const SFEmulator& em, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_tucker(em.tucker, dir / "tucker");
    write_design_csv(dir / "design.csv", em.design.pts);
    save_posterior_csv(em.samples, dir / "posterior.csv");
    nlohmann::json j;
    j["type"] = "sf";
    j["a_eta"] = em.a_eta;
    j["b_eta"] = em.b_eta;
    j["a_eta_prime"] = em.a_eta_prime;
    j["b_eta_prime"] = em.b_eta_prime;
    j["data_sq_norm"] = em.data_sq_norm;
    if (em.transform) {
        j["transform"] = {{"eps", em.transform->epsilon},
                          {"lo", em.transform->lo},
                          {"hi", em.transform->hi}};
    } else {
        j["transform"] = nullptr;
    }
    nlohmann::json diag;
    if (em.samples.rhat.size() > 0) {
        for (int k = 0; k < em.samples.n_params(); ++k)
            diag["rhat"][em.samples.param_names[static_cast<std::size_t>(k)]] =
                em.samples.rhat(k);
    }
    for (int c = 0; c < em.samples.n_chains(); ++c)
        diag["mean_acceptance"].push_back(em.samples.acceptance.row(c).mean());
    j["diagnostics"] = diag;
    std::ofstream f(dir / "manifest.json");
    f << j.dump(2) << "\n";
    if (!f) throw format_error("sf: cannot write manifest in " + dir.string());
}

inline SFEmulator load_sf(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw format_error("sf: missing manifest in " + dir.string());
    nlohmann::json j;
    f >> j;
    if (j.at("type") != "sf") throw format_error("sf: manifest type mismatch in " + dir.string());
    SFEmulator em;
    em.tucker = load_tucker(dir / "tucker");
    em.design = DesignMatrix{read_design_csv(dir / "design.csv")};
    em.samples = load_posterior_csv(dir / "posterior.csv");
    em.a_eta = j.at("a_eta").get<double>();
    em.b_eta = j.at("b_eta").get<double>();
    em.a_eta_prime = j.at("a_eta_prime").get<double>();
    em.b_eta_prime = j.at("b_eta_prime").get<double>();
    em.data_sq_norm = j.at("data_sq_norm").get<double>();
    if (!j.at("transform").is_null()) {
        TransformSpec ts;
        ts.epsilon = j["transform"].at("eps").get<double>();
        ts.lo = j["transform"].at("lo").get<double>();
        ts.hi = j["transform"].at("hi").get<double>();
        em.transform = ts;
    }
    em.gamma_hat = em.tucker.factors[3];
    em.core_unfold4 = unfold(em.tucker.core, 3);
    em.gram_core = em.core_unfold4 * em.core_unfold4.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(em.gram_core);
    if (llt.info() != Eigen::Success) throw numeric_error("sf: singular core gram on load");
    em.noise_gram_inv = kron_with_identity(
        llt.solve(Eigen::MatrixXd::Identity(em.r_x(), em.r_x())), em.design.n());
    return em;
}

} // namespace mft
