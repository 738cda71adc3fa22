#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mft/errors.hpp"
#include "mft/tensor.hpp"

namespace mft {

// Truncated Tucker model: small core plus one orthonormal factor per mode.
struct TuckerModel {
    DenseTensor core;                    // dims = ranks
    std::vector<Eigen::MatrixXd> factors; // factor k: dims[k] x ranks[k]
    int hooi_iterations = 0;
    double rel_error = 0.0;              // relative Frobenius reconstruction error
    std::vector<double> error_history;   // per-sweep relative errors (HOSVD first)

    std::size_t order() const { return factors.size(); }
    std::size_t rank(std::size_t k) const { return core.dim(k); }
    std::size_t dim(std::size_t k) const {
        return static_cast<std::size_t>(factors.at(k).rows());
    }
};

namespace detail {

// Leading r left singular vectors of X via the Gram matrix of the smaller
// side. Columns come back in descending singular-value order; when X is
// rank-deficient the basis is completed deterministically with orthonormal
// fill-in so the factor is always well formed.
inline Eigen::MatrixXd leading_singular_vectors(const Eigen::MatrixXd& X, std::size_t r) {
    const Eigen::Index rows = X.rows(), cols = X.cols();
    if (static_cast<Eigen::Index>(r) > rows)
        throw dimension_error("tucker: rank exceeds mode dimension");
    Eigen::MatrixXd U(rows, static_cast<Eigen::Index>(r));
    if (rows <= cols) {
        Eigen::MatrixXd G = X * X.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
        if (es.info() != Eigen::Success) throw numeric_error("tucker: eigendecomposition failed");
        // eigenvalues ascending -> take the trailing r columns, reversed
        for (std::size_t j = 0; j < r; ++j)
            U.col(static_cast<Eigen::Index>(j)) =
                es.eigenvectors().col(rows - 1 - static_cast<Eigen::Index>(j));
        return U;
    }
    Eigen::MatrixXd G = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw numeric_error("tucker: eigendecomposition failed");
    const double scale = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    std::size_t filled = 0;
    for (std::size_t j = 0; j < r; ++j) {
        const Eigen::Index src = cols - 1 - static_cast<Eigen::Index>(j);
        const double ev = es.eigenvalues()(src);
        if (ev > 1e-28 * scale) {
            U.col(static_cast<Eigen::Index>(j)) = X * es.eigenvectors().col(src) / std::sqrt(ev);
            ++filled;
        } else {
            break;
        }
    }
    if (filled < r) {
        // complete with coordinate vectors orthogonalized against what we have
        std::size_t cand = 0;
        for (std::size_t j = filled; j < r; ++j) {
            Eigen::VectorXd v;
            for (;; ++cand) {
                if (cand >= static_cast<std::size_t>(rows))
                    throw numeric_error("tucker: could not complete orthonormal basis");
                v = Eigen::VectorXd::Unit(rows, static_cast<Eigen::Index>(cand));
                for (std::size_t c = 0; c < j; ++c) {
                    const auto col = U.col(static_cast<Eigen::Index>(c));
                    v -= col.dot(v) * col;
                }
                const double nrm = v.norm();
                if (nrm > 1e-6) {
                    v /= nrm;
                    break;
                }
            }
            U.col(static_cast<Eigen::Index>(j)) = v;
            ++cand;
        }
    }
    return U;
}

// Per-mode eigenvalues of the unfolding Gram matrix, descending. These are
// the squared singular values of the mode-k unfolding.
inline Eigen::VectorXd mode_spectrum(const DenseTensor& t, std::size_t k) {
    Eigen::MatrixXd X = unfold(t, k);
    const Eigen::Index rows = X.rows(), cols = X.cols();
    Eigen::MatrixXd G = rows <= cols ? Eigen::MatrixXd(X * X.transpose())
                                     : Eigen::MatrixXd(X.transpose() * X);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
    if (es.info() != Eigen::Success) throw numeric_error("tucker: eigendecomposition failed");
    return es.eigenvalues().reverse();
}

} // namespace detail

// Smallest per-mode ranks whose leading eigenvalue mass reaches
// variance_target of the total; ties resolve to the smaller rank.
inline std::vector<std::size_t> select_ranks(const DenseTensor& t, double variance_target) {
    if (variance_target <= 0.0 || variance_target > 1.0)
        throw domain_error("select_ranks: variance_target must lie in (0,1]");
    if (t.sq_norm() == 0.0) throw degenerate_error("select_ranks: zero tensor");
    std::vector<std::size_t> ranks(t.order());
    for (std::size_t k = 0; k < t.order(); ++k) {
        const Eigen::VectorXd ev = detail::mode_spectrum(t, k);
        const double total = std::max(ev.sum(), 0.0);
        const double goal = variance_target * total - 1e-12 * total;
        double cum = 0.0;
        std::size_t r = static_cast<std::size_t>(ev.size());
        for (Eigen::Index j = 0; j < ev.size(); ++j) {
            cum += std::max(ev(j), 0.0);
            if (cum >= goal) {
                r = static_cast<std::size_t>(j + 1);
                break;
            }
        }
        ranks[k] = r;
    }
    return ranks;
}

// Core implied by orthonormal factors: t x_0 U_0^T x_1 ... x_{d-1} U_{d-1}^T.
inline DenseTensor project_core(const DenseTensor& t, const std::vector<Eigen::MatrixXd>& factors) {
    DenseTensor y = t;
    for (std::size_t k = 0; k < factors.size(); ++k)
        y = mode_product(y, factors[k].transpose(), k);
    return y;
}

// Higher-order orthogonal iteration with truncated-HOSVD initialization.
// Per sweep each factor is refreshed from the tensor projected through all
// other factors; the reconstruction error is nonincreasing across sweeps.
inline TuckerModel hooi(const DenseTensor& t, const std::vector<std::size_t>& ranks,
                        int max_iter = 50, double tol = 1e-8) {
    const std::size_t d = t.order();
    if (ranks.size() != d) throw dimension_error("hooi: ranks size must equal tensor order");
    for (std::size_t k = 0; k < d; ++k) {
        if (ranks[k] < 1 || ranks[k] > t.dim(k))
            throw dimension_error("hooi: rank out of range for mode " + std::to_string(k));
    }
    if (max_iter < 1) throw domain_error("hooi: max_iter must be >= 1");
    if (!(tol > 0.0)) throw domain_error("hooi: tol must be > 0");
    if (!t.all_finite()) throw numeric_error("hooi: tensor contains non-finite values");

    const double t_norm = t.frobenius_norm();
    TuckerModel model;
    model.factors.resize(d);

    // HOSVD init
    for (std::size_t k = 0; k < d; ++k)
        model.factors[k] = detail::leading_singular_vectors(unfold(t, k), ranks[k]);

    auto rel_err_from_core = [&](const DenseTensor& core) {
        if (t_norm == 0.0) return 0.0;
        const double resid_sq = std::max(0.0, t_norm * t_norm - core.sq_norm());
        return std::sqrt(resid_sq) / t_norm;
    };

    DenseTensor core = project_core(t, model.factors);
    double err = rel_err_from_core(core);
    model.error_history.push_back(err);

    int iters = 0;
    for (; iters < max_iter; ++iters) {
        for (std::size_t k = 0; k < d; ++k) {
            DenseTensor y = t;
            for (std::size_t j = 0; j < d; ++j)
                if (j != k) y = mode_product(y, model.factors[j].transpose(), j);
            model.factors[k] = detail::leading_singular_vectors(unfold(y, k), ranks[k]);
            if (k + 1 == d) core = mode_product(y, model.factors[k].transpose(), k);
        }
        const double new_err = rel_err_from_core(core);
        model.error_history.push_back(new_err);
        const bool converged = std::abs(err - new_err) <= tol * std::max(err, 1e-15);
        err = new_err;
        if (converged) {
            ++iters;
            break;
        }
    }
    model.core = std::move(core);
    model.hooi_iterations = iters;
    model.rel_error = err;
    return model;
}

inline DenseTensor reconstruct(const TuckerModel& m) {
    DenseTensor y = m.core;
    for (std::size_t k = 0; k < m.factors.size(); ++k)
        y = mode_product(y, m.factors[k], k);
    return y;
}

// 1 - |t - reconstruct(m)|_F^2 / |t|_F^2, clamped into [0,1].
inline double explained_variance(const DenseTensor& t, const TuckerModel& m) {
    const double denom = t.sq_norm();
    if (denom == 0.0) throw degenerate_error("explained_variance: zero tensor");
    const DenseTensor diff = subtract(t, reconstruct(m));
    const double v = 1.0 - diff.sq_norm() / denom;
    return std::min(1.0, std::max(0.0, v));
}

// Share of squared core mass carried by column j of the given mode.
inline double basis_contribution(const TuckerModel& m, std::size_t mode, std::size_t j) {
    m.core.check_mode(mode);
    if (j >= m.core.dim(mode)) throw dimension_error("basis_contribution: column out of range");
    const double total = m.core.sq_norm();
    if (total == 0.0) throw degenerate_error("basis_contribution: zero core");
    const std::size_t nk = m.core.dim(mode);
    const std::size_t left = m.core.stride(mode);
    const std::size_t right = m.core.size() / (left * nk);
    double s = 0.0;
    const double* v = m.core.data();
    for (std::size_t ir = 0; ir < right; ++ir) {
        const double* base = v + left * (j + nk * ir);
        for (std::size_t il = 0; il < left; ++il) s += base[il] * base[il];
    }
    return s / total;
}

inline double max_orthonormality_defect(const Eigen::MatrixXd& U) {
    Eigen::MatrixXd G = U.transpose() * U;
    G -= Eigen::MatrixXd::Identity(G.rows(), G.cols());
    return G.cwiseAbs().maxCoeff();
}

// --- on-disk layout: directory of MFT1 files plus a JSON manifest ---

inline void save_tucker(const TuckerModel& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_mft1(m.core, dir / "core.mft");
    std::vector<std::size_t> dims, ranks;
    for (std::size_t k = 0; k < m.order(); ++k) {
        const auto& U = m.factors[k];
        save_mft1(DenseTensor({static_cast<std::size_t>(U.rows()),
                               static_cast<std::size_t>(U.cols())},
                              std::vector<double>(U.data(), U.data() + U.size())),
                  dir / ("factor_" + std::to_string(k) + ".mft"));
        dims.push_back(static_cast<std::size_t>(U.rows()));
        ranks.push_back(static_cast<std::size_t>(U.cols()));
    }
    nlohmann::json j;
    j["ranks"] = ranks;
    j["dims"] = dims;
    j["rel_error"] = m.rel_error;
    j["explained_variance"] = 1.0 - m.rel_error * m.rel_error;
    j["hooi_iterations"] = m.hooi_iterations;
    std::ofstream f(dir / "manifest.json");
    f << j.dump(2) << "\n";
    if (!f) throw format_error("tucker: cannot write manifest in " + dir.string());
}

inline TuckerModel load_tucker(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw format_error("tucker: missing manifest in " + dir.string());
    nlohmann::json j;
    f >> j;
    TuckerModel m;
    m.core = load_mft1(dir / "core.mft");
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    m.rel_error = j.at("rel_error").get<double>();
    m.hooi_iterations = j.at("hooi_iterations").get<int>();
    for (std::size_t k = 0; k < dims.size(); ++k) {
        DenseTensor ft = load_mft1(dir / ("factor_" + std::to_string(k) + ".mft"));
        if (ft.order() != 2) throw format_error("tucker: factor file is not a matrix");
        m.factors.push_back(Eigen::Map<const Eigen::MatrixXd>(
            ft.data(), static_cast<Eigen::Index>(ft.dim(0)),
            static_cast<Eigen::Index>(ft.dim(1))));
    }
    if (m.factors.size() != m.core.order())
        throw format_error("tucker: factor count does not match core order");
    return m;
}

} // namespace mft
