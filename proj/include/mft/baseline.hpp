#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mft/errors.hpp"
#include "mft/gp.hpp"
#include "mft/parallel.hpp"
#include "mft/prediction.hpp"
#include "mft/rng.hpp"
#include "mft/tensor.hpp"

namespace mft {

namespace detail {

// Compact Nelder-Mead for the small per-coordinate marginal-likelihood
// problems. Works on a box-clamped domain; deterministic given the start.
inline Eigen::VectorXd nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                   Eigen::VectorXd x0, double lo, double hi, int max_evals,
                                   double* best_out = nullptr) {
    const int n = static_cast<int>(x0.size());
    auto clampv = [&](Eigen::VectorXd v) {
        return v.cwiseMax(lo).cwiseMin(hi).eval();
    };
    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1));
    Eigen::VectorXd fv(n + 1);
    int evals = 0;
    auto eval = [&](const Eigen::VectorXd& v) {
        ++evals;
        return f(v);
    };
    pts[0] = clampv(x0);
    fv(0) = eval(pts[0]);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd v = pts[0];
        v(i) += 0.5;
        pts[static_cast<std::size_t>(i + 1)] = clampv(v);
        fv(i + 1) = eval(pts[static_cast<std::size_t>(i + 1)]);
    }
    auto order = [&] {
        std::vector<int> idx(static_cast<std::size_t>(n + 1));
        for (int i = 0; i <= n; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv(a) < fv(b); });
        std::vector<Eigen::VectorXd> p2(pts.size());
        Eigen::VectorXd f2(n + 1);
        for (int i = 0; i <= n; ++i) {
            p2[static_cast<std::size_t>(i)] = pts[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
            f2(i) = fv(idx[static_cast<std::size_t>(i)]);
        }
        pts.swap(p2);
        fv = f2;
    };
    order();
    while (evals < max_evals) {
        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
        centroid /= static_cast<double>(n);
        const Eigen::VectorXd xr = clampv(centroid + (centroid - pts[static_cast<std::size_t>(n)]));
        const double fr = eval(xr);
        if (fr < fv(0)) {
            const Eigen::VectorXd xe =
                clampv(centroid + 2.0 * (centroid - pts[static_cast<std::size_t>(n)]));
            const double fe = eval(xe);
            if (fe < fr) {
                pts[static_cast<std::size_t>(n)] = xe;
                fv(n) = fe;
            } else {
                pts[static_cast<std::size_t>(n)] = xr;
                fv(n) = fr;
            }
        } else if (fr < fv(n - 1)) {
            pts[static_cast<std::size_t>(n)] = xr;
            fv(n) = fr;
        } else {
            const Eigen::VectorXd xc =
                clampv(centroid + 0.5 * (pts[static_cast<std::size_t>(n)] - centroid));
            const double fc = eval(xc);
            if (fc < fv(n)) {
                pts[static_cast<std::size_t>(n)] = xc;
                fv(n) = fc;
            } else {
                for (int i = 1; i <= n; ++i) {
                    pts[static_cast<std::size_t>(i)] =
                        clampv(pts[0] + 0.5 * (pts[static_cast<std::size_t>(i)] - pts[0]));
                    fv(i) = eval(pts[static_cast<std::size_t>(i)]);
                }
            }
        }
        order();
        if (std::abs(fv(n) - fv(0)) < 1e-9 * (1.0 + std::abs(fv(0)))) break;
    }
    if (best_out) *best_out = fv(0);
    return pts[0];
}

} // namespace detail

// Independent zero-mean GP per spatiotemporal coordinate of the fine grid:
// the comparator that ignores all spatiotemporal structure.
struct NaiveGPModel {
    DesignMatrix design;
    std::vector<std::size_t> field_dims; // n_s, n_m, n_y
    // per coordinate: precision, p length scales, nugget variance
    Eigen::MatrixXd params;              // n_coords x (p + 2)
    std::vector<unsigned char> degenerate; // constant-response flags
    Eigen::VectorXd constants;           // prediction for degenerate coordinates
    Eigen::MatrixXd responses;           // n_coords x n_x training responses
    std::vector<std::string> warnings;

    bool fitted() const { return params.rows() > 0; }
    std::size_t n_coords() const { return degenerate.size(); }
};

struct NaiveFitOptions {
    int multistarts = 5;
    int max_evals_per_start = 120;
    double log_bound = std::log(1e3); // parameter box [1e-3, 1e3] in log space
    std::uint64_t seed = 0;
};

// Per-coordinate marginal-likelihood fit with multi-start Nelder-Mead over
// log(precision, length scales, nugget). Constant-response coordinates are
// flagged degenerate and predicted as that constant with zero variance.
inline NaiveGPModel fit_naive(const DenseTensor& z_hf, const DesignMatrix& X_hf,
                              const NaiveFitOptions& opts = {}) {
    if (z_hf.order() != 4) throw dimension_error("fit_naive: expected 4-mode data");
    const int n = static_cast<int>(X_hf.n());
    if (z_hf.dim(3) != static_cast<std::size_t>(n))
        throw dimension_error("fit_naive: design-mode size must match design rows");
    if (n < 2) throw domain_error("fit_naive: need at least 2 design points");
    const int p = static_cast<int>(X_hf.p());
    const std::size_t n_coords = z_hf.size() / static_cast<std::size_t>(n);

    NaiveGPModel model;
    model.design = X_hf;
    model.field_dims = {z_hf.dim(0), z_hf.dim(1), z_hf.dim(2)};
    model.params = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_coords), p + 2);
    model.degenerate.assign(n_coords, 0);
    model.constants = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_coords));
    model.responses.resize(static_cast<Eigen::Index>(n_coords), n);
    for (std::size_t e = 0; e < n_coords; ++e)
        for (int i = 0; i < n; ++i)
            model.responses(static_cast<Eigen::Index>(e), i) =
                z_hf[e + n_coords * static_cast<std::size_t>(i)];

    const std::vector<Eigen::MatrixXd> dists = abs_dist_matrices(X_hf.pts, X_hf.pts);
    std::vector<std::string> warn_slots(n_coords);

    parallel_for(n_coords, [&](std::size_t e) {
        const Eigen::VectorXd y = model.responses.row(static_cast<Eigen::Index>(e));
        const double spread = y.maxCoeff() - y.minCoeff();
        const double scale = std::max(1.0, y.cwiseAbs().maxCoeff());
        if (spread <= 1e-12 * scale) {
            model.degenerate[e] = 1;
            model.constants(static_cast<Eigen::Index>(e)) = y(0);
            return;
        }
        // negative log marginal likelihood over log-params
        auto nll = [&](const Eigen::VectorXd& q) {
            GPHyperparams h;
            h.precision = std::exp(q(0));
            h.length_scales = q.segment(1, p).array().exp();
            Eigen::MatrixXd K = cov_from_dists(dists, h);
            K.diagonal().array() += std::exp(q(p + 1)) + kCovJitterRel / h.precision;
            Eigen::LLT<Eigen::MatrixXd> llt(K);
            if (llt.info() != Eigen::Success) return 1e30;
            double logdet = 0.0;
            for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
            return 0.5 * llt.matrixL().solve(y).squaredNorm() + logdet;
        };
        const double bound = opts.log_bound;
        double best_val = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best = Eigen::VectorXd::Zero(p + 2);
        Rng rng(sub_seed(opts.seed, e));
        bool ok = false;
        for (int s = 0; s < opts.multistarts; ++s) {
            Eigen::VectorXd q0(p + 2);
            if (s == 0) {
                q0.setZero();
                q0(p + 1) = std::log(1e-4);
            } else {
                for (int i = 0; i < p + 2; ++i) q0(i) = (2.0 * rng.uniform() - 1.0) * 0.8 * bound;
            }
            double val = 0.0;
            Eigen::VectorXd q =
                detail::nelder_mead(nll, q0, -bound, bound, opts.max_evals_per_start, &val);
            if (val < best_val && val < 1e29) {
                best_val = val;
                best = q;
                ok = true;
            }
        }
        if (!ok) {
            // optimizer never found a usable point: fall back to prior scale
            warn_slots[e] = "coordinate " + std::to_string(e) + ": optimizer failed, prior-scale fallback";
            best.setZero();
            best(p + 1) = std::log(1e-2);
        }
        model.params.row(static_cast<Eigen::Index>(e)) = best.array().exp();
    });
    for (auto& w : warn_slots)
        if (!w.empty()) model.warnings.push_back(std::move(w));
    return model;
}

// Standard GP conditional per coordinate; intervals are Gaussian quantiles.
inline PredictionResult predict_naive(const NaiveGPModel& model, const Eigen::VectorXd& x_star) {
    if (!model.fitted()) throw state_error("predict_naive: model not fitted");
    const int n = static_cast<int>(model.design.n());
    const int p = static_cast<int>(model.design.p());
    if (x_star.size() != p) throw dimension_error("predict_naive: input dimensionality mismatch");
    const std::size_t n_coords = model.n_coords();

    const std::vector<Eigen::MatrixXd> dists = abs_dist_matrices(model.design.pts, model.design.pts);
    Eigen::VectorXd cross_dist = Eigen::VectorXd::Zero(n);

    std::vector<double> mean_v(n_coords), sd_v(n_coords), lo_v(n_coords), hi_v(n_coords);
    constexpr double z975 = 1.959963984540054;

    parallel_for(n_coords, [&](std::size_t e) {
        if (model.degenerate[e]) {
            const double c = model.constants(static_cast<Eigen::Index>(e));
            mean_v[e] = c;
            sd_v[e] = 0.0;
            lo_v[e] = c;
            hi_v[e] = c;
            return;
        }
        GPHyperparams h;
        h.precision = model.params(static_cast<Eigen::Index>(e), 0);
        h.length_scales = model.params.row(static_cast<Eigen::Index>(e)).segment(1, p);
        const double nugget = model.params(static_cast<Eigen::Index>(e), p + 1);
        Eigen::MatrixXd K = cov_from_dists(dists, h);
        K.diagonal().array() += nugget + kCovJitterRel / h.precision;
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) {
            K.diagonal().array() += 10.0 * kCovJitterRel / h.precision;
            llt.compute(K);
            if (llt.info() != Eigen::Success)
                throw numeric_error("predict_naive: covariance not positive definite");
        }
        Eigen::VectorXd k(n);
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int dd = 0; dd < p; ++dd)
                s += std::abs(model.design.pts(i, dd) - x_star(dd)) / h.length_scales(dd);
            k(i) = std::exp(-s) / h.precision;
        }
        const Eigen::VectorXd y = model.responses.row(static_cast<Eigen::Index>(e));
        const double m = k.dot(llt.solve(y));
        const double var = std::max(0.0, 1.0 / h.precision + nugget -
                                             llt.matrixL().solve(k).squaredNorm());
        const double sd = std::sqrt(var);
        mean_v[e] = m;
        sd_v[e] = sd;
        lo_v[e] = m - z975 * sd;
        hi_v[e] = m + z975 * sd;
    });

    PredictionResult out;
    out.x_star = x_star;
    out.mean = DenseTensor(model.field_dims, std::move(mean_v));
    out.sd = DenseTensor(model.field_dims, std::move(sd_v));
    out.lo = DenseTensor(model.field_dims, std::move(lo_v));
    out.hi = DenseTensor(model.field_dims, std::move(hi_v));
    return out;
}

} // namespace mft
