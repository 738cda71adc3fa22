#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "mft/errors.hpp"

namespace mft {

// Anisotropic exponential kernel: k(x, x') = exp(-sum_d |x_d - x'_d| / l_d) / precision.
struct GPHyperparams {
    double precision = 1.0;
    Eigen::VectorXd length_scales;

    void validate() const {
        if (!(precision > 0.0)) throw domain_error("gp: precision must be > 0");
        for (Eigen::Index d = 0; d < length_scales.size(); ++d)
            if (!(length_scales(d) > 0.0))
                throw domain_error("gp: length scales must be > 0");
    }
};

// Design points on the unit hypercube, one row per point.
struct DesignMatrix {
    Eigen::MatrixXd pts;

    DesignMatrix() = default;
    explicit DesignMatrix(Eigen::MatrixXd m) : pts(std::move(m)) {
        if (!pts.allFinite()) throw numeric_error("design: non-finite entries");
    }

    Eigen::Index n() const { return pts.rows(); }
    Eigen::Index p() const { return pts.cols(); }
    Eigen::RowVectorXd row(Eigen::Index i) const { return pts.row(i); }
};

inline double kernel(const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& y,
                     const GPHyperparams& h) {
    if (x.size() != y.size() || x.size() != h.length_scales.size())
        throw dimension_error("kernel: input length mismatch");
    double s = 0.0;
    for (Eigen::Index d = 0; d < x.size(); ++d)
        s += std::abs(x(d) - y(d)) / h.length_scales(d);
    return std::exp(-s) / h.precision;
}

constexpr double kCovJitterRel = 1e-8;

// Cross-covariance over all pairs; no jitter.
inline Eigen::MatrixXd cov_matrix(const DesignMatrix& A, const DesignMatrix& B,
                                  const GPHyperparams& h) {
    if (A.p() != B.p()) throw dimension_error("cov_matrix: input dimensionality mismatch");
    h.validate();
    Eigen::MatrixXd K(A.n(), B.n());
    for (Eigen::Index j = 0; j < B.n(); ++j)
        for (Eigen::Index i = 0; i < A.n(); ++i)
            K(i, j) = kernel(A.pts.row(i), B.pts.row(j), h);
    return K;
}

// Self-covariance with jitter kCovJitterRel / precision on the diagonal.
inline Eigen::MatrixXd cov_matrix(const DesignMatrix& A, const GPHyperparams& h) {
    Eigen::MatrixXd K = cov_matrix(A, A, h);
    K.diagonal().array() += kCovJitterRel / h.precision;
    return K;
}

inline Eigen::MatrixXd block_diag(const std::vector<Eigen::MatrixXd>& blocks) {
    Eigen::Index n = 0;
    for (const auto& b : blocks) {
        if (b.rows() != b.cols()) throw dimension_error("block_diag: blocks must be square");
        n += b.rows();
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.block(at, at, b.rows(), b.rows()) = b;
        at += b.rows();
    }
    return out;
}

namespace detail {

// LLT with one x10 jitter escalation. Base jitter is relative to the largest
// diagonal entry.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt;
    const double base = kCovJitterRel * std::max(cov.diagonal().maxCoeff(), 1e-300);
    for (double j : {base, 10.0 * base}) {
        Eigen::MatrixXd c = cov;
        c.diagonal().array() += j;
        llt.compute(c);
        if (llt.info() == Eigen::Success) return llt;
    }
    throw numeric_error("mvn: covariance not positive definite after jitter escalation");
}

} // namespace detail

inline double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                         const Eigen::MatrixXd& cov) {
    if (y.size() != mean.size() || cov.rows() != y.size() || cov.cols() != y.size())
        throw dimension_error("mvn_logpdf: shape mismatch");
    const auto llt = detail::robust_llt(cov);
    const Eigen::VectorXd r = y - mean;
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        logdet += std::log(llt.matrixL()(i, i));
    constexpr double log2pi = 1.8378770664093454835606594728112;
    return -0.5 * (static_cast<double>(y.size()) * log2pi + w.squaredNorm()) - logdet;
}

// Per-dimension |x_id - x_jd| matrices, precomputed once so repeated
// covariance evaluations (MCMC, prediction draws) reduce to a fused
// exp over weighted sums.
inline std::vector<Eigen::MatrixXd> abs_dist_matrices(const Eigen::MatrixXd& A,
                                                      const Eigen::MatrixXd& B) {
    if (A.cols() != B.cols()) throw dimension_error("abs_dist_matrices: dimensionality mismatch");
    std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(A.cols()));
    for (Eigen::Index d = 0; d < A.cols(); ++d) {
        out[static_cast<std::size_t>(d)] =
            (A.col(d).replicate(1, B.rows()) - B.col(d).transpose().replicate(A.rows(), 1))
                .cwiseAbs();
    }
    return out;
}

inline Eigen::MatrixXd cov_from_dists(const std::vector<Eigen::MatrixXd>& dists,
                                      const GPHyperparams& h) {
    if (dists.empty() || static_cast<Eigen::Index>(dists.size()) != h.length_scales.size())
        throw dimension_error("cov_from_dists: dimensionality mismatch");
    Eigen::MatrixXd s = dists[0] / h.length_scales(0);
    for (std::size_t d = 1; d < dists.size(); ++d) s += dists[d] / h.length_scales(d);
    return (-s.array()).exp().matrix() / h.precision;
}

// Conditions the second block on the first under a zero-mean joint normal.
// joint = [[S_oo, S_op], [S_po, S_pp]], observed has the length of the first
// block. The conditional covariance is symmetrized and projected to PSD;
// eigenvalues below -1e-10 are treated as a numerical failure.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> mvn_condition(const Eigen::MatrixXd& joint,
                                                                 const Eigen::VectorXd& observed) {
    const Eigen::Index no = observed.size();
    const Eigen::Index np = joint.rows() - no;
    if (joint.rows() != joint.cols() || np < 0)
        throw dimension_error("mvn_condition: partition size mismatch");
    const Eigen::MatrixXd S_oo = joint.topLeftCorner(no, no);
    const Eigen::MatrixXd S_op = joint.topRightCorner(no, np);
    const Eigen::MatrixXd S_pp = joint.bottomRightCorner(np, np);
    const auto llt = detail::robust_llt(S_oo);
    const Eigen::VectorXd mean = S_op.transpose() * llt.solve(observed);
    Eigen::MatrixXd cov = S_pp - S_op.transpose() * llt.solve(S_op);
    cov = 0.5 * (cov + cov.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw numeric_error("mvn_condition: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    bool fix = false;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-10) throw numeric_error("mvn_condition: conditional covariance indefinite");
        if (ev(i) < 0.0) {
            ev(i) = 0.0;
            fix = true;
        }
    }
    if (fix)
        cov = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return {mean, cov};
}

} // namespace mft
