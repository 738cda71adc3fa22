#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mft/errors.hpp"
#include "mft/parallel.hpp"
#include "mft/rng.hpp"

namespace mft {

struct MCMCConfig {
    int n_chains = 3;
    int n_iter = 4000;
    int burn_in = 2000;
    std::uint64_t seed = 0;
    double target_accept = 0.30;
    int adapt_window = 50;
    // implementation knobs
    double init_proposal_scale = 0.5;
    bool adapt = true;

    void validate() const {
        if (n_chains < 1) throw config_error("mcmc: n_chains must be >= 1");
        if (burn_in < 0 || burn_in >= n_iter)
            throw config_error("mcmc: need 0 <= burn_in < n_iter");
        if (!(target_accept > 0.0 && target_accept < 1.0))
            throw config_error("mcmc: target_accept must lie in (0,1)");
        if (adapt_window < 1) throw config_error("mcmc: adapt_window must be >= 1");
        if (init_proposal_scale < 0.0) throw config_error("mcmc: negative proposal scale");
    }
};

// Retained draws are stored in the sampling (log) domain, one matrix per
// chain with one row per retained iteration.
struct PosteriorSamples {
    std::vector<std::string> param_names;
    std::vector<Eigen::MatrixXd> chains;      // retained x P
    Eigen::MatrixXd acceptance;               // n_chains x P, post-burn-in rates
    std::vector<Eigen::VectorXd> final_scales; // per-chain frozen proposal scales
    Eigen::VectorXd rhat;                     // per parameter; empty if < 2 chains

    int n_chains() const { return static_cast<int>(chains.size()); }
    int n_params() const { return chains.empty() ? 0 : static_cast<int>(chains[0].cols()); }
    int n_retained() const { return chains.empty() ? 0 : static_cast<int>(chains[0].rows()); }
    int total_draws() const { return n_chains() * n_retained(); }

    // draw i in chain-major order, log domain
    Eigen::VectorXd draw_log(int i) const {
        const int per = n_retained();
        return chains[static_cast<std::size_t>(i / per)].row(i % per);
    }

    Eigen::VectorXd draw_natural(int i) const { return draw_log(i).array().exp(); }

    Eigen::MatrixXd stacked_log() const {
        Eigen::MatrixXd out(total_draws(), n_params());
        int at = 0;
        for (const auto& c : chains) {
            out.middleRows(at, c.rows()) = c;
            at += static_cast<int>(c.rows());
        }
        return out;
    }

    // posterior mean of the natural-domain parameters
    Eigen::VectorXd natural_mean() const {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(n_params());
        for (const auto& c : chains) m += c.array().exp().colwise().sum().matrix().transpose();
        return m / static_cast<double>(total_draws());
    }

    // evenly thinned chain-major draw indices
    std::vector<int> thinned_indices(int n_draws) const {
        const int total = total_draws();
        const int n = std::min(n_draws, total);
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            idx[static_cast<std::size_t>(i)] =
                static_cast<int>((static_cast<long long>(i) * total) / n);
        return idx;
    }
};

// --- prior densities ---

inline double folded_normal_logpdf(double x) {
    if (!(x > 0.0)) throw domain_error("folded_normal_logpdf: x must be > 0");
    constexpr double log2pi = 1.8378770664093454835606594728112;
    return std::log(2.0) - 0.5 * log2pi - 0.5 * x * x;
}

inline double lognormal_logpdf(double x) {
    if (!(x > 0.0)) throw domain_error("lognormal_logpdf: x must be > 0");
    constexpr double log2pi = 1.8378770664093454835606594728112;
    const double lx = std::log(x);
    return -lx - 0.5 * log2pi - 0.5 * lx * lx;
}

// shape/rate parameterization
inline double gamma_logpdf(double x, double shape, double rate) {
    if (!(x > 0.0)) throw domain_error("gamma_logpdf: x must be > 0");
    if (!(shape > 0.0 && rate > 0.0)) throw domain_error("gamma_logpdf: invalid shape/rate");
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// Joint prior over a named parameter set: folded-normal(0,1) on GP
// precisions, log-normal(0,1) on length scales, Gamma(shape, rate) terms for
// the noise precisions.
struct PriorParamSet {
    std::vector<double> gp_precisions;
    std::vector<double> gp_length_scales;
    std::vector<std::array<double, 3>> gamma_terms; // {value, shape, rate}
};

inline double log_prior(const PriorParamSet& p) {
    double s = 0.0;
    for (double v : p.gp_precisions) s += folded_normal_logpdf(v);
    for (double v : p.gp_length_scales) s += lognormal_logpdf(v);
    for (const auto& g : p.gamma_terms) s += gamma_logpdf(g[0], g[1], g[2]);
    return s;
}

// --- sampler ---

using LogTarget = std::function<double(const Eigen::VectorXd&)>;
// One target instance per chain, so stateful targets (covariance caches) are
// confined to their chain.
using LogTargetFactory = std::function<LogTarget(int chain)>;

inline Eigen::VectorXd split_rhat(const PosteriorSamples& s);

// Componentwise Gaussian random-walk Metropolis on the given (log-domain)
// coordinates. Proposal scales adapt toward target_accept during burn-in via
// a Robbins-Monro update per adaptation window, then stay frozen. Draws are
// deterministic given (seed, cfg); chains use independent sub-seeds.
inline PosteriorSamples run_chains(const LogTargetFactory& make_target,
                                   const Eigen::VectorXd& init, const MCMCConfig& cfg,
                                   std::vector<std::string> param_names = {}) {
    cfg.validate();
    const int P = static_cast<int>(init.size());
    if (P < 1) throw dimension_error("run_chains: empty parameter vector");
    const int retained = cfg.n_iter - cfg.burn_in;

    PosteriorSamples out;
    out.param_names = std::move(param_names);
    if (out.param_names.empty())
        for (int j = 0; j < P; ++j) out.param_names.push_back("p" + std::to_string(j));
    out.chains.assign(static_cast<std::size_t>(cfg.n_chains), Eigen::MatrixXd(retained, P));
    out.acceptance = Eigen::MatrixXd::Zero(cfg.n_chains, P);
    out.final_scales.assign(static_cast<std::size_t>(cfg.n_chains), Eigen::VectorXd());

    parallel_for(static_cast<std::size_t>(cfg.n_chains), [&](std::size_t c) {
        LogTarget target = make_target(static_cast<int>(c));
        Rng rng(sub_seed(cfg.seed, c));
        Eigen::VectorXd q = init;
        double logp = target(q);
        if (!std::isfinite(logp))
            throw numeric_error("run_chains: target not finite at init (chain " +
                                std::to_string(c) + ")");
        Eigen::VectorXd log_scale =
            Eigen::VectorXd::Constant(P, cfg.init_proposal_scale > 0.0
                                             ? std::log(cfg.init_proposal_scale)
                                             : -std::numeric_limits<double>::infinity());
        Eigen::VectorXi window_acc = Eigen::VectorXi::Zero(P);
        Eigen::VectorXi post_acc = Eigen::VectorXi::Zero(P);
        int adapt_rounds = 0;

        Eigen::VectorXd prop = q;
        for (int it = 0; it < cfg.n_iter; ++it) {
            for (int j = 0; j < P; ++j) {
                const double step = rng.normal();
                const double u = rng.uniform();
                const double sc = std::isfinite(log_scale(j)) ? std::exp(log_scale(j)) : 0.0;
                prop = q;
                prop(j) += sc * step;
                const double lp = target(prop);
                if (std::isnan(lp))
                    throw numeric_error("run_chains: target returned NaN at chain " +
                                        std::to_string(c) + ", iteration " + std::to_string(it) +
                                        ", parameter " + out.param_names[static_cast<std::size_t>(j)]);
                if (std::log(u) < lp - logp) {
                    q = prop;
                    logp = lp;
                    ++window_acc(j);
                    if (it >= cfg.burn_in) ++post_acc(j);
                }
            }
            if (cfg.adapt && it < cfg.burn_in && (it + 1) % cfg.adapt_window == 0) {
                ++adapt_rounds;
                const double gain = 1.0 / std::sqrt(static_cast<double>(adapt_rounds));
                for (int j = 0; j < P; ++j) {
                    if (!std::isfinite(log_scale(j))) continue; // zero-scale stays degenerate
                    const double rate =
                        static_cast<double>(window_acc(j)) / static_cast<double>(cfg.adapt_window);
                    log_scale(j) = std::clamp(log_scale(j) + gain * (rate - cfg.target_accept),
                                              -15.0, 15.0);
                }
                window_acc.setZero();
            }
            if (it >= cfg.burn_in) out.chains[c].row(it - cfg.burn_in) = q;
        }
        out.acceptance.row(static_cast<Eigen::Index>(c)) =
            post_acc.cast<double>().transpose() / static_cast<double>(retained);
        out.final_scales[c] = log_scale.array().exp();
    });

    if (cfg.n_chains >= 2 && retained >= 4) out.rhat = split_rhat(out);
    return out;
}

inline PosteriorSamples run_chains(const LogTarget& target, const Eigen::VectorXd& init,
                                   const MCMCConfig& cfg,
                                   std::vector<std::string> param_names = {}) {
    return run_chains([&target](int) { return target; }, init, cfg, std::move(param_names));
}

// Split-R-hat: each chain is halved, then the usual between/within variance
// ratio is computed over the resulting sequences.
inline Eigen::VectorXd split_rhat(const PosteriorSamples& s) {
    if (s.n_chains() < 2) throw diagnostic_error("split_rhat: need at least 2 chains");
    const int half = s.n_retained() / 2;
    if (half < 2) throw diagnostic_error("split_rhat: need at least 4 retained draws per chain");
    const int P = s.n_params();
    const int m = 2 * s.n_chains();

    Eigen::VectorXd out(P);
    for (int j = 0; j < P; ++j) {
        Eigen::VectorXd means(m), vars(m);
        int seq = 0;
        for (const auto& chain : s.chains) {
            for (int h = 0; h < 2; ++h, ++seq) {
                const auto seg = chain.col(j).segment(h * half, half);
                const double mu = seg.mean();
                means(seq) = mu;
                vars(seq) = (seg.array() - mu).square().sum() / static_cast<double>(half - 1);
            }
        }
        const double w = vars.mean();
        const double grand = means.mean();
        const double b =
            static_cast<double>(half) * (means.array() - grand).square().sum() /
            static_cast<double>(m - 1);
        if (w <= 0.0) {
            out(j) = b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
            continue;
        }
        const double var_plus =
            (static_cast<double>(half - 1) * w + b) / static_cast<double>(half);
        out(j) = std::sqrt(var_plus / w);
    }
    return out;
}

} // namespace mft
