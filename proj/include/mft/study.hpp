#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mft/baseline.hpp"
#include "mft/eval.hpp"
#include "mft/mf_emulator.hpp"
#include "mft/sf_emulator.hpp"
#include "mft/synth.hpp"

namespace mft {

// Four-emulator comparison on synthetic data: coarse-only (interpolated to
// the fine grid), fine-only, multi-fidelity, and the per-location GP
// baseline, all scored against fine-simulator truth at random test inputs.
struct StudyConfig {
    SynthConfig synth;
    RankSpec ranks;      // defaults to the paper-scale explicit ranks below
    RankSpec ranks_disc;
    MCMCConfig mcmc;
    int k_interp = 3;
    int n_test = 100;
    int n_draws = 500;
    std::uint64_t seed = 0;
    std::vector<std::string> emulators{"lf", "hf", "mf", "naive"};
    NaiveFitOptions naive;

    StudyConfig() {
        ranks.explicit_ranks = std::vector<std::size_t>{4, 3, 2, 4};
        ranks_disc.explicit_ranks = std::vector<std::size_t>{3, 3, 1, 4};
    }
};

struct StudyResult {
    std::vector<MetricsReport> reports;
    std::map<std::string, double> rhat_max; // per emulator (tensor emulators only)
    PosteriorSamples mf_samples;            // joint fit, for length-scale reporting
    SynthData data;
    Eigen::MatrixXd test_inputs;
    // per-test-point overall means for paired comparisons
    std::map<std::string, Eigen::VectorXd> mse_per_point;
};

inline StudyResult run_study(const StudyConfig& cfg) {
    StudyResult out;
    out.data = generate_synth(cfg.synth);
    const SynthData& d = out.data;

    // uniform random test inputs and fine-simulator truth
    Rng rng(sub_seed(cfg.seed, 99));
    out.test_inputs.resize(cfg.n_test, cfg.synth.p);
    for (Eigen::Index i = 0; i < out.test_inputs.size(); ++i) out.test_inputs(i) = rng.uniform();
    std::vector<DenseTensor> truth;
    truth.reserve(static_cast<std::size_t>(cfg.n_test));
    for (int t = 0; t < cfg.n_test; ++t)
        truth.push_back(simulate_hf(out.test_inputs.row(t).transpose(), cfg.synth));

    const std::vector<std::size_t> fdims{d.z_hf.dim(0), d.z_hf.dim(1), d.z_hf.dim(2)};
    PredictOptions popts;
    popts.n_draws = cfg.n_draws;
    popts.seed = sub_seed(cfg.seed, 7);

    auto score = [&](const std::string& label, const std::vector<PredictionResult>& preds) {
        detail::MetricsAccumulator acc(fdims);
        Eigen::VectorXd per_point(cfg.n_test);
        for (int t = 0; t < cfg.n_test; ++t) {
            acc.add(preds[static_cast<std::size_t>(t)], truth[static_cast<std::size_t>(t)]);
            per_point(t) = mse(preds[static_cast<std::size_t>(t)].mean,
                               truth[static_cast<std::size_t>(t)]);
        }
        MetricsReport r = acc.finalize(label);
        r.seed = cfg.seed;
        out.mse_per_point[label] = per_point;
        out.reports.push_back(std::move(r));
    };

    std::optional<SFEmulator> lf_em;
    if (detail::wants(cfg.emulators, "lf") || detail::wants(cfg.emulators, "mf")) {
        MCMCConfig mc = cfg.mcmc;
        mc.seed = sub_seed(cfg.seed, 1);
        lf_em = fit_sf(d.z_lf, d.X_lf, cfg.ranks, mc);
        if (lf_em->samples.rhat.size() > 0)
            out.rhat_max["lf"] = lf_em->samples.rhat.maxCoeff();
    }
    if (detail::wants(cfg.emulators, "lf")) {
        const Eigen::MatrixXd interp =
            interpolate_bases(lf_em->tucker.factors[0], d.mesh_lf, d.mesh_hf, cfg.k_interp);
        score("lf", predict_sf_batch(*lf_em, out.test_inputs, popts, &interp));
    }
    if (detail::wants(cfg.emulators, "hf")) {
        MCMCConfig mc = cfg.mcmc;
        mc.seed = sub_seed(cfg.seed, 2);
        // fine-rank caps: the fine design is small
        RankSpec ranks_hf = cfg.ranks;
        if (ranks_hf.explicit_ranks) {
            auto& r = *ranks_hf.explicit_ranks;
            r[3] = std::min<std::size_t>(r[3], static_cast<std::size_t>(d.X_hf.n()));
        }
        SFEmulator hf_em = fit_sf(d.z_hf, d.X_hf, ranks_hf, mc);
        if (hf_em.samples.rhat.size() > 0) out.rhat_max["hf"] = hf_em.samples.rhat.maxCoeff();
        score("hf", predict_sf_batch(hf_em, out.test_inputs, popts));
    }
    if (detail::wants(cfg.emulators, "mf")) {
        MCMCConfig mc = cfg.mcmc;
        mc.seed = sub_seed(cfg.seed, 3);
        MFFitOptions mf_opts;
        mf_opts.k_interp = cfg.k_interp;
        MFEmulator mf_em = fit_mf(d.z_lf, d.z_hf, d.X_lf, d.X_hf, d.mesh_lf, d.mesh_hf,
                                  cfg.ranks, cfg.ranks_disc, mc, mf_opts, &*lf_em);
        if (mf_em.samples.rhat.size() > 0) out.rhat_max["mf"] = mf_em.samples.rhat.maxCoeff();
        out.mf_samples = mf_em.samples;
        score("mf", predict_mf_batch(mf_em, out.test_inputs, popts));
    }
    if (detail::wants(cfg.emulators, "naive")) {
        NaiveFitOptions nopts = cfg.naive;
        nopts.seed = sub_seed(cfg.seed, 4);
        NaiveGPModel naive = fit_naive(d.z_hf, d.X_hf, nopts);
        std::vector<PredictionResult> preds(static_cast<std::size_t>(cfg.n_test));
        parallel_for(static_cast<std::size_t>(cfg.n_test), [&](std::size_t t) {
            preds[t] = predict_naive(naive, out.test_inputs.row(static_cast<Eigen::Index>(t))
                                                .transpose());
        });
        score("naive", preds);
    }
    return out;
}

} // namespace mft
