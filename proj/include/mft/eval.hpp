#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mft/baseline.hpp"
#include "mft/errors.hpp"
#include "mft/io.hpp"
#include "mft/mf_emulator.hpp"
#include "mft/parallel.hpp"
#include "mft/prediction.hpp"
#include "mft/sf_emulator.hpp"
#include "mft/tensor.hpp"

namespace mft {

// --- pointwise metrics ---

inline double mse(const DenseTensor& pred_mean, const DenseTensor& truth) {
    if (pred_mean.dims() != truth.dims()) throw dimension_error("mse: dims mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = pred_mean[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(truth.size());
}

// mean pointwise SD divided by the emulator's output range (max minus min of
// its predictive means over the test set)
inline double sd_normalized(const DenseTensor& pred_sd, double output_range) {
    if (!(output_range > 0.0)) throw degenerate_error("sd_normalized: zero output range");
    double s = 0.0;
    for (std::size_t i = 0; i < pred_sd.size(); ++i) s += pred_sd[i];
    return s / static_cast<double>(pred_sd.size()) / output_range;
}

// fraction of entries whose truth lies inside the empirical central 95%
// interval of the draws (type-7 quantiles)
inline double coverage95(const Eigen::MatrixXd& draws, const DenseTensor& truth) {
    if (draws.rows() < 100) throw diagnostic_error("coverage95: need at least 100 draws");
    if (static_cast<std::size_t>(draws.cols()) != truth.size())
        throw dimension_error("coverage95: draw columns must match truth entries");
    std::size_t hit = 0;
    Eigen::VectorXd col;
    for (std::size_t e = 0; e < truth.size(); ++e) {
        col = draws.col(static_cast<Eigen::Index>(e));
        const double lo = detail::quantile_inplace(col, 0.025);
        col = draws.col(static_cast<Eigen::Index>(e));
        const double hi = detail::quantile_inplace(col, 0.975);
        if (truth[e] >= lo && truth[e] <= hi) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// interval-bound variant for predictions whose draws were not materialized
inline double coverage95(const DenseTensor& lo, const DenseTensor& hi, const DenseTensor& truth) {
    if (lo.dims() != truth.dims() || hi.dims() != truth.dims())
        throw dimension_error("coverage95: dims mismatch");
    std::size_t hit = 0;
    for (std::size_t e = 0; e < truth.size(); ++e)
        if (truth[e] >= lo[e] && truth[e] <= hi[e]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// --- per-emulator evaluation accumulator ---

// Pointwise scores for one emulator across test points, aggregated overall
// and by month, year, and spatial location.
struct MetricsReport {
    std::string emulator;
    double mse = 0.0;
    double sd_normalized = 0.0;
    double coverage95 = 0.0;
    double output_range = 0.0;
    Eigen::VectorXd mse_by_month, sd_by_month, cov_by_month;
    Eigen::VectorXd mse_by_year, sd_by_year, cov_by_year;
    Eigen::VectorXd mse_by_location, sd_by_location, cov_by_location;
    int n_test_points = 0;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<std::string> warnings;
};

namespace detail {

struct MetricsAccumulator {
    std::vector<std::size_t> dims; // n_s, n_m, n_y
    Eigen::VectorXd se_m, sd_m, cov_m; // by month
    Eigen::VectorXd se_y, sd_y, cov_y; // by year
    Eigen::VectorXd se_s, sd_s, cov_s; // by location
    double se_total = 0.0, sd_total = 0.0, cov_total = 0.0;
    double mean_min = std::numeric_limits<double>::infinity();
    double mean_max = -std::numeric_limits<double>::infinity();
    std::size_t n_entries = 0;
    int n_points = 0;

    explicit MetricsAccumulator(const std::vector<std::size_t>& field_dims) : dims(field_dims) {
        se_m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[1]));
        sd_m = se_m;
        cov_m = se_m;
        se_y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[2]));
        sd_y = se_y;
        cov_y = se_y;
        se_s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[0]));
        sd_s = se_s;
        cov_s = se_s;
    }

    void add(const PredictionResult& pred, const DenseTensor& truth) {
        if (truth.dims() != dims) throw dimension_error("metrics: field dims mismatch");
        const std::size_t n_s = dims[0], n_m = dims[1];
        std::size_t e = 0;
        for (std::size_t y = 0; y < dims[2]; ++y)
            for (std::size_t m = 0; m < n_m; ++m)
                for (std::size_t s = 0; s < n_s; ++s, ++e) {
                    const double diff = pred.mean[e] - truth[e];
                    const double se = diff * diff;
                    const double sd = pred.sd[e];
                    const double cov =
                        (truth[e] >= pred.lo[e] && truth[e] <= pred.hi[e]) ? 1.0 : 0.0;
                    se_total += se;
                    sd_total += sd;
                    cov_total += cov;
                    se_m(static_cast<Eigen::Index>(m)) += se;
                    sd_m(static_cast<Eigen::Index>(m)) += sd;
                    cov_m(static_cast<Eigen::Index>(m)) += cov;
                    se_y(static_cast<Eigen::Index>(y)) += se;
                    sd_y(static_cast<Eigen::Index>(y)) += sd;
                    cov_y(static_cast<Eigen::Index>(y)) += cov;
                    se_s(static_cast<Eigen::Index>(s)) += se;
                    sd_s(static_cast<Eigen::Index>(s)) += sd;
                    cov_s(static_cast<Eigen::Index>(s)) += cov;
                    mean_min = std::min(mean_min, pred.mean[e]);
                    mean_max = std::max(mean_max, pred.mean[e]);
                }
        n_entries += truth.size();
        ++n_points;
    }

    MetricsReport finalize(const std::string& label) const {
        MetricsReport r;
        r.emulator = label;
        r.n_test_points = n_points;
        const double n = static_cast<double>(n_entries);
        r.mse = se_total / n;
        r.output_range = mean_max - mean_min;
        r.sd_normalized =
            r.output_range > 0.0 ? (sd_total / n) / r.output_range
                                 : std::numeric_limits<double>::quiet_NaN();
        r.coverage95 = cov_total / n;
        const double per_m = n / static_cast<double>(dims[1]);
        const double per_y = n / static_cast<double>(dims[2]);
        const double per_s = n / static_cast<double>(dims[0]);
        r.mse_by_month = se_m / per_m;
        r.sd_by_month = sd_m / per_m / std::max(r.output_range, 1e-300);
        r.cov_by_month = cov_m / per_m;
        r.mse_by_year = se_y / per_y;
        r.sd_by_year = sd_y / per_y / std::max(r.output_range, 1e-300);
        r.cov_by_year = cov_y / per_y;
        r.mse_by_location = se_s / per_s;
        r.sd_by_location = sd_s / per_s / std::max(r.output_range, 1e-300);
        r.cov_by_location = cov_s / per_s;
        return r;
    }
};

} // namespace detail

// --- leave-one-out cross-validation over the fine design points ---

struct LoocvConfig {
    RankSpec ranks;           // fidelity ensembles
    RankSpec ranks_disc;      // discrepancy
    int k_interp = 3;
    MCMCConfig mcmc;
    int n_draws = 500;
    bool keep_lf_heldout = false;
    std::optional<TransformSpec> transform;
    std::vector<std::string> emulators{"lf", "hf", "mf", "naive"};
    std::uint64_t seed = 0;
    std::string config_hash;
    NaiveFitOptions naive;
};

struct LoocvResult {
    std::vector<MetricsReport> reports;           // one per emulator
    std::vector<std::string> incomplete_folds;    // warnings for skipped folds
    // posterior-mean length scales from the last full-data MF fit, when run:
    // rows indexed (component, weight, input)
    std::vector<std::array<std::string, 2>> lengthscale_keys; // component, weight
    Eigen::MatrixXd lengthscales;                             // rows x p
};

namespace detail {

inline bool wants(const std::vector<std::string>& set, const std::string& name) {
    for (const auto& s : set)
        if (s == name) return true;
    return false;
}

} // namespace detail

// For each fine design point: drop it from the fine set (and from the coarse
// set unless keep_lf_heldout), fit the requested emulators, predict at the
// held-out input and score against the held-out fine field. Failures are
// recorded per fold and the fold skipped.
inline LoocvResult loocv(const DenseTensor& z_lf, const DenseTensor& z_hf,
                         const DesignMatrix& X_lf, const DesignMatrix& X_hf,
                         const MeshCoords& mesh_lf, const MeshCoords& mesh_hf,
                         const LoocvConfig& cfg) {
    const int n_hf = static_cast<int>(X_hf.n());
    if (n_hf < 3) throw domain_error("loocv: need at least 3 fine design points");
    const std::vector<std::size_t> fdims{z_hf.dim(0), z_hf.dim(1), z_hf.dim(2)};

    std::map<std::string, detail::MetricsAccumulator> acc;
    for (const auto& e : cfg.emulators) acc.emplace(e, detail::MetricsAccumulator(fdims));
    LoocvResult out;

    for (int fold = 0; fold < n_hf; ++fold) {
        const Eigen::VectorXd x_star = X_hf.pts.row(fold).transpose();
        const DenseTensor truth = last_mode_slice(z_hf, static_cast<std::size_t>(fold));
        const DenseTensor z_hf_train = drop_index(z_hf, 3, static_cast<std::size_t>(fold));
        Eigen::MatrixXd X_hf_train(n_hf - 1, X_hf.p());
        for (int i = 0, r = 0; i < n_hf; ++i)
            if (i != fold) X_hf_train.row(r++) = X_hf.pts.row(i);

        // coarse training set, optionally without the held-out input
        DenseTensor z_lf_train = z_lf;
        Eigen::MatrixXd X_lf_train = X_lf.pts;
        if (!cfg.keep_lf_heldout) {
            for (Eigen::Index i = 0; i < X_lf.n(); ++i)
                if (X_lf.pts.row(i) == x_star.transpose()) {
                    z_lf_train = drop_index(z_lf_train, 3, static_cast<std::size_t>(i));
                    Eigen::MatrixXd reduced(X_lf_train.rows() - 1, X_lf_train.cols());
                    for (Eigen::Index a = 0, r = 0; a < X_lf_train.rows(); ++a)
                        if (a != i) reduced.row(r++) = X_lf_train.row(a);
                    X_lf_train = reduced;
                    break;
                }
        }

        MCMCConfig fold_mcmc = cfg.mcmc;
        fold_mcmc.seed = sub_seed(cfg.mcmc.seed, static_cast<std::uint64_t>(fold));
        PredictOptions popts;
        popts.n_draws = cfg.n_draws;
        popts.seed = sub_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(fold));

        try {
            std::optional<SFEmulator> lf_em;
            if (detail::wants(cfg.emulators, "lf") || detail::wants(cfg.emulators, "mf")) {
                SFFitOptions fit_opts;
                fit_opts.transform = cfg.transform;
                lf_em = fit_sf(z_lf_train, DesignMatrix{X_lf_train}, cfg.ranks, fold_mcmc,
                               fit_opts);
            }
            if (detail::wants(cfg.emulators, "lf")) {
                const Eigen::MatrixXd interp =
                    interpolate_bases(lf_em->tucker.factors[0], mesh_lf, mesh_hf, cfg.k_interp);
                acc.at("lf").add(predict_sf(*lf_em, x_star, popts, &interp), truth);
            }
            if (detail::wants(cfg.emulators, "hf")) {
                SFFitOptions fit_opts;
                fit_opts.transform = cfg.transform;
                SFEmulator hf_em = fit_sf(z_hf_train, DesignMatrix{X_hf_train}, cfg.ranks,
                                          fold_mcmc, fit_opts);
                acc.at("hf").add(predict_sf(hf_em, x_star, popts), truth);
            }
            if (detail::wants(cfg.emulators, "mf")) {
                MFFitOptions mf_opts;
                mf_opts.transform = cfg.transform;
                mf_opts.k_interp = cfg.k_interp;
                MFEmulator mf_em = fit_mf(z_lf_train, z_hf_train, DesignMatrix{X_lf_train},
                                          DesignMatrix{X_hf_train}, mesh_lf, mesh_hf, cfg.ranks,
                                          cfg.ranks_disc, fold_mcmc, mf_opts, &*lf_em);
                acc.at("mf").add(predict_mf(mf_em, x_star, popts), truth);
            }
            if (detail::wants(cfg.emulators, "naive")) {
                NaiveFitOptions nopts = cfg.naive;
                nopts.seed = sub_seed(cfg.seed, 5000 + static_cast<std::uint64_t>(fold));
                DenseTensor z_train = cfg.transform
                                          ? apply_tensor(z_hf_train, *cfg.transform,
                                                         TransformDirection::forward)
                                          : z_hf_train;
                NaiveGPModel naive = fit_naive(z_train, DesignMatrix{X_hf_train}, nopts);
                PredictionResult pred = predict_naive(naive, x_star);
                if (cfg.transform) {
                    pred.mean = apply_tensor(pred.mean, *cfg.transform, TransformDirection::inverse);
                    // interval bounds transform monotonically; SD via the bounds
                    pred.lo = apply_tensor(pred.lo, *cfg.transform, TransformDirection::inverse);
                    pred.hi = apply_tensor(pred.hi, *cfg.transform, TransformDirection::inverse);
                    std::vector<double> sd(pred.sd.size());
                    for (std::size_t e = 0; e < sd.size(); ++e)
                        sd[e] = (pred.hi[e] - pred.lo[e]) / (2.0 * 1.959963984540054);
                    pred.sd = DenseTensor(pred.sd.dims(), std::move(sd));
                }
                acc.at("naive").add(pred, truth);
            }
        } catch (const error& err) {
            out.incomplete_folds.push_back("fold " + std::to_string(fold) + ": " + err.what());
            continue;
        }
    }

    for (const auto& e : cfg.emulators) {
        MetricsReport r = acc.at(e).finalize(e);
        r.seed = cfg.seed;
        r.config_hash = cfg.config_hash;
        r.warnings = out.incomplete_folds;
        out.reports.push_back(std::move(r));
    }
    return out;
}

// --- CSV emission (shared by the LOO-CV driver and the study harness) ---

inline void write_metrics_csvs(const std::vector<MetricsReport>& reports,
                               const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "metrics_overall.csv");
        f << "emulator,mse,sd,coverage\n";
        for (const auto& r : reports)
            f << r.emulator << "," << format_double(r.mse) << "," << format_double(r.sd_normalized)
              << "," << format_double(r.coverage95) << "\n";
    }
    auto write_group = [&](const std::string& name, const std::string& key,
                           auto member_mse, auto member_sd, auto member_cov) {
        std::ofstream f(dir / name);
        f << "emulator," << key << ",mse,sd,coverage\n";
        for (const auto& r : reports) {
            const Eigen::VectorXd& m = r.*member_mse;
            const Eigen::VectorXd& s = r.*member_sd;
            const Eigen::VectorXd& c = r.*member_cov;
            for (Eigen::Index i = 0; i < m.size(); ++i)
                f << r.emulator << "," << i << "," << format_double(m(i)) << ","
                  << format_double(s(i)) << "," << format_double(c(i)) << "\n";
        }
    };
    write_group("metrics_by_month.csv", "month", &MetricsReport::mse_by_month,
                &MetricsReport::sd_by_month, &MetricsReport::cov_by_month);
    write_group("metrics_by_year.csv", "year", &MetricsReport::mse_by_year,
                &MetricsReport::sd_by_year, &MetricsReport::cov_by_year);
    write_group("metrics_by_location.csv", "location", &MetricsReport::mse_by_location,
                &MetricsReport::sd_by_location, &MetricsReport::cov_by_location);
}

// lengthscales.csv: posterior-mean length scale per (component, weight, input)
inline void write_lengthscales_csv(const std::filesystem::path& path, const std::string& emulator,
                                   const PosteriorSamples& samples, int p) {
    std::ofstream f(path);
    f << "emulator,component,effective_weight,input,posterior_mean\n";
    const Eigen::VectorXd mean = samples.natural_mean();
    for (int j = 0; j < samples.n_params(); ++j) {
        const std::string& name = samples.param_names[static_cast<std::size_t>(j)];
        const auto pos = name.find("_ls_x");
        if (pos == std::string::npos) continue;
        std::string component = name.rfind("disc_", 0) == 0 ? "discrepancy" : "LF";
        const auto ew_pos = name.find("ew");
        const int weight = std::stoi(name.substr(ew_pos + 2, name.find('_', ew_pos) - ew_pos - 2));
        const std::string input = "x" + name.substr(pos + 5);
        f << emulator << "," << component << "," << weight << "," << input << ","
          << format_double(mean(j)) << "\n";
    }
    (void)p;
}

} // namespace mft
