#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mft/eval.hpp"
#include "mft/rng.hpp"
#include "mft/synth.hpp"
#include "mft/transform.hpp"

using namespace mft;

namespace {

DenseTensor random_tensor(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return DenseTensor(dims, std::move(v));
}

} // namespace

TEST_CASE("mse") {
    DenseTensor a = random_tensor({3, 4, 2}, 1);
    SECTION("identical tensors score zero") { CHECK(mse(a, a) == 0.0); }
    SECTION("constant offset squares") {
        std::vector<double> v(a.values());
        for (auto& x : v) x += 1.5;
        CHECK(mse(DenseTensor(a.dims(), v), a) == Catch::Approx(2.25).epsilon(1e-12));
    }
    SECTION("matches the loop definition") {
        DenseTensor b = random_tensor({3, 4, 2}, 2);
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        CHECK(mse(a, b) == Catch::Approx(s / a.size()).margin(1e-12));
    }
    SECTION("dims mismatch rejected") {
        CHECK_THROWS_AS(mse(a, random_tensor({3, 4, 3}, 3)), dimension_error);
    }
}

TEST_CASE("sd_normalized") {
    SECTION("zero SD scores zero") {
        CHECK(sd_normalized(DenseTensor({4, 2}), 3.0) == 0.0);
    }
    SECTION("constant SD over a range") {
        DenseTensor sd({5, 2}, std::vector<double>(10, 0.7));
        CHECK(sd_normalized(sd, 3.5) == Catch::Approx(0.2));
    }
    SECTION("matches the loop definition") {
        DenseTensor sd = random_tensor({3, 3}, 4);
        std::vector<double> v(sd.values());
        for (auto& x : v) x = std::abs(x);
        DenseTensor sd_abs(sd.dims(), v);
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        CHECK(sd_normalized(sd_abs, 2.0) == Catch::Approx(mean / 2.0).margin(1e-12));
    }
    SECTION("zero range rejected") {
        CHECK_THROWS_AS(sd_normalized(DenseTensor({2, 2}), 0.0), degenerate_error);
    }
}

TEST_CASE("coverage95") {
    SECTION("truth at the median is always covered") {
        const int n_draws = 200, n_e = 50;
        Rng rng(5);
        Eigen::MatrixXd draws(n_draws, n_e);
        for (Eigen::Index i = 0; i < draws.size(); ++i) draws(i) = rng.normal();
        std::vector<double> med(n_e);
        for (int e = 0; e < n_e; ++e) {
            Eigen::VectorXd col = draws.col(e);
            std::nth_element(col.data(), col.data() + n_draws / 2, col.data() + n_draws);
            med[static_cast<std::size_t>(e)] = col(n_draws / 2);
        }
        CHECK(coverage95(draws, DenseTensor({50}, med)) == 1.0);
    }
    SECTION("truth far outside is never covered") {
        Eigen::MatrixXd draws = Eigen::MatrixXd::Random(150, 10);
        CHECK(coverage95(draws, DenseTensor({10}, std::vector<double>(10, 100.0))) == 0.0);
    }
    SECTION("nominal coverage for gaussian draws") {
        const int n_draws = 400, n_e = 10000;
        Rng rng(6);
        Eigen::MatrixXd draws(n_draws, n_e);
        for (Eigen::Index i = 0; i < draws.size(); ++i) draws(i) = rng.normal();
        std::vector<double> truth(n_e);
        for (auto& t : truth) t = rng.normal();
        const double c = coverage95(draws, DenseTensor({static_cast<std::size_t>(n_e)}, truth));
        CHECK(c == Catch::Approx(0.95).margin(0.02));
    }
    SECTION("invariant under a strictly increasing transform") {
        const int n_draws = 300, n_e = 500;
        Rng rng(7);
        Eigen::MatrixXd draws(n_draws, n_e);
        for (Eigen::Index i = 0; i < draws.size(); ++i) draws(i) = 0.5 + 0.07 * rng.normal();
        std::vector<double> truth(n_e);
        for (auto& t : truth) t = 0.5 + 0.07 * rng.normal();
        DenseTensor truth_t({static_cast<std::size_t>(n_e)}, truth);
        const double before = coverage95(draws, truth_t);

        const TransformSpec spec{};
        Eigen::MatrixXd mapped = draws;
        for (Eigen::Index i = 0; i < mapped.size(); ++i)
            mapped(i) = transform_forward(mapped(i), spec);
        const double after = coverage95(
            mapped, apply_tensor(truth_t, spec, TransformDirection::forward));
        CHECK(before == after);
    }
    SECTION("too few draws rejected") {
        CHECK_THROWS_AS(coverage95(Eigen::MatrixXd::Zero(50, 4), DenseTensor({4})),
                        diagnostic_error);
    }
    SECTION("bounds variant agrees with the draws variant") {
        const int n_draws = 250, n_e = 64;
        Rng rng(8);
        Eigen::MatrixXd draws(n_draws, n_e);
        for (Eigen::Index i = 0; i < draws.size(); ++i) draws(i) = rng.normal();
        std::vector<double> truth(n_e);
        for (auto& t : truth) t = rng.normal();
        DenseTensor truth_t({static_cast<std::size_t>(n_e)}, truth);
        std::vector<double> lo(n_e), hi(n_e);
        for (int e = 0; e < n_e; ++e) {
            Eigen::VectorXd col = draws.col(e);
            lo[static_cast<std::size_t>(e)] = detail::quantile_inplace(col, 0.025);
            col = draws.col(e);
            hi[static_cast<std::size_t>(e)] = detail::quantile_inplace(col, 0.975);
        }
        CHECK(coverage95(draws, truth_t) ==
              coverage95(DenseTensor({64}, lo), DenseTensor({64}, hi), truth_t));
    }
}

TEST_CASE("metrics aggregation is consistent") {
    // overall MSE equals the entry-count-weighted mean of per-month MSEs
    const std::vector<std::size_t> fdims{6, 4, 3};
    detail::MetricsAccumulator acc(fdims);
    Rng rng(9);
    for (int t = 0; t < 3; ++t) {
        PredictionResult pred;
        pred.mean = random_tensor(fdims, 10 + static_cast<std::uint64_t>(t));
        pred.sd = DenseTensor(fdims, std::vector<double>(72, 0.3));
        pred.lo = DenseTensor(fdims, std::vector<double>(72, -10.0));
        pred.hi = DenseTensor(fdims, std::vector<double>(72, 10.0));
        acc.add(pred, random_tensor(fdims, 20 + static_cast<std::uint64_t>(t)));
    }
    MetricsReport r = acc.finalize("toy");
    CHECK(r.mse == Catch::Approx(r.mse_by_month.mean()).margin(1e-10));
    CHECK(r.mse == Catch::Approx(r.mse_by_year.mean()).margin(1e-10));
    CHECK(r.mse == Catch::Approx(r.mse_by_location.mean()).margin(1e-10));
}

namespace {

LoocvConfig small_loocv_cfg(std::uint64_t seed) {
    LoocvConfig cfg;
    cfg.ranks.explicit_ranks = std::vector<std::size_t>{3, 3, 2, 3};
    cfg.ranks_disc.explicit_ranks = std::vector<std::size_t>{2, 2, 1, 2};
    cfg.k_interp = 1;
    cfg.mcmc.n_chains = 2;
    cfg.mcmc.n_iter = 300;
    cfg.mcmc.burn_in = 120;
    cfg.mcmc.seed = seed;
    cfg.n_draws = 120;
    cfg.seed = seed;
    cfg.naive.multistarts = 2;
    cfg.naive.max_evals_per_start = 60;
    return cfg;
}

} // namespace

TEST_CASE("loocv runs one fold per fine design point") {
    SynthConfig scfg;
    scfg.grid_lf = 4;
    scfg.grid_hf = 5;
    scfg.n_months = 4;
    scfg.n_years = 2;
    scfg.n_lf = 8;
    scfg.n_hf = 3;
    scfg.seed = 11;
    SynthData d = generate_synth(scfg);
    LoocvConfig cfg = small_loocv_cfg(13);
    LoocvResult res = loocv(d.z_lf, d.z_hf, d.X_lf, d.X_hf, d.mesh_lf, d.mesh_hf, cfg);
    REQUIRE(res.reports.size() == 4);
    for (const auto& r : res.reports) {
        CHECK(r.n_test_points == 3);
        CHECK(r.mse >= 0.0);
        CHECK(r.coverage95 >= 0.0);
        CHECK(r.coverage95 <= 1.0);
    }
}

TEST_CASE("loocv fold ordering does not leak between folds") {
    // permuting the fine design order permutes fold assignments but leaves
    // each held-out point's scores unchanged
    SynthConfig scfg;
    scfg.grid_lf = 4;
    scfg.grid_hf = 4;
    scfg.n_months = 3;
    scfg.n_years = 2;
    scfg.n_lf = 7;
    scfg.n_hf = 3;
    scfg.seed = 17;
    SynthData d = generate_synth(scfg);
    LoocvConfig cfg = small_loocv_cfg(19);
    cfg.emulators = {"naive"}; // per-fold scores comparable without MCMC seeds
    cfg.mcmc.seed = 19;

    LoocvResult res1 = loocv(d.z_lf, d.z_hf, d.X_lf, d.X_hf, d.mesh_lf, d.mesh_hf, cfg);

    // reversed fine design order
    const int nh = 3;
    Eigen::MatrixXd Xp(nh, d.X_hf.p());
    std::vector<DenseTensor> slices;
    for (int i = 0; i < nh; ++i) {
        Xp.row(i) = d.X_hf.pts.row(nh - 1 - i);
        slices.push_back(last_mode_slice(d.z_hf, static_cast<std::size_t>(nh - 1 - i)));
    }
    LoocvResult res2 =
        loocv(d.z_lf, stack_last_mode(slices), d.X_lf, DesignMatrix{Xp}, d.mesh_lf, d.mesh_hf, cfg);
    // aggregate metrics are permutation-invariant for the per-location GP
    CHECK(res1.reports[0].mse == Catch::Approx(res2.reports[0].mse).epsilon(1e-10));
    CHECK(res1.reports[0].coverage95 == Catch::Approx(res2.reports[0].coverage95).margin(1e-12));
}

TEST_CASE("metrics csv emission") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mft_eval_csv";
    detail::MetricsAccumulator acc({4, 3, 2});
    PredictionResult pred;
    pred.mean = random_tensor({4, 3, 2}, 30);
    pred.sd = DenseTensor({4, 3, 2}, std::vector<double>(24, 0.1));
    pred.lo = DenseTensor({4, 3, 2}, std::vector<double>(24, -5.0));
    pred.hi = DenseTensor({4, 3, 2}, std::vector<double>(24, 5.0));
    acc.add(pred, random_tensor({4, 3, 2}, 31));
    write_metrics_csvs({acc.finalize("lf")}, dir);
    CHECK(fs::exists(dir / "metrics_overall.csv"));
    CsvTable t = read_csv(dir / "metrics_by_month.csv");
    CHECK(t.values.rows() == 3);
    CHECK(t.header[1] == "month");
    fs::remove_all(dir);
}
