#include <catch2/catch_amalgamated.hpp>

#include "mft/baseline.hpp"
#include "mft/gp.hpp"
#include "mft/rng.hpp"
#include "mft/tensor.hpp"

using namespace mft;

namespace {

// tiny fine-grid ensemble with controllable per-coordinate responses
DenseTensor make_data(int n_coords_s, int n_m, int n_y, const Eigen::MatrixXd& responses) {
    // responses: n_coords x n_x
    const int n_x = static_cast<int>(responses.cols());
    std::vector<double> v(static_cast<std::size_t>(responses.size()));
    const std::size_t n_coords = static_cast<std::size_t>(responses.rows());
    for (int i = 0; i < n_x; ++i)
        for (std::size_t e = 0; e < n_coords; ++e)
            v[e + n_coords * static_cast<std::size_t>(i)] = responses(static_cast<Eigen::Index>(e), i);
    return DenseTensor({static_cast<std::size_t>(n_coords_s), static_cast<std::size_t>(n_m),
                        static_cast<std::size_t>(n_y), static_cast<std::size_t>(n_x)},
                       std::move(v));
}

DesignMatrix grid_design(int n, int p, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.uniform();
    return DesignMatrix{X};
}

} // namespace

TEST_CASE("fit_naive flags constant coordinates as degenerate") {
    const int n_x = 6;
    DesignMatrix X = grid_design(n_x, 2, 1);
    Eigen::MatrixXd resp(4, n_x);
    Rng rng(2);
    for (Eigen::Index i = 0; i < resp.size(); ++i) resp(i) = rng.normal();
    resp.row(2).setConstant(3.25); // degenerate coordinate

    NaiveGPModel model = fit_naive(make_data(2, 2, 1, resp), X);
    REQUIRE(model.degenerate[2] == 1);
    CHECK(model.degenerate[0] == 0);

    const PredictionResult pred = predict_naive(model, Eigen::VectorXd::Constant(2, 0.5));
    CHECK(pred.mean[2] == 3.25);
    CHECK(pred.sd[2] == 0.0);
    CHECK(pred.lo[2] == 3.25);
    CHECK(pred.hi[2] == 3.25);
}

TEST_CASE("fit_naive recovers a smooth response") {
    const int n_x = 20;
    DesignMatrix X = grid_design(n_x, 1, 3);
    Eigen::MatrixXd resp(1, n_x);
    for (int i = 0; i < n_x; ++i) resp(0, i) = 2.0 * X.pts(i, 0) + 1.0;
    NaiveGPModel model = fit_naive(make_data(1, 1, 1, resp), X);
    Eigen::VectorXd x_star(1);
    x_star << 0.5;
    const PredictionResult pred = predict_naive(model, x_star);
    CHECK(pred.mean[0] == Catch::Approx(2.0).epsilon(0.05));
}

TEST_CASE("duplicate design rows survive via the nugget") {
    Eigen::MatrixXd X(4, 1);
    X << 0.2, 0.2, 0.6, 0.9;
    Eigen::MatrixXd resp(1, 4);
    resp << 1.0, 1.0, 2.0, 3.0;
    NaiveGPModel model = fit_naive(make_data(1, 1, 1, resp), DesignMatrix{X});
    Eigen::VectorXd x_star(1);
    x_star << 0.4;
    CHECK(std::isfinite(predict_naive(model, x_star).mean[0]));
}

TEST_CASE("predict_naive at a training input returns the training value") {
    const int n_x = 10;
    DesignMatrix X = grid_design(n_x, 2, 5);
    Eigen::MatrixXd resp(3, n_x);
    for (int i = 0; i < n_x; ++i)
        for (int e = 0; e < 3; ++e)
            resp(e, i) = std::sin(3.0 * X.pts(i, 0)) + 0.5 * e * X.pts(i, 1);
    NaiveGPModel model = fit_naive(make_data(3, 1, 1, resp), X);
    const PredictionResult pred = predict_naive(model, X.pts.row(4).transpose());
    for (int e = 0; e < 3; ++e) {
        const double nugget_sd =
            std::sqrt(model.params(e, 3)) + 0.02 * std::abs(resp(e, 4));
        CHECK(std::abs(pred.mean[static_cast<std::size_t>(e)] - resp(e, 4)) <=
              3.0 * nugget_sd + 0.02);
    }
}

TEST_CASE("predict_naive matches the dense conditioning oracle") {
    const int n_x = 8;
    DesignMatrix X = grid_design(n_x, 2, 7);
    Eigen::MatrixXd resp(5, n_x);
    Rng rng(8);
    for (Eigen::Index i = 0; i < resp.size(); ++i) resp(i) = rng.normal();
    NaiveGPModel model = fit_naive(make_data(5, 1, 1, resp), X);
    Eigen::VectorXd x_star(2);
    x_star << 0.31, 0.77;
    const PredictionResult pred = predict_naive(model, x_star);

    for (int e = 0; e < 5; ++e) {
        GPHyperparams h;
        h.precision = model.params(e, 0);
        h.length_scales = model.params.row(e).segment(1, 2);
        const double nugget = model.params(e, 3);
        Eigen::MatrixXd K = cov_matrix(DesignMatrix{X.pts}, DesignMatrix{X.pts}, h);
        K.diagonal().array() += nugget + kCovJitterRel / h.precision;
        Eigen::VectorXd k(n_x);
        for (int i = 0; i < n_x; ++i) k(i) = kernel(X.pts.row(i), x_star.transpose(), h);
        const Eigen::VectorXd y = resp.row(e);
        const Eigen::MatrixXd Kinv = K.inverse();
        const double mean = k.dot(Kinv * y);
        const double var = 1.0 / h.precision + nugget - k.dot(Kinv * k);
        CHECK(pred.mean[static_cast<std::size_t>(e)] == Catch::Approx(mean).margin(1e-8));
        CHECK(pred.sd[static_cast<std::size_t>(e)] ==
              Catch::Approx(std::sqrt(std::max(0.0, var))).margin(1e-8));
    }
}

TEST_CASE("coordinates are fitted independently") {
    const int n_x = 7;
    DesignMatrix X = grid_design(n_x, 1, 9);
    Eigen::MatrixXd resp(4, n_x);
    Rng rng(10);
    for (Eigen::Index i = 0; i < resp.size(); ++i) resp(i) = rng.normal();
    NaiveFitOptions opts;
    opts.seed = 17;
    NaiveGPModel a = fit_naive(make_data(4, 1, 1, resp), X, opts);
    // perturb a different coordinate's data; coordinate 1 must be bit-identical
    Eigen::MatrixXd resp2 = resp;
    resp2.row(3).array() += 5.0;
    NaiveGPModel b = fit_naive(make_data(4, 1, 1, resp2), X, opts);
    CHECK(a.params.row(1) == b.params.row(1));
    Eigen::VectorXd x_star(1);
    x_star << 0.44;
    CHECK(predict_naive(a, x_star).mean[1] == predict_naive(b, x_star).mean[1]);
}

TEST_CASE("predictive variance never exceeds prior plus nugget") {
    const int n_x = 9;
    DesignMatrix X = grid_design(n_x, 2, 11);
    Eigen::MatrixXd resp(6, n_x);
    Rng rng(12);
    for (Eigen::Index i = 0; i < resp.size(); ++i) resp(i) = rng.normal();
    NaiveGPModel model = fit_naive(make_data(6, 1, 1, resp), X);
    Rng xr(13);
    for (int t = 0; t < 5; ++t) {
        Eigen::VectorXd x_star(2);
        x_star << xr.uniform(), xr.uniform();
        const PredictionResult pred = predict_naive(model, x_star);
        for (int e = 0; e < 6; ++e) {
            const double prior_var = 1.0 / model.params(e, 0) + model.params(e, 3);
            CHECK(pred.sd[static_cast<std::size_t>(e)] * pred.sd[static_cast<std::size_t>(e)] <=
                  prior_var + 1e-10);
        }
    }
}

TEST_CASE("fit_naive input guards") {
    Eigen::MatrixXd resp(1, 1);
    resp << 1.0;
    CHECK_THROWS_AS(fit_naive(make_data(1, 1, 1, resp), grid_design(1, 1, 14)), domain_error);
}
