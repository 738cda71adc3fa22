#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "mft/rng.hpp"
#include "mft/tensor.hpp"
#include "mft/tucker.hpp"

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

Eigen::VectorXd random_vec(Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

// Independent truncated-HOSVD oracle: per-mode leading singular vectors via
// Eigen's SVD (not the Gram route the library uses), then one projection.
TuckerModel hosvd_oracle(const DenseTensor& t, const std::vector<std::size_t>& ranks) {
    TuckerModel m;
    for (std::size_t k = 0; k < t.order(); ++k) {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(unfold(t, k), Eigen::ComputeThinU);
        m.factors.push_back(svd.matrixU().leftCols(static_cast<Eigen::Index>(ranks[k])));
    }
    m.core = project_core(t, m.factors);
    return m;
}

double rel_err(const DenseTensor& t, const TuckerModel& m) {
    return subtract(t, reconstruct(m)).frobenius_norm() / t.frobenius_norm();
}

} // namespace

TEST_CASE("select_ranks") {
    SECTION("exact rank-(1,1,1) tensor") {
        DenseTensor t = outer3(random_vec(5, 1), random_vec(4, 2), random_vec(3, 3));
        auto r = select_ranks(t, 0.99);
        CHECK(r == std::vector<std::size_t>{1, 1, 1});
    }
    SECTION("target 1.0 gives min(dim, rest) per mode") {
        DenseTensor t = random_tensor({6, 3, 2}, 4);
        auto r = select_ranks(t, 1.0);
        CHECK(r == std::vector<std::size_t>{6, 3, 2});
    }
    SECTION("monotone in the target") {
        DenseTensor t = random_tensor({5, 4, 3}, 5);
        auto lo = select_ranks(t, 0.5);
        auto hi = select_ranks(t, 0.95);
        for (std::size_t k = 0; k < 3; ++k) CHECK(lo[k] <= hi[k]);
    }
    SECTION("zero tensor rejected") {
        DenseTensor t({3, 3});
        CHECK_THROWS_AS(select_ranks(t, 0.9), degenerate_error);
    }
}

TEST_CASE("hooi") {
    SECTION("full ranks are lossless") {
        DenseTensor t = random_tensor({4, 3, 2}, 6);
        TuckerModel m = hooi(t, {4, 3, 2});
        CHECK(rel_err(t, m) <= 1e-8);
    }
    SECTION("exact rank-(1,1,1) input recovered") {
        DenseTensor t = outer3(random_vec(6, 7), random_vec(5, 8), random_vec(4, 9));
        TuckerModel m = hooi(t, {1, 1, 1});
        CHECK(rel_err(t, m) <= 1e-10);
    }
    SECTION("never worse than truncated HOSVD") {
        for (std::uint64_t seed = 0; seed < 8; ++seed) {
            DenseTensor t = random_tensor({6, 5, 4}, 100 + seed);
            std::vector<std::size_t> ranks{3, 3, 2};
            TuckerModel m = hooi(t, ranks);
            TuckerModel h = hosvd_oracle(t, ranks);
            CHECK(rel_err(t, m) <= rel_err(t, h) + 1e-12);
        }
    }
    SECTION("factors stay orthonormal") {
        DenseTensor t = random_tensor({7, 5, 3}, 13);
        TuckerModel m = hooi(t, {3, 2, 2});
        for (const auto& U : m.factors) CHECK(max_orthonormality_defect(U) <= 1e-10);
    }
    SECTION("error history never increases") {
        DenseTensor t = random_tensor({6, 6, 6}, 14);
        TuckerModel m = hooi(t, {2, 3, 2}, 50, 1e-12);
        for (std::size_t i = 1; i < m.error_history.size(); ++i)
            CHECK(m.error_history[i] <= m.error_history[i - 1] + 1e-12);
    }
    SECTION("nested ranks are monotone") {
        DenseTensor t = random_tensor({6, 5, 4}, 15);
        TuckerModel small = hooi(t, {2, 2, 2});
        TuckerModel big = hooi(t, {3, 3, 2});
        CHECK(rel_err(t, big) <= rel_err(t, small) + 1e-9);
    }
    SECTION("core equals full projection at convergence") {
        DenseTensor t = random_tensor({5, 4, 3}, 16);
        TuckerModel m = hooi(t, {3, 2, 2}, 100, 1e-12);
        DenseTensor direct = project_core(t, m.factors);
        double scale = direct.frobenius_norm();
        for (std::size_t i = 0; i < direct.size(); ++i)
            CHECK(std::abs(m.core[i] - direct[i]) <= 1e-10 * scale);
    }
    SECTION("input guards") {
        DenseTensor t = random_tensor({3, 3}, 17);
        CHECK_THROWS_AS(hooi(t, {4, 2}), dimension_error);
        CHECK_THROWS_AS(hooi(t, {2}), dimension_error);
        std::vector<double> bad(9, 0.0);
        bad[4] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(hooi(DenseTensor({3, 3}, bad), {2, 2}), numeric_error);
    }
}

TEST_CASE("reconstruct") {
    SECTION("zero core gives zero tensor") {
        TuckerModel m;
        m.core = DenseTensor({2, 2});
        m.factors = {Eigen::MatrixXd::Identity(4, 2), Eigen::MatrixXd::Identity(3, 2)};
        CHECK(reconstruct(m).sq_norm() == 0.0);
    }
    SECTION("matches brute-force nested sum on a 3x3x3x3 instance") {
        DenseTensor t = random_tensor({3, 3, 3, 3}, 18);
        TuckerModel m = hooi(t, {2, 2, 2, 2});
        DenseTensor r = reconstruct(m);
        // eightfold nested sum straight from the multilinear definition
        const auto& G = m.core;
        double max_diff = 0.0;
        for (std::size_t i0 = 0; i0 < 3; ++i0)
            for (std::size_t i1 = 0; i1 < 3; ++i1)
                for (std::size_t i2 = 0; i2 < 3; ++i2)
                    for (std::size_t i3 = 0; i3 < 3; ++i3) {
                        double s = 0.0;
                        for (std::size_t j0 = 0; j0 < 2; ++j0)
                            for (std::size_t j1 = 0; j1 < 2; ++j1)
                                for (std::size_t j2 = 0; j2 < 2; ++j2)
                                    for (std::size_t j3 = 0; j3 < 2; ++j3)
                                        s += G.at({j0, j1, j2, j3}) *
                                             m.factors[0](static_cast<Eigen::Index>(i0), static_cast<Eigen::Index>(j0)) *
                                             m.factors[1](static_cast<Eigen::Index>(i1), static_cast<Eigen::Index>(j1)) *
                                             m.factors[2](static_cast<Eigen::Index>(i2), static_cast<Eigen::Index>(j2)) *
                                             m.factors[3](static_cast<Eigen::Index>(i3), static_cast<Eigen::Index>(j3));
                        max_diff = std::max(max_diff, std::abs(s - r.at({i0, i1, i2, i3})));
                    }
        CHECK(max_diff <= 1e-12 * r.frobenius_norm());
    }
}

TEST_CASE("explained_variance") {
    DenseTensor t = random_tensor({5, 4, 3}, 19);
    SECTION("lossless model explains everything") {
        TuckerModel m = hooi(t, {5, 4, 3});
        CHECK(explained_variance(t, m) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("zero core explains nothing") {
        TuckerModel m = hooi(t, {2, 2, 2});
        m.core = DenseTensor(m.core.dims());
        CHECK(explained_variance(t, m) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("matches direct norm computation") {
        TuckerModel m = hooi(t, {3, 2, 2});
        const double direct =
            1.0 - subtract(t, reconstruct(m)).sq_norm() / t.sq_norm();
        CHECK(explained_variance(t, m) == Catch::Approx(direct).margin(1e-12));
    }
    SECTION("zero tensor rejected") {
        TuckerModel m = hooi(t, {2, 2, 2});
        CHECK_THROWS_AS(explained_variance(DenseTensor({5, 4, 3}), m), degenerate_error);
    }
}

TEST_CASE("basis_contribution") {
    SECTION("rank-1 model puts everything on the single column") {
        TuckerModel m;
        m.core = DenseTensor({1, 1}, {2.5});
        m.factors = {Eigen::MatrixXd::Identity(3, 1), Eigen::MatrixXd::Identity(4, 1)};
        CHECK(basis_contribution(m, 0, 0) == Catch::Approx(1.0));
    }
    SECTION("hand-computed 2x2 core") {
        // core [[2, 0], [0, 1]] column-major values {2, 0, 0, 1}
        TuckerModel m;
        m.core = DenseTensor({2, 2}, {2, 0, 0, 1});
        m.factors = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
        CHECK(basis_contribution(m, 0, 0) == Catch::Approx(0.8));
        CHECK(basis_contribution(m, 0, 1) == Catch::Approx(0.2));
    }
    SECTION("contributions sum to one per mode") {
        DenseTensor t = random_tensor({5, 4, 3}, 23);
        TuckerModel m = hooi(t, {3, 2, 2});
        for (std::size_t mode = 0; mode < 3; ++mode) {
            double s = 0.0;
            for (std::size_t j = 0; j < m.rank(mode); ++j) s += basis_contribution(m, mode, j);
            CHECK(s == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("index guards") {
        DenseTensor t = random_tensor({4, 4}, 24);
        TuckerModel m = hooi(t, {2, 2});
        CHECK_THROWS_AS(basis_contribution(m, 2, 0), dimension_error);
        CHECK_THROWS_AS(basis_contribution(m, 0, 2), dimension_error);
    }
}

TEST_CASE("tucker save/load round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "mft_tucker_test";
    DenseTensor t = random_tensor({5, 4, 3, 2}, 25);
    TuckerModel m = hooi(t, {3, 2, 2, 2});
    save_tucker(m, dir);
    TuckerModel back = load_tucker(dir);
    CHECK(back.core.values() == m.core.values());
    REQUIRE(back.factors.size() == m.factors.size());
    for (std::size_t k = 0; k < m.factors.size(); ++k) CHECK(back.factors[k] == m.factors[k]);
    CHECK(back.rel_error == m.rel_error);
    fs::remove_all(dir);
}
