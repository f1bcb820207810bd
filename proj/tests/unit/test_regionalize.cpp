#include <doctest.h>

#include <stdexcept>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>

#include "nest/binary_io.hpp"
#include "nest/regionalize.hpp"

using namespace nest;

namespace {

SeriesTensor series_from(const std::vector<std::vector<double>>& rows) {
    SeriesTensor s(rows.size(), rows.front().size(), 1);
    s.steps_per_day = 1000;  // no period alignment in the tiny examples
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t t = 0; t < rows[i].size(); ++t) s.at(i, t, 0) = rows[i][t];
    return s;
}

double brute_force_bipartition(const Tensor& pts) {
    const std::size_t n = pts.rows();
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
        std::vector<std::uint32_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
        best = std::min(best, kmeans_objective(pts, labels, 2));
    }
    return best;
}

Tensor random_points(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t({n, d});
    for (double& v : t.values()) v = g(rng);
    return t;
}

}  // namespace

TEST_CASE("affinity hand example and identical rows") {
    const SeriesTensor s = series_from({{0, 0, 0, 0}, {1, 1, 1, 1}, {0, 0, 0, 0}});
    const AffinityGraph g = build_affinity(s, 2, 1.0);
    CHECK(g.weights.at(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
    CHECK(g.weights.at(0, 2) == 1.0);
    CHECK(g.weights.at(0, 0) == 0.0);
    CHECK_THROWS(build_affinity(s, 5, 1.0));
    CHECK_THROWS(build_affinity(s, 2, 0.0));
    CHECK_THROWS(build_affinity(s, 0, 1.0));
}

TEST_CASE("property: affinity symmetric with entries in (0, 1]") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        SeriesTensor s(7, 120, 2);
        for (double& v : s.values.values()) v = g(rng);
        const double sigma = median_sigma(chunked_distances(s, 10, ChunkMode::full).distances, 10);
        for (ChunkMode mode : {ChunkMode::full, ChunkMode::mean}) {
            const Tensor& a = build_affinity(s, 10, sigma, mode).weights;
            for (std::size_t i = 0; i < 7; ++i)
                for (std::size_t j = 0; j < 7; ++j) {
                    CHECK(a.at(i, j) == a.at(j, i));
                    if (i != j) CHECK((a.at(i, j) > 0.0 && a.at(i, j) <= 1.0));
                }
        }
    }
}

TEST_CASE("chunks align to a day boundary when the day divides the chunk") {
    SeriesTensor s(2, 100, 1);
    s.steps_per_day = 4;
    s.start_offset = 2;  // first day boundary at t = 2
    const auto d = chunked_distances(s, 4, ChunkMode::full);
    CHECK(d.chunk_length == 24);
    CHECK(d.chunk_start == 2);
}

TEST_CASE("normalized laplacian examples") {
    const Tensor l = normalized_laplacian(Tensor::matrix({{0, 1}, {1, 0}}));
    CHECK(l == Tensor::matrix({{1, -1}, {-1, 1}}));
    const SpectralEmbedding e = spectral_embed(l, 2);
    CHECK(e.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(e.eigenvalues[1] == doctest::Approx(2.0));
    CHECK_THROWS_WITH(normalized_laplacian(Tensor::matrix({{0, 1, 0}, {1, 0, 0}, {0, 0, 0}})),
                      doctest::Contains("2"));
}

TEST_CASE("property: laplacian spectrum, null space and scale invariance") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 6 + trial % 5;
        Tensor a({n, n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) a.at(i, j) = a.at(j, i) = u(rng);
        const Tensor l = normalized_laplacian(a);
        Tensor scaled = a;
        for (double& v : scaled.values()) v *= 3.7;
        CHECK(max_abs_diff(normalized_laplacian(scaled), l) < 1e-12);
        const SpectralEmbedding e = spectral_embed(l, n);
        CHECK(e.eigenvalues.front() <= 1e-8);
        CHECK(e.eigenvalues.back() <= 2.0 + 1e-8);
        // Smallest eigenvector is proportional to D^{1/2} 1.
        std::vector<double> root_deg(n);
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) root_deg[i] += a.at(i, j);
            root_deg[i] = std::sqrt(root_deg[i]);
            norm += root_deg[i] * root_deg[i];
        }
        double cosine = 0.0;
        for (std::size_t i = 0; i < n; ++i) cosine += e.eigenvectors.at(i, 0) * root_deg[i] / std::sqrt(norm);
        CHECK(std::abs(std::abs(cosine) - 1.0) < 1e-8);
        // Residual of every pair, and orthonormal columns for M = N.
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> L(l.data(), n, n);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> U(e.eigenvectors.data(), n, n);
        for (std::size_t k = 0; k < n; ++k) CHECK((L * U.col(k) - e.eigenvalues[k] * U.col(k)).norm() < 1e-8);
        CHECK(((U.transpose() * U) - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-8);
        for (std::size_t i = 0; i < n; ++i) {
            double r = 0.0;
            for (double v : e.rows.row(i)) r += v * v;
            CHECK(std::abs(std::sqrt(r) - 1.0) < 1e-10);
        }
    }
}

TEST_CASE("two disconnected cliques embed onto two points") {
    Tensor a({6, 6});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            if (i != j && (i < 3) == (j < 3)) a.at(i, j) = 1.0;
    const SpectralEmbedding e = spectral_embed(normalized_laplacian(a), 2);
    for (std::size_t i = 0; i < 6; ++i) {
        const std::size_t ref = i < 3 ? 0 : 3;
        CHECK(std::abs(e.rows.at(i, 0) - e.rows.at(ref, 0)) < 1e-8);
        CHECK(std::abs(e.rows.at(i, 1) - e.rows.at(ref, 1)) < 1e-8);
    }
    CHECK(std::abs(e.rows.at(0, 0) - e.rows.at(3, 0)) + std::abs(e.rows.at(0, 1) - e.rows.at(3, 1)) > 0.5);
}

TEST_CASE("k-means matches brute force on N = 6") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor pts = random_points(6, 2, rng);
        const KMeansResult r = kmeans(pts, {2, 10, 300, static_cast<std::uint64_t>(trial)});
        CHECK(r.objective == doctest::Approx(brute_force_bipartition(pts)).epsilon(1e-12));
    }
}

TEST_CASE("k-means separable, degenerate and monotone cases") {
    const Tensor two = Tensor::matrix({{0, 0}, {0, 0}, {5, 5}, {5, 5}, {0, 0}});
    const KMeansResult r = kmeans(two, {2, 3, 100, 1});
    CHECK(r.objective == 0.0);
    CHECK(r.labels[0] == r.labels[1]);
    CHECK(r.labels[0] != r.labels[2]);
    CHECK(r.labels[2] == r.labels[3]);

    const Tensor distinct = Tensor::matrix({{0, 0}, {1, 0}, {0, 1}, {3, 3}});
    CHECK(kmeans(distinct, {4, 5, 100, 2}).objective == 0.0);

    std::mt19937_64 rng(8);
    const Tensor pts = random_points(40, 3, rng);
    const KMeansResult big = kmeans(pts, {4, 5, 300, 3});
    for (std::size_t i = 1; i < big.trace.size(); ++i) CHECK(big.trace[i] <= big.trace[i - 1] + 1e-12);
    CHECK(kmeans(pts, {4, 5, 300, 3}).labels == big.labels);
}

TEST_CASE("pooling and prototypes") {
    const std::uint32_t labels[] = {1, 0, 1, 0};
    const Tensor x = Tensor::matrix({{1}, {2}, {7}, {4}});
    const Tensor z = pool_regions(x, labels, 2);
    CHECK(z.at(0, 0) == 3.0);  // nodes 1 and 3 hold 2 and 4
    CHECK(z.at(1, 0) == 4.0);
    const std::uint32_t one[] = {0, 0, 0, 0};
    CHECK(pool_regions(x, one, 1).at(0, 0) == 3.5);
    const std::uint32_t empty[] = {0, 0, 0, 0};
    CHECK_THROWS(pool_regions(x, empty, 2));
    CHECK_THROWS(prototypes(empty, x, 2));

    std::mt19937_64 rng(30);
    const Tensor flat = random_points(9, 5, rng);
    const std::uint32_t lab[] = {0, 2, 1, 1, 0, 2, 2, 0, 1};
    const Tensor proto = prototypes(lab, flat, 3);
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(9, 3);
    for (int i = 0; i < 9; ++i) S(i, lab[i]) = 1.0;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(flat.data(), 9, 5);
    const Eigen::MatrixXd ref = (S.transpose() * S).inverse() * S.transpose() * X;
    for (int m = 0; m < 3; ++m)
        for (int c = 0; c < 5; ++c) CHECK(std::abs(ref(m, c) - proto.at(m, c)) < 1e-12);

    const std::uint32_t singles[] = {2, 0, 1};
    const Tensor three = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
    CHECK(prototypes(singles, three, 3) == Tensor::matrix({{3, 4}, {5, 6}, {1, 2}}));
}

TEST_CASE("adjusted rand index") {
    const int a[] = {0, 0, 1, 1, 2, 2};
    const int b[] = {5, 5, 3, 3, 9, 9};
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(1.0));
    const int c[] = {0, 1, 0, 1, 0, 1};
    CHECK(adjusted_rand_index(a, c) < 0.1);
}

TEST_CASE("pipeline recovers planted regions and is deterministic") {
    SyntheticSpec spec;
    spec.steps = 960;
    const SyntheticData d = generate_synthetic(spec);
    RegionConfig cfg;
    cfg.regions = 3;
    const RegionModel a = regionalize(d.series, cfg), b = regionalize(d.series, cfg);
    CHECK(adjusted_rand_index(a.labels, d.series.labels) == doctest::Approx(1.0));
    CHECK(a.labels == b.labels);
    CHECK(a.prototypes == b.prototypes);
    CHECK(RegionConfig{}.resolve_regions(48) == 10);
}

TEST_CASE("region file round trip and corruption") {
    SyntheticSpec spec;
    spec.steps = 200;
    const RegionModel m = regionalize(generate_synthetic(spec).series, RegionConfig{3});
    const auto bytes = encode_regions(m);
    const RegionModel back = decode_regions(bytes);
    CHECK(back.labels == m.labels);
    CHECK(back.prototypes == m.prototypes);
    CHECK(back.sigma == m.sigma);
    auto bad = bytes;
    bad[bad.size() / 2] ^= 1;
    CHECK_THROWS_AS(decode_regions(bad), FormatError);
}
