#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "nest/metrics.hpp"

using namespace nest;

TEST_CASE("metric hand examples") {
    const std::vector<double> y{1, 2}, p{2, 4};
    CHECK(mae(p, y) == 1.5);
    CHECK(rmse(p, y) == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
    CHECK(*mape(p, y).percent == doctest::Approx(100.0));
    CHECK(*mape(std::vector<double>{1, 3}, std::vector<double>{2, 4}).percent == doctest::Approx(37.5));
    CHECK(mae(y, y) == 0.0);
    CHECK(rmse(y, y) == 0.0);
    CHECK(*mape(y, y).percent == 0.0);
    CHECK_THROWS(mae(std::vector<double>{1}, y));
}

TEST_CASE("mape masks near-zero truth and reports all-masked as undefined") {
    const std::vector<double> y{0.0, 2.0, 5e-5}, p{1.0, 3.0, 1.0};
    const MapeResult r = mape(p, y);
    CHECK(r.masked == 2);
    CHECK(*r.percent == doctest::Approx(50.0));
    const std::vector<double> zeros{0.0, 0.0};
    CHECK_FALSE(mape(std::vector<double>{1, 1}, zeros).percent.has_value());
}

TEST_CASE("homogeneity under scaling") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.5, 5.0);
    std::vector<double> y(50), p(50), ys(50), ps(50);
    for (std::size_t i = 0; i < 50; ++i) {
        y[i] = u(rng);
        p[i] = u(rng);
        ys[i] = 3.0 * y[i];
        ps[i] = 3.0 * p[i];
    }
    CHECK(mae(ps, ys) == doctest::Approx(3.0 * mae(p, y)));
    CHECK(rmse(ps, ys) == doctest::Approx(3.0 * rmse(p, y)));
    CHECK(*mape(ps, ys).percent == doctest::Approx(*mape(p, y).percent));
}

TEST_CASE("report slices by horizon step") {
    // Two samples, horizon 3, width 2.
    std::vector<double> truth(12, 1.0), pred(12, 1.0);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t w = 0; w < 2; ++w) pred[(s * 3 + 2) * 2 + w] = 3.0;
    const std::size_t steps[] = {1, 3, 12};
    const MetricsReport r = metrics_report(pred, truth, 3, 2, steps);
    REQUIRE(r.horizons.size() == 2);
    CHECK(r.horizons[0].mae == 0.0);
    CHECK(r.horizons[1].step == 3);
    CHECK(r.horizons[1].mae == 2.0);
    CHECK(r.horizons[1].samples == 4);
    CHECK(r.average.mae == doctest::Approx(2.0 / 3.0));
    CHECK(r.average.rmse >= r.average.mae);
}

TEST_CASE("quantile coverage") {
    const std::vector<std::vector<double>> f{{0, 0, 0, 0}, {1, 2, 3, 4}, {2, 4, 6, 8}};
    const double levels[] = {0.1, 0.5, 0.9};
    const std::vector<double> truth{1, 2, 3, 4};
    CHECK(quantile_coverage(f, levels, truth, 0.1, 0.9) == 1.0);
    CHECK(quantile_coverage(f, levels, truth, 0.5, 0.5) == 1.0);
    const std::vector<double> off{1, 2.5, 3, 9};
    CHECK(quantile_coverage(f, levels, off, 0.5, 0.5) == 0.5);
    CHECK(quantile_coverage(f, levels, off, 0.1, 0.9) == 0.75);
    CHECK_THROWS(quantile_coverage(f, levels, truth, 0.2, 0.9));
    CHECK_THROWS(quantile_coverage(f, levels, truth, 0.9, 0.1));
}

TEST_CASE("attention cost closed form") {
    const AttentionCost a = attention_cost(1024, 64, 32, 2), b = attention_cost(2048, 64, 32, 2);
    CHECK(b.cross == 2 * a.cross);
    const AttentionCost big = attention_cost(2048, 410, 32, 2, 0, false);
    const double ratio = static_cast<double>(big.cross) / static_cast<double>(2 * 2048ull * 2048ull * 64ull * 2ull);
    CHECK(ratio == doctest::Approx(2.0 * 410.0 / 2048.0));
    const AttentionCost eq = attention_cost(256, 256, 16, 1);
    const double r = static_cast<double>(eq.total()) / static_cast<double>(eq.self_attention);
    CHECK(r > 0.5);
    CHECK(r < 4.0);
    CHECK_THROWS(attention_cost(0, 1, 1, 1));
}
