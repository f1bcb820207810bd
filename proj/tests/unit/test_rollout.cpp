#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <random>

#include "nest/metrics.hpp"
#include "nest/rollout.hpp"
#include "nest/trainer.hpp"

using namespace nest;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.nodes = 6;
    c.regions = 2;
    c.lookback = 8;
    c.patch = 4;
    c.embed_dim = 8;
    c.layers = 1;
    c.steps_per_day = 24;
    return c;
}

Tensor random_history(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Tensor t({batch * c.nodes, c.lookback * c.channels});
    for (double& v : t.values()) v = n(rng);
    return t;
}

std::vector<std::uint32_t> labels_for(const ModelConfig& c) {
    std::vector<std::uint32_t> l(c.nodes);
    for (std::size_t i = 0; i < c.nodes; ++i) l[i] = static_cast<std::uint32_t>(i % c.regions);
    return l;
}

}  // namespace

TEST_CASE("rollout length and iteration count") {
    const ModelConfig c = small_config();
    NestModel model(c, 1);
    const Tensor hist = random_history(c, 2, 3);
    const std::vector<std::int64_t> origin{30, 41};
    for (std::size_t h : {4u, 7u, 12u, 48u}) {
        const RolloutResult r = rollout(model, hist, origin, h);
        CHECK(r.forecast.shape() == Shape{2 * c.nodes, h});
        const std::size_t iterations = (h + c.patch - 1) / c.patch;
        CHECK(r.region_next.size() == iterations);
        CHECK(r.forward_passes == iterations + 1);
        for (double v : r.forecast.values()) CHECK(std::isfinite(v));
    }
    CHECK(rollout(model, hist, origin, c.patch).forward_passes == 2);
    CHECK_THROWS_AS(rollout(model, hist, origin, 0), std::invalid_argument);
}

TEST_CASE("rollout prefixes agree and repeat exactly") {
    const ModelConfig c = small_config();
    NestModel model(c, 2);
    const Tensor hist = random_history(c, 1, 9);
    const RolloutResult short_r = rollout(model, hist, {5}, c.patch);
    const RolloutResult long_r = rollout(model, hist, {5}, 20);
    for (std::size_t i = 0; i < c.nodes; ++i)
        for (std::size_t s = 0; s < c.patch; ++s) CHECK(short_r.forecast.at(i, s) == long_r.forecast.at(i, s));
    CHECK(rollout(model, hist, {5}, 20).forecast == long_r.forecast);
}

TEST_CASE("batched rollout equals per-sample rollout") {
    const ModelConfig c = small_config();
    NestModel model(c, 4);
    const Tensor hist = random_history(c, 3, 1);
    const std::vector<std::int64_t> origin{2, 19, 77};
    const RolloutResult all = rollout(model, hist, origin, 10);
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor one({c.nodes, c.lookback});
        for (std::size_t i = 0; i < c.nodes; ++i)
            for (std::size_t j = 0; j < c.lookback; ++j) one.at(i, j) = hist.at(b * c.nodes + i, j);
        const RolloutResult r = rollout(model, one, {origin[b]}, 10);
        for (std::size_t i = 0; i < c.nodes; ++i)
            for (std::size_t s = 0; s < 10; ++s)
                CHECK(r.forecast.at(i, s) == doctest::Approx(all.forecast.at(b * c.nodes + i, s)).epsilon(1e-12));
    }
}

TEST_CASE("past-mode rollout needs labels and skips the bootstrap") {
    const ModelConfig c = small_config();
    NestModel model(c, 5);
    const Tensor hist = random_history(c, 1, 2);
    RolloutOptions opts;
    opts.mode = GuidanceMode::past;
    CHECK_THROWS(rollout(model, hist, {3}, 8, opts));
    opts.labels = labels_for(c);
    const RolloutResult r = rollout(model, hist, {3}, 8, opts);
    CHECK(r.forward_passes == 2);
}

TEST_CASE("zero model on constant data is exact") {
    const ModelConfig c = small_config();
    NestModel model(c, 6);
    for (auto& p : model.params()) p.value.fill(0.0);
    SeriesTensor s(c.nodes, 200, 1);
    s.steps_per_day = c.steps_per_day;
    s.values.fill(3.0);
    for (std::size_t i = 0; i < c.nodes; ++i)
        for (std::size_t t = 0; t < 200; ++t) s.at(i, t, 0) = 3.0 + static_cast<double>(i) + 0.0 * t;
    // Normalized constant series are all zero, which the zero model predicts.
    NormStats norm = fit_normalizer(s);
    const SeriesTensor normalized = normalize(s, norm);
    const auto origins = evaluation_origins(c.lookback, {100, 200}, 12, 5);
    const WindowForecasts f = forecast_windows(model, normalized, norm, origins, 12);
    CHECK(mae(f.pred, f.truth) == doctest::Approx(0.0));
    const std::vector<std::size_t> steps{3, 12};
    for (const HorizonMae& h : long_horizon_eval(model, normalized, norm, {100, 200}, steps, {}, 5))
        CHECK(h.mae == doctest::Approx(0.0));
}

TEST_CASE("evaluation origins stay inside the range") {
    const auto o = evaluation_origins(8, {20, 60}, 12, 3);
    REQUIRE_FALSE(o.empty());
    CHECK(o.front() == 20);
    CHECK(o.back() + 12 <= 60);
    CHECK(evaluation_origins(8, {0, 30}, 12, 1).front() == 8);
    CHECK_THROWS_AS(evaluation_origins(8, {20, 25}, 12, 1), std::invalid_argument);
}

TEST_CASE("long-horizon evaluation agrees with a direct MAE") {
    SyntheticSpec spec;
    spec.n_regions = 2;
    spec.nodes_per_region = 3;
    spec.steps = 400;
    spec.steps_per_day = 24;
    const SeriesTensor raw = generate_synthetic(spec).series;
    const ModelConfig c = small_config();
    NestModel model(c, 8);
    const NormStats norm = fit_normalizer(raw.slice(0, 240));
    const SeriesTensor normalized = normalize(raw, norm);
    const TimeRange test{320, 400};
    const std::vector<std::size_t> steps{1, 5, 16};
    const auto origins = evaluation_origins(c.lookback, test, 16, 2);
    const WindowForecasts f = forecast_windows(model, normalized, norm, origins, 16);
    const auto h = long_horizon_eval(model, normalized, norm, test, steps, {}, 2);
    REQUIRE(h.size() == 3);
    for (const HorizonMae& e : h) {
        std::vector<double> p, t;
        for (std::size_t s = 0; s < origins.size(); ++s)
            for (std::size_t w = 0; w < f.width; ++w) {
                const std::size_t k = (s * f.horizon + e.step - 1) * f.width + w;
                p.push_back(f.pred[k]);
                t.push_back(f.truth[k]);
            }
        CHECK(e.mae == doctest::Approx(mae(p, t)));
    }
}

TEST_CASE("persistence repeats the last observation") {
    SeriesTensor s(2, 30, 1);
    for (std::size_t t = 0; t < 30; ++t) {
        s.at(0, t, 0) = static_cast<double>(t);
        s.at(1, t, 0) = -static_cast<double>(t);
    }
    const std::vector<std::size_t> origins{10};
    const WindowForecasts f = persistence_forecasts(s, origins, 3);
    CHECK(f.pred == std::vector<double>{9, -9, 9, -9, 9, -9});
    CHECK(f.truth == std::vector<double>{10, -10, 11, -11, 12, -12});
}

TEST_CASE("oracle guidance beats self-guidance on trained models") {
    int wins = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SyntheticSpec spec;
        spec.n_regions = 2;
        spec.nodes_per_region = 4;
        spec.steps = 720;
        spec.steps_per_day = 24;
        spec.noise_sigma = 0.3;
        spec.shift_rate = 1.0;
        spec.shift_scale = 3.0;
        spec.seed = seed;
        const SeriesTensor raw = generate_synthetic(spec).series;
        const SplitRanges ranges = split_ranges(raw.steps(), SplitSpec{});
        const NormStats norm = fit_normalizer(raw.slice(ranges.train.begin, ranges.train.end));
        const SeriesTensor normalized = normalize(raw, norm);
        std::vector<std::uint32_t> labels;
        for (int l : raw.labels) labels.push_back(static_cast<std::uint32_t>(l));
        ModelConfig c = small_config();
        c.nodes = 8;
        NestModel model(c, seed);
        TrainConfig tc;
        tc.epochs = 4;
        tc.learning_rate = 3e-3;
        tc.windows_per_epoch = 128;
        tc.batch_size = 16;
        tc.val_stride = 6;
        tc.seed = seed;
        train_loop(model, normalized, labels, ranges, tc);

        const auto origins = evaluation_origins(c.lookback, ranges.test, 2 * c.patch, 3);
        const WindowSource source(normalized, labels, c.regions);
        const WindowBatch batch = make_batch(source, c, GuidanceMode::future, origins);
        std::vector<std::int64_t> origin(origins.begin(), origins.end());
        RolloutOptions self;
        const RolloutResult r_self = rollout(model, batch.input.x, origin, c.patch, self);
        RolloutOptions oracle;
        oracle.oracle_guidance = {batch.input.guidance};
        const RolloutResult r_oracle = rollout(model, batch.input.x, origin, c.patch, oracle);
        const double e_self = mae(r_self.forecast.values(), batch.node_target.values());
        const double e_oracle = mae(r_oracle.forecast.values(), batch.node_target.values());
        if (e_oracle <= e_self) ++wins;
    }
    CHECK(wins == 5);
}
