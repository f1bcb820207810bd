#include "nest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace nest {

namespace {

void check_sizes(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw std::invalid_argument(std::string(what) + ": " + std::to_string(a.size()) + " predictions vs " +
                                    std::to_string(b.size()) + " truth values");
    }
    if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
    check_sizes(pred, truth, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(truth[i] - pred[i]);
    return s / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    check_sizes(pred, truth, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = truth[i] - pred[i];
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

MapeResult mape(std::span<const double> pred, std::span<const double> truth) {
    check_sizes(pred, truth, "mape");
    MapeResult r;
    double s = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::abs(truth[i]) < kMapeMaskThreshold) {
            ++r.masked;
            continue;
        }
        s += std::abs((truth[i] - pred[i]) / truth[i]);
        ++used;
    }
    if (used) r.percent = 100.0 * s / static_cast<double>(used);
    return r;
}

MetricsReport metrics_report(std::span<const double> pred, std::span<const double> truth, std::size_t horizon,
                             std::size_t width, std::span<const std::size_t> steps) {
    check_sizes(pred, truth, "metrics_report");
    if (horizon == 0 || width == 0 || pred.size() % (horizon * width) != 0) {
        throw std::invalid_argument("metrics_report: data is not [samples, horizon, width]");
    }
    const std::size_t samples = pred.size() / (horizon * width);
    auto slice = [&](std::size_t step) {
        std::vector<double> p, t;
        p.reserve(samples * width);
        t.reserve(samples * width);
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t base = (s * horizon + step) * width;
            p.insert(p.end(), pred.begin() + static_cast<std::ptrdiff_t>(base), pred.begin() + static_cast<std::ptrdiff_t>(base + width));
            t.insert(t.end(), truth.begin() + static_cast<std::ptrdiff_t>(base), truth.begin() + static_cast<std::ptrdiff_t>(base + width));
        }
        MetricSlice m;
        m.step = step + 1;
        m.samples = p.size();
        m.mae = mae(p, t);
        m.rmse = rmse(p, t);
        const MapeResult mp = mape(p, t);
        m.mape = mp.percent;
        m.masked = mp.masked;
        return m;
    };
    MetricsReport report;
    for (std::size_t step : steps) {
        if (step >= 1 && step <= horizon) report.horizons.push_back(slice(step - 1));
    }
    report.average.step = 0;
    report.average.samples = pred.size();
    report.average.mae = mae(pred, truth);
    report.average.rmse = rmse(pred, truth);
    const MapeResult mp = mape(pred, truth);
    report.average.mape = mp.percent;
    report.average.masked = mp.masked;
    return report;
}

double interval_coverage(std::span<const double> low, std::span<const double> high, std::span<const double> truth) {
    check_sizes(low, truth, "coverage");
    check_sizes(high, truth, "coverage");
    std::size_t inside = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) inside += (truth[i] >= low[i] && truth[i] <= high[i]) ? 1 : 0;
    return static_cast<double>(inside) / static_cast<double>(truth.size());
}

double quantile_coverage(std::span<const std::vector<double>> forecasts, std::span<const double> levels,
                         std::span<const double> truth, double low, double high) {
    if (forecasts.size() != levels.size()) throw std::invalid_argument("quantile_coverage: one forecast per level required");
    if (low > high) throw std::invalid_argument("quantile_coverage: low level above high level");
    auto find = [&](double tau) -> const std::vector<double>& {
        for (std::size_t q = 0; q < levels.size(); ++q) {
            if (std::abs(levels[q] - tau) < 1e-12) return forecasts[q];
        }
        throw std::invalid_argument("quantile_coverage: level " + std::to_string(tau) + " not in forecast");
    };
    return interval_coverage(find(low), find(high), truth);
}

AttentionCost attention_cost(std::size_t nodes, std::size_t regions, std::size_t d, std::size_t layers,
                             std::size_t attn_dim, bool mlp) {
    if (nodes == 0 || regions == 0 || d == 0 || layers == 0) {
        throw std::invalid_argument("attention_cost: arguments must be positive");
    }
    const std::uint64_t N = nodes, M = regions, D = d, L = layers;
    const std::uint64_t A = attn_dim ? attn_dim : 2 * d;
    AttentionCost c;
    // Top-down: N queries over M keys; bottom-up: M queries over N keys. Each
    // direction forms scores (A wide) and mixes values (A wide).
    c.cross = L * (2 * N * M * A + 2 * M * N * A);
    // Per direction: query map on the query side, key and value maps on the
    // key side, output map back to d on the query side.
    const std::uint64_t per_layer_proj = (N * D * A + 2 * M * D * A + N * A * D) + (M * D * A + 2 * N * D * A + M * A * D);
    const std::uint64_t per_layer_mlp = mlp ? (N + M) * 4 * D * D : 0;
    c.projection = L * (per_layer_proj + per_layer_mlp);
    // Self-attention over N node tokens with the same projection widths.
    c.self_attention = L * (2 * N * N * A + 4 * N * D * A + (mlp ? 4 * N * D * D : 0));
    return c;
}

}  // namespace nest
