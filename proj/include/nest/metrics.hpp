#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nest {

double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);

/// Entries with |truth| below this are excluded from MAPE and counted.
inline constexpr double kMapeMaskThreshold = 1e-4;

struct MapeResult {
    std::optional<double> percent;  // empty when every entry was masked
    std::size_t masked = 0;
};
MapeResult mape(std::span<const double> pred, std::span<const double> truth);

struct MetricSlice {
    std::size_t step = 0;  // 1-based horizon step, 0 for the all-step average
    std::size_t samples = 0;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape;
    std::size_t masked = 0;
};

struct MetricsReport {
    std::vector<MetricSlice> horizons;
    MetricSlice average;
};

/// `pred` and `truth` are [samples, horizon, width] laid out row-major, i.e.
/// every sample holds `horizon` consecutive steps of `width` values.
/// Reports the requested 1-based steps (those within the horizon) plus the
/// average over all steps.
MetricsReport metrics_report(std::span<const double> pred, std::span<const double> truth, std::size_t horizon,
                             std::size_t width, std::span<const std::size_t> steps);

/// Fraction of truth values inside [low, high] elementwise.
double interval_coverage(std::span<const double> low, std::span<const double> high, std::span<const double> truth);

/// Coverage of the band between two quantile levels of a forecast that holds
/// one prediction array per level in `levels`. Throws if a level is missing.
double quantile_coverage(std::span<const std::vector<double>> forecasts, std::span<const double> levels,
                         std::span<const double> truth, double low, double high);

/// Multiply-add counts of one forward pass through the cross-scale stack.
struct AttentionCost {
    std::uint64_t cross = 0;       // QK^T and PV products, both directions
    std::uint64_t projection = 0;  // Q/K/V/output maps and MLPs
    std::uint64_t total() const { return cross + projection; }
    /// Node-level full self-attention reference with the same projections.
    std::uint64_t self_attention = 0;
};

/// Closed-form cost for `layers` cross-scale layers over N node tokens and M
/// region tokens with embedding width d and attention width `attn_dim`
/// (0 selects 2d). With `mlp`, each direction adds a d -> 2d -> d MLP.
AttentionCost attention_cost(std::size_t nodes, std::size_t regions, std::size_t d, std::size_t layers,
                             std::size_t attn_dim = 0, bool mlp = true);

}  // namespace nest
