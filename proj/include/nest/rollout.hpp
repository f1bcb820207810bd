#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nest/model.hpp"
#include "nest/windows.hpp"

namespace nest {

struct RolloutOptions {
    GuidanceMode mode = GuidanceMode::future;
    /// Region of every node; needed for past-mode guidance.
    std::vector<std::uint32_t> labels;
    /// Optional ground-truth guidance per iteration, each [B*M, P*C]. When
    /// present it replaces the predicted guidance (teacher-forced rollout).
    std::vector<Tensor> oracle_guidance;
};

struct RolloutResult {
    Tensor forecast;                  // [B*N, H*C]
    std::vector<Tensor> region_next;  // per iteration, median next-region patch [B*M, P*C]
    std::size_t forward_passes = 0;   // including the bootstrap pass
};

/// Forecasts H steps from each history block by chaining patches. `history`
/// is [B*N, L*C]; `origin` holds each sample's calendar step of the first
/// forecast step.
RolloutResult rollout(NestModel& model, const Tensor& history, const std::vector<std::int64_t>& origin,
                      std::size_t horizon, const RolloutOptions& options = {});

/// Raw-unit forecasts and truth for windows starting at `origins` of a series.
struct WindowForecasts {
    std::vector<double> pred;   // [S, H, N*C]
    std::vector<double> truth;  // [S, H, N*C]
    std::size_t horizon = 0;
    std::size_t width = 0;
};

/// Rolls out from every origin (batched), then maps forecasts and truth back
/// to raw units with `norm`. `normalized` must already be normalized with it.
WindowForecasts forecast_windows(NestModel& model, const SeriesTensor& normalized, const NormStats& norm,
                                 std::span<const std::size_t> origins, std::size_t horizon,
                                 const RolloutOptions& options = {}, std::size_t batch_size = 64);

/// Origins in [range.begin, range.end - horizon] spaced by `stride`, all with
/// a full look-back window inside the series.
std::vector<std::size_t> evaluation_origins(std::size_t lookback, TimeRange range, std::size_t horizon,
                                            std::size_t stride);

struct HorizonMae {
    std::size_t step = 0;  // 1-based
    double mae = 0.0;
};

/// MAE at each requested 1-based step offset over test windows.
std::vector<HorizonMae> long_horizon_eval(NestModel& model, const SeriesTensor& normalized, const NormStats& norm,
                                          TimeRange test, std::span<const std::size_t> steps,
                                          const RolloutOptions& options = {}, std::size_t stride = 1);

/// Repeat-last-observation forecasts for the same windows, raw units.
WindowForecasts persistence_forecasts(const SeriesTensor& raw, std::span<const std::size_t> origins,
                                      std::size_t horizon);

}  // namespace nest
