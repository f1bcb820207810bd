#include "nest/rollout.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "nest/metrics.hpp"

namespace nest {

namespace {

// Drops the oldest P steps of every row and appends the predicted patch.
Tensor slide(const Tensor& history, const Tensor& patch, std::size_t L, std::size_t P, std::size_t C) {
    Tensor out(history.shape());
    const std::size_t keep = L > P ? L - P : 0;
    for (std::size_t r = 0; r < history.rows(); ++r) {
        const double* h = history.data() + r * L * C;
        const double* p = patch.data() + r * P * C;
        double* dst = out.data() + r * L * C;
        std::copy(h + (L - keep) * C, h + L * C, dst);
        std::copy(p + (P - (L - keep)) * C, p + P * C, dst + keep * C);
    }
    return out;
}

}  // namespace

RolloutResult rollout(NestModel& model, const Tensor& history, const std::vector<std::int64_t>& origin,
                      std::size_t horizon, const RolloutOptions& options) {
    const ModelConfig& cfg = model.config();
    const std::size_t N = cfg.nodes, C = cfg.channels, P = cfg.patch, L = cfg.lookback, B = origin.size();
    if (horizon == 0) throw std::invalid_argument("rollout: horizon must be at least 1");
    if (B == 0) throw std::invalid_argument("rollout: empty batch");
    if (history.shape() != Shape{B * N, L * C}) {
        throw std::invalid_argument("rollout: history " + shape_string(history.shape()) + ", expected " +
                                    shape_string({B * N, L * C}));
    }
    if (options.mode == GuidanceMode::past && options.labels.size() != N) {
        throw std::invalid_argument("rollout: past guidance needs one region label per node");
    }
    const std::size_t iterations = (horizon + P - 1) / P;
    if (!options.oracle_guidance.empty() && options.oracle_guidance.size() < iterations) {
        throw std::invalid_argument("rollout: " + std::to_string(options.oracle_guidance.size()) +
                                    " oracle guidance patches for " + std::to_string(iterations) + " iterations");
    }
    const std::size_t med = cfg.median_index();

    RolloutResult result;
    result.forecast = Tensor({B * N, horizon * C});
    ForwardInput in;
    in.x = history;
    in.origin = origin;
    in.guidance_origin.resize(B);
    auto sync_guidance_origin = [&] {
        for (std::size_t b = 0; b < B; ++b) in.guidance_origin[b] = guidance_start(in.origin[b], cfg, options.mode);
    };
    sync_guidance_origin();

    Tensor guidance;
    if (options.mode == GuidanceMode::future && options.oracle_guidance.empty()) {
        // Bootstrap: zero masks in, boundary decoder's median out.
        guidance = predict(model, in).boundary[med];
        ++result.forward_passes;
    }
    for (std::size_t k = 0; k < iterations; ++k) {
        if (!options.oracle_guidance.empty()) {
            guidance = options.oracle_guidance[k];
        } else if (options.mode == GuidanceMode::past) {
            guidance = pool_history(in.x, cfg, options.labels);
        }
        in.guidance = guidance;
        Forecast f = predict(model, in);
        ++result.forward_passes;
        const std::size_t take = std::min(P, horizon - k * P);
        for (std::size_t r = 0; r < B * N; ++r) {
            const double* src = f.node.data() + r * P * C;
            std::copy(src, src + take * C, result.forecast.data() + r * horizon * C + k * P * C);
        }
        result.region_next.push_back(f.next[med]);
        guidance = std::move(f.next[med]);
        in.x = slide(in.x, f.node, L, P, C);
        for (auto& o : in.origin) o += static_cast<std::int64_t>(P);
        sync_guidance_origin();
    }
    return result;
}

std::vector<std::size_t> evaluation_origins(std::size_t lookback, TimeRange range, std::size_t horizon,
                                            std::size_t stride) {
    if (stride == 0) throw std::invalid_argument("evaluation_origins: stride must be positive");
    if (range.size() < horizon) {
        throw std::invalid_argument("evaluation range of " + std::to_string(range.size()) +
                                    " steps is shorter than horizon " + std::to_string(horizon));
    }
    std::vector<std::size_t> out;
    for (std::size_t t = std::max(range.begin, lookback); t + horizon <= range.end; t += stride) out.push_back(t);
    return out;
}

WindowForecasts forecast_windows(NestModel& model, const SeriesTensor& normalized, const NormStats& norm,
                                 std::span<const std::size_t> origins, std::size_t horizon,
                                 const RolloutOptions& options, std::size_t batch_size) {
    const ModelConfig& cfg = model.config();
    const std::size_t N = cfg.nodes, C = cfg.channels, T = normalized.steps();
    if (batch_size == 0) throw std::invalid_argument("forecast_windows: batch size must be positive");
    if (norm.mean.shape() != Shape{N, C}) throw std::invalid_argument("forecast_windows: normalizer shape mismatch");
    WindowForecasts out;
    out.horizon = horizon;
    out.width = N * C;
    out.pred.resize(origins.size() * horizon * N * C);
    out.truth.resize(out.pred.size());
    for (std::size_t start = 0; start < origins.size(); start += batch_size) {
        const auto chunk = origins.subspan(start, std::min(batch_size, origins.size() - start));
        std::vector<std::int64_t> stamps;
        for (std::size_t t : chunk) {
            if (t + horizon > T) throw std::out_of_range("forecast_windows: horizon runs past the series end");
            stamps.push_back(normalized.timestamp(t));
        }
        const RolloutResult r = rollout(model, history_block(normalized, cfg, chunk), stamps, horizon, options);
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const std::size_t s = start + b;
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t h = 0; h < horizon; ++h)
                    for (std::size_t c = 0; c < C; ++c) {
                        const double sd = norm.stddev.at(i, c), mu = norm.mean.at(i, c);
                        const std::size_t dst = ((s * horizon + h) * N + i) * C + c;
                        out.pred[dst] = r.forecast[(b * N + i) * horizon * C + h * C + c] * sd + mu;
                        out.truth[dst] = normalized.at(i, chunk[b] + h, c) * sd + mu;
                    }
        }
    }
    return out;
}

std::vector<HorizonMae> long_horizon_eval(NestModel& model, const SeriesTensor& normalized, const NormStats& norm,
                                          TimeRange test, std::span<const std::size_t> steps,
                                          const RolloutOptions& options, std::size_t stride) {
    if (steps.empty()) throw std::invalid_argument("long_horizon_eval: no horizons requested");
    const std::size_t horizon = *std::max_element(steps.begin(), steps.end());
    if (*std::min_element(steps.begin(), steps.end()) == 0) throw std::invalid_argument("long_horizon_eval: steps are 1-based");
    const auto origins = evaluation_origins(model.config().lookback, test, horizon, stride);
    if (origins.empty()) throw std::invalid_argument("long_horizon_eval: no test windows fit the horizon");
    const WindowForecasts f = forecast_windows(model, normalized, norm, origins, horizon, options);
    std::vector<HorizonMae> out;
    for (std::size_t step : steps) {
        std::vector<double> p, t;
        for (std::size_t s = 0; s < origins.size(); ++s) {
            const std::size_t base = (s * horizon + step - 1) * f.width;
            p.insert(p.end(), f.pred.begin() + static_cast<std::ptrdiff_t>(base),
                     f.pred.begin() + static_cast<std::ptrdiff_t>(base + f.width));
            t.insert(t.end(), f.truth.begin() + static_cast<std::ptrdiff_t>(base),
                     f.truth.begin() + static_cast<std::ptrdiff_t>(base + f.width));
        }
        out.push_back({step, mae(p, t)});
    }
    return out;
}

WindowForecasts persistence_forecasts(const SeriesTensor& raw, std::span<const std::size_t> origins,
                                      std::size_t horizon) {
    const std::size_t N = raw.nodes(), C = raw.channels();
    WindowForecasts out;
    out.horizon = horizon;
    out.width = N * C;
    out.pred.resize(origins.size() * horizon * N * C);
    out.truth.resize(out.pred.size());
    for (std::size_t s = 0; s < origins.size(); ++s) {
        const std::size_t t = origins[s];
        if (t == 0 || t + horizon > raw.steps()) throw std::out_of_range("persistence_forecasts: window outside series");
        for (std::size_t h = 0; h < horizon; ++h)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t dst = ((s * horizon + h) * N + i) * C + c;
                    out.pred[dst] = raw.at(i, t - 1, c);
                    out.truth[dst] = raw.at(i, t + h, c);
                }
    }
    return out;
}

}  // namespace nest
