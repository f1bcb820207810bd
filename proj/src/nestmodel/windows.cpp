#include "nest/windows.hpp"

#include <stdexcept>
#include <string>

#include "nest/regionalize.hpp"

namespace nest {

const char* to_string(GuidanceMode mode) { return mode == GuidanceMode::future ? "future" : "past"; }

GuidanceMode guidance_mode_from_string(const std::string& text) {
    if (text == "future") return GuidanceMode::future;
    if (text == "past") return GuidanceMode::past;
    throw std::invalid_argument("unknown guidance mode '" + text + "' (expected future or past)");
}

WindowSource::WindowSource(const SeriesTensor& s, std::span<const std::uint32_t> labels, std::size_t regions)
    : series(&s), pooled(pool_series(s.values, labels, regions)) {}

std::int64_t guidance_start(std::int64_t origin, const ModelConfig& config, GuidanceMode mode) {
    return mode == GuidanceMode::future ? origin : origin - static_cast<std::int64_t>(config.patch);
}

std::vector<std::size_t> training_origins(const ModelConfig& config, GuidanceMode mode, TimeRange range) {
    const std::size_t L = config.lookback, P = config.patch;
    // History needs L steps before t; the guidance window starts at t (or t-P)
    // and the next-region target spans the P steps after it.
    const std::size_t lo = range.begin + std::max(L, mode == GuidanceMode::past ? P : std::size_t{0});
    const std::size_t tail = mode == GuidanceMode::future ? 2 * P : P;
    std::vector<std::size_t> out;
    for (std::size_t t = lo; t + tail <= range.end; ++t) out.push_back(t);
    return out;
}

namespace {

void copy_steps(const Tensor& values, std::size_t row, std::size_t steps_total, std::size_t channels,
                std::int64_t first, std::size_t count, double* dst) {
    if (first < 0 || static_cast<std::size_t>(first) + count > steps_total) {
        throw std::out_of_range("window steps [" + std::to_string(first) + ", " +
                                std::to_string(first + static_cast<std::int64_t>(count)) + ") outside series of " +
                                std::to_string(steps_total) + " steps");
    }
    const double* src = values.data() + (row * steps_total + static_cast<std::size_t>(first)) * channels;
    std::copy(src, src + count * channels, dst);
}

}  // namespace

Tensor history_block(const SeriesTensor& series, const ModelConfig& config, std::span<const std::size_t> origins) {
    const std::size_t N = config.nodes, C = config.channels, L = config.lookback, T = series.steps();
    if (series.nodes() != N || series.channels() != C) {
        throw std::invalid_argument("history_block: series shape " + shape_string(series.values.shape()) +
                                    " does not match the model");
    }
    Tensor x({origins.size() * N, L * C});
    for (std::size_t b = 0; b < origins.size(); ++b)
        for (std::size_t i = 0; i < N; ++i)
            copy_steps(series.values, i, T, C, static_cast<std::int64_t>(origins[b]) - static_cast<std::int64_t>(L), L,
                       x.data() + (b * N + i) * L * C);
    return x;
}

WindowBatch make_batch(const WindowSource& source, const ModelConfig& config, GuidanceMode mode,
                       std::span<const std::size_t> origins) {
    const SeriesTensor& s = *source.series;
    const std::size_t B = origins.size(), N = config.nodes, M = config.regions, C = config.channels,
                      P = config.patch, T = s.steps();
    if (source.pooled.shape() != Shape{M, T, C}) throw std::invalid_argument("make_batch: pooled series shape mismatch");
    WindowBatch w;
    w.input.x = history_block(s, config, origins);
    w.input.guidance = Tensor({B * M, P * C});
    w.node_target = Tensor({B * N, P * C});
    w.next_target = Tensor({B * M, P * C});
    w.boundary_target = Tensor({B * M, P * C});
    for (std::size_t b = 0; b < B; ++b) {
        const auto t = static_cast<std::int64_t>(origins[b]);
        const std::int64_t g = guidance_start(t, config, mode);
        w.input.origin.push_back(s.timestamp(0) + t);
        w.input.guidance_origin.push_back(s.timestamp(0) + g);
        for (std::size_t i = 0; i < N; ++i) copy_steps(s.values, i, T, C, t, P, w.node_target.data() + (b * N + i) * P * C);
        for (std::size_t m = 0; m < M; ++m) {
            const std::size_t row = (b * M + m) * P * C;
            copy_steps(source.pooled, m, T, C, g, P, w.input.guidance.data() + row);
            copy_steps(source.pooled, m, T, C, g, P, w.boundary_target.data() + row);
            copy_steps(source.pooled, m, T, C, g + static_cast<std::int64_t>(P), P, w.next_target.data() + row);
        }
    }
    return w;
}

Tensor pool_history(const Tensor& history, const ModelConfig& config, std::span<const std::uint32_t> labels) {
    const std::size_t N = config.nodes, M = config.regions, C = config.channels, L = config.lookback,
                      P = config.patch;
    if (P > L) throw std::invalid_argument("pool_history: patch longer than the look-back window");
    if (labels.size() != N) throw std::invalid_argument("pool_history: label count does not match nodes");
    if (history.cols() != L * C || history.rows() % N != 0) throw std::invalid_argument("pool_history: bad history shape");
    const std::size_t B = history.rows() / N;
    std::vector<double> counts(M, 0.0);
    for (std::uint32_t l : labels) {
        if (l >= M) throw std::invalid_argument("pool_history: label outside region range");
        counts[l] += 1.0;
    }
    Tensor out({B * M, P * C});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < N; ++i) {
            const double* src = history.data() + (b * N + i) * L * C + (L - P) * C;
            double* dst = out.data() + (b * M + labels[i]) * P * C;
            for (std::size_t k = 0; k < P * C; ++k) dst[k] += src[k] / counts[labels[i]];
        }
    }
    return out;
}

}  // namespace nest
