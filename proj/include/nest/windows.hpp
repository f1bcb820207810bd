#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nest/datakit.hpp"
#include "nest/model.hpp"

namespace nest {

/// Node series and their region means over the same time axis.
struct WindowSource {
    const SeriesTensor* series = nullptr;  // [N, T, C], already normalized
    Tensor pooled;                         // [M, T, C]

    WindowSource(const SeriesTensor& s, std::span<const std::uint32_t> labels, std::size_t regions);
};

struct WindowBatch {
    ForwardInput input;     // guidance holds the ground-truth region patch
    Tensor node_target;     // [B*N, P*C]
    Tensor next_target;     // [B*M, P*C]
    Tensor boundary_target; // [B*M, P*C]
};

/// First step of the guidance window for a forecast starting at `origin`.
std::int64_t guidance_start(std::int64_t origin, const ModelConfig& config, GuidanceMode mode);

/// Origins t whose history, guidance and both region targets lie inside
/// [range.begin, range.end).
std::vector<std::size_t> training_origins(const ModelConfig& config, GuidanceMode mode, TimeRange range);

WindowBatch make_batch(const WindowSource& source, const ModelConfig& config, GuidanceMode mode,
                       std::span<const std::size_t> origins);

/// History windows [B*N, L*C] ending just before each origin.
Tensor history_block(const SeriesTensor& series, const ModelConfig& config, std::span<const std::size_t> origins);

/// Region means of the last P steps of each history row block: [B*M, P*C].
Tensor pool_history(const Tensor& history, const ModelConfig& config, std::span<const std::uint32_t> labels);

}  // namespace nest
