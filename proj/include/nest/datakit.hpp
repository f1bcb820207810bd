#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nest/tensor.hpp"

namespace nest {

/// Multivariate sensor series: values [N, T, C] plus calendar metadata.
struct SeriesTensor {
    Tensor values;  // [N, T, C]
    std::uint32_t steps_per_day = 96;
    std::uint32_t days_per_week = 7;
    /// Calendar step of the first sample; step 0 is the first slot of a week.
    std::uint32_t start_offset = 0;
    /// Planted region per node, synthetic data only.
    std::vector<int> labels;

    SeriesTensor() = default;
    SeriesTensor(std::size_t nodes, std::size_t steps, std::size_t channels);

    std::size_t nodes() const { return values.shape().at(0); }
    std::size_t steps() const { return values.shape().at(1); }
    std::size_t channels() const { return values.shape().at(2); }

    double& at(std::size_t i, std::size_t t, std::size_t c) {
        return values[(i * steps() + t) * channels() + c];
    }
    double at(std::size_t i, std::size_t t, std::size_t c) const {
        return values[(i * steps() + t) * channels() + c];
    }

    /// Calendar step of sample t.
    std::int64_t timestamp(std::size_t t) const { return static_cast<std::int64_t>(start_offset) + static_cast<std::int64_t>(t); }

    /// Time steps [begin, end) with the calendar offset carried along.
    SeriesTensor slice(std::size_t begin, std::size_t end) const;
    /// Values as [N, T*C], one flattened row per node.
    Tensor flat() const;
    void validate() const;
};

struct SyntheticSpec {
    std::size_t n_regions = 3;
    std::size_t nodes_per_region = 16;
    std::size_t steps = 2880;
    std::size_t channels = 1;
    std::uint32_t steps_per_day = 96;
    double noise_sigma = 1.0;
    /// Scale of the regional trends; region levels are spaced by this amount.
    double signal_scale = 5.0;
    /// Standard deviation of the constant per-node offsets.
    double offset_scale = 0.5;
    /// Expected number of regime shifts per region per day (0 disables).
    double shift_rate = 0.0;
    /// Standard deviation of each regime shift's level jump.
    double shift_scale = 0.0;
    /// Fraction of nodes per region that see each shift early.
    double lead_fraction = 0.0;
    /// How many steps early the leading nodes see a shift.
    std::size_t lead_steps = 0;
    std::uint64_t seed = 7;
};

struct SyntheticData {
    SeriesTensor series;
    Tensor trends;                // [n_regions, T, C], shared by every node of the region
    std::vector<double> offsets;  // per node
};

/// Planted-region generator: daily and weekly sinusoids per region, optional
/// regime shifts, constant node offsets and i.i.d. Gaussian node noise.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct SplitSpec {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

struct TimeRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct SplitRanges {
    TimeRange train, val, test;
};

/// Chronological, contiguous, disjoint ranges covering [0, steps). Each range
/// must hold at least `min_length` steps.
SplitRanges split_ranges(std::size_t steps, const SplitSpec& spec, std::size_t min_length = 1);

struct Splits {
    SeriesTensor train, val, test;
    SplitRanges ranges;
};

Splits chronological_split(const SeriesTensor& data, const SplitSpec& spec, std::size_t min_length = 1);

/// Per-node, per-channel z-score statistics, each [N, C].
struct NormStats {
    Tensor mean;
    Tensor stddev;
};

/// Statistics from `train`; std is floored at 1e-8.
NormStats fit_normalizer(const SeriesTensor& train);
SeriesTensor normalize(const SeriesTensor& data, const NormStats& stats);
SeriesTensor denormalize(const SeriesTensor& data, const NormStats& stats);
/// In-place variants over a raw [N, T, C] tensor.
void normalize_values(Tensor& values, const NormStats& stats);
void denormalize_values(Tensor& values, const NormStats& stats);

/// Layout: "NESTDS1\0", u32 N, T, C, steps_per_day, start_offset, row-major
/// little-endian f64 values, then the FNV-1a 64 checksum of all prior bytes.
void save_dataset(const SeriesTensor& data, const std::filesystem::path& path);
SeriesTensor load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const SeriesTensor& data);
SeriesTensor decode_dataset(std::vector<std::uint8_t> bytes);

constexpr std::size_t kDatasetHeaderBytes = 8 + 5 * 4;

}  // namespace nest
