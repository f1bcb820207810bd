#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nest/datakit.hpp"
#include "nest/metrics.hpp"
#include "nest/model.hpp"
#include "nest/regionalize.hpp"
#include "nest/rollout.hpp"
#include "nest/trainer.hpp"

namespace nest {

/// Settings for one split -> cluster -> train -> evaluate run. Node, region
/// and channel counts of `model` are filled in from the data.
struct ExperimentSpec {
    SplitSpec split;
    RegionConfig region;
    ModelConfig model;
    TrainConfig train;
    std::size_t horizon = 12;
    std::size_t eval_stride = 1;
    std::vector<std::size_t> report_steps{3, 6, 12};
};

struct ExperimentResult {
    RegionModel regions;
    Checkpoint checkpoint;
    TrainResult training;
    MetricsReport test;
    MetricsReport persistence;
    double seconds = 0.0;
};

/// Region and model settings resolved against a dataset.
ModelConfig resolve_model_config(const ModelConfig& base, const SeriesTensor& data, std::size_t regions);

struct TrainedModel {
    Checkpoint checkpoint;
    TrainResult training;
};

/// Fits the normalizer on the train split and trains against given regions.
TrainedModel train_model(const SeriesTensor& raw, const RegionModel& regions, const ExperimentSpec& spec,
                         const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Train and test ranges, each long enough for a look-back plus two patches.
SplitRanges experiment_ranges(const SeriesTensor& raw, const ExperimentSpec& spec);

ExperimentResult run_experiment(const SeriesTensor& raw, const ExperimentSpec& spec,
                                const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Test-split metrics of a trained checkpoint, in raw units, rolled out with
/// the checkpoint's guidance mode.
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const SeriesTensor& raw, std::span<const std::uint32_t> labels,
                                  TimeRange test, std::size_t horizon, std::size_t stride,
                                  std::span<const std::size_t> steps);

MetricsReport persistence_report(const SeriesTensor& raw, TimeRange test, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride, std::span<const std::size_t> steps);

}  // namespace nest
