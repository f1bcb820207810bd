#include "nest/pipeline.hpp"

#include <chrono>
#include <stdexcept>

namespace nest {

ModelConfig resolve_model_config(const ModelConfig& base, const SeriesTensor& data, std::size_t regions) {
    ModelConfig c = base;
    c.nodes = data.nodes();
    c.channels = data.channels();
    c.regions = regions;
    c.steps_per_day = data.steps_per_day;
    c.days_per_week = data.days_per_week;
    c.validate();
    return c;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const SeriesTensor& raw, std::span<const std::uint32_t> labels,
                                  TimeRange test, std::size_t horizon, std::size_t stride,
                                  std::span<const std::size_t> steps) {
    NestModel model(ckpt.config, ckpt.params);
    const SeriesTensor normalized = normalize(raw, ckpt.norm);
    RolloutOptions opts;
    opts.mode = ckpt.guidance;
    opts.labels.assign(labels.begin(), labels.end());
    const auto origins = evaluation_origins(ckpt.config.lookback, test, horizon, stride);
    if (origins.empty()) throw std::invalid_argument("evaluate: no test window fits the horizon");
    const WindowForecasts f = forecast_windows(model, normalized, ckpt.norm, origins, horizon, opts);
    return metrics_report(f.pred, f.truth, horizon, f.width, steps);
}

MetricsReport persistence_report(const SeriesTensor& raw, TimeRange test, std::size_t lookback, std::size_t horizon,
                                 std::size_t stride, std::span<const std::size_t> steps) {
    const auto origins = evaluation_origins(lookback, test, horizon, stride);
    if (origins.empty()) throw std::invalid_argument("persistence: no test window fits the horizon");
    const WindowForecasts f = persistence_forecasts(raw, origins, horizon);
    return metrics_report(f.pred, f.truth, horizon, f.width, steps);
}

SplitRanges experiment_ranges(const SeriesTensor& raw, const ExperimentSpec& spec) {
    return split_ranges(raw.steps(), spec.split, spec.model.lookback + 2 * spec.model.patch);
}

TrainedModel train_model(const SeriesTensor& raw, const RegionModel& regions, const ExperimentSpec& spec,
                         const std::function<void(const EpochRecord&)>& on_epoch) {
    raw.validate();
    if (regions.nodes != raw.nodes())
        throw std::invalid_argument("train: region file covers " + std::to_string(regions.nodes) + " nodes, data has " +
                                    std::to_string(raw.nodes()));
    const SplitRanges ranges = experiment_ranges(raw, spec);
    TrainedModel out;
    out.checkpoint.norm = fit_normalizer(raw.slice(ranges.train.begin, ranges.train.end));
    out.checkpoint.config = resolve_model_config(spec.model, raw, regions.regions);
    out.checkpoint.seed = spec.train.seed;
    out.checkpoint.guidance = spec.train.guidance;
    NestModel model(out.checkpoint.config, spec.train.seed);
    const SeriesTensor normalized = normalize(raw, out.checkpoint.norm);
    out.training = train_loop(model, normalized, regions.labels, ranges, spec.train, on_epoch);
    out.checkpoint.params = model.params();
    out.checkpoint.step = out.training.steps;
    return out;
}

ExperimentResult run_experiment(const SeriesTensor& raw, const ExperimentSpec& spec,
                                const std::function<void(const EpochRecord&)>& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    raw.validate();
    ExperimentResult out;
    const SplitRanges ranges = experiment_ranges(raw, spec);
    out.regions = regionalize(raw.slice(ranges.train.begin, ranges.train.end), spec.region);
    TrainedModel trained = train_model(raw, out.regions, spec, on_epoch);
    out.checkpoint = std::move(trained.checkpoint);
    out.training = std::move(trained.training);

    out.test = evaluate_checkpoint(out.checkpoint, raw, out.regions.labels, ranges.test, spec.horizon,
                                   spec.eval_stride, spec.report_steps);
    out.persistence = persistence_report(raw, ranges.test, spec.model.lookback, spec.horizon, spec.eval_stride,
                                         spec.report_steps);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace nest
