#include "nest/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "nest/binary_io.hpp"

namespace nest {

namespace {
constexpr std::string_view kDatasetMagic{"NESTDS1\0", 8};
}

SeriesTensor::SeriesTensor(std::size_t nodes, std::size_t steps, std::size_t channels)
    : values({nodes, steps, channels}, 0.0) {}

void SeriesTensor::validate() const {
    if (values.rank() != 3 || nodes() == 0 || steps() == 0 || channels() == 0) {
        throw std::invalid_argument("series: values must be a non-empty [N, T, C] tensor, got " +
                                    shape_string(values.shape()));
    }
    if (steps_per_day == 0 || days_per_week == 0) throw std::invalid_argument("series: calendar extents must be positive");
    if (!labels.empty() && labels.size() != nodes()) throw std::invalid_argument("series: one label per node required");
}

SeriesTensor SeriesTensor::slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > steps()) {
        throw std::out_of_range("series: slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + std::to_string(steps()) + " steps");
    }
    SeriesTensor out(nodes(), end - begin, channels());
    const std::size_t c = channels();
    for (std::size_t i = 0; i < nodes(); ++i) {
        const double* src = values.data() + (i * steps() + begin) * c;
        std::copy(src, src + (end - begin) * c, out.values.data() + i * (end - begin) * c);
    }
    out.steps_per_day = steps_per_day;
    out.days_per_week = days_per_week;
    out.start_offset = static_cast<std::uint32_t>(start_offset + begin);
    out.labels = labels;
    return out;
}

Tensor SeriesTensor::flat() const { return values.reshaped({nodes(), steps() * channels()}); }

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n_regions == 0 || spec.nodes_per_region == 0 || spec.steps == 0 || spec.channels == 0 ||
        spec.steps_per_day == 0 || spec.noise_sigma < 0.0) {
        throw std::invalid_argument("generate_synthetic: sizes must be positive and noise non-negative");
    }
    const std::size_t R = spec.n_regions;
    const std::size_t T = spec.steps;
    const std::size_t C = spec.channels;
    const std::size_t N = R * spec.nodes_per_region;
    const double day = static_cast<double>(spec.steps_per_day);
    const double two_pi = 2.0 * std::numbers::pi;

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SyntheticData out;
    out.trends = Tensor({R, T, C});
    std::vector<std::vector<double>> regimes;
    for (std::size_t m = 0; m < R; ++m) {
        const double level = spec.signal_scale * (static_cast<double>(m) - 0.5 * static_cast<double>(R - 1));
        const double daily_amp = spec.signal_scale * (0.5 + 0.5 * unit(rng));
        const double daily_phase = two_pi * unit(rng);
        const double weekly_amp = 0.3 * spec.signal_scale * (0.5 + 0.5 * unit(rng));
        const double weekly_phase = two_pi * unit(rng);

        // Regime: piecewise-constant level redrawn at Poisson-distributed shift times.
        std::vector<double> regime(T, 0.0);
        if (spec.shift_rate > 0.0 && spec.shift_scale > 0.0) {
            const double p = std::min(1.0, spec.shift_rate / day);
            double current = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                if (unit(rng) < p) current = spec.shift_scale * gauss(rng);
                regime[t] = current;
            }
        }
        regimes.push_back(regime);
        for (std::size_t t = 0; t < T; ++t) {
            const double s = static_cast<double>(t);
            for (std::size_t c = 0; c < C; ++c) {
                out.trends[(m * T + t) * C + c] =
                    level + daily_amp * std::sin(two_pi * s / day + daily_phase + 0.5 * static_cast<double>(c)) +
                    weekly_amp * std::sin(two_pi * s / (7.0 * day) + weekly_phase) + regime[t];
            }
        }
    }

    SeriesTensor& series = out.series;
    series = SeriesTensor(N, T, C);
    series.steps_per_day = spec.steps_per_day;
    series.labels.resize(N);
    out.offsets.resize(N);
    const std::size_t leaders =
        static_cast<std::size_t>(std::ceil(spec.lead_fraction * static_cast<double>(spec.nodes_per_region)));
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t m = i / spec.nodes_per_region;
        const bool leads = spec.lead_steps > 0 && (i % spec.nodes_per_region) < leaders;
        series.labels[i] = static_cast<int>(m);
        std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(i), std::uint64_t{0x6e657374}};
        std::mt19937_64 node_rng(seq);
        std::normal_distribution<double> noise(0.0, 1.0);
        const double offset = spec.offset_scale * noise(node_rng);
        out.offsets[i] = offset;
        const auto& regime = regimes[m];
        for (std::size_t t = 0; t < T; ++t) {
            const double lead_adjust = leads ? regime[std::min(T - 1, t + spec.lead_steps)] - regime[t] : 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                series.at(i, t, c) =
                    out.trends[(m * T + t) * C + c] + lead_adjust + offset + spec.noise_sigma * noise(node_rng);
            }
        }
    }
    return out;
}

SplitRanges split_ranges(std::size_t steps, const SplitSpec& spec, std::size_t min_length) {
    if (!(spec.train > 0 && spec.val > 0 && spec.test > 0) ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split: ratios must be positive and sum to 1");
    }
    const double T = static_cast<double>(steps);
    const auto train_end = static_cast<std::size_t>(std::llround(T * spec.train));
    const auto val_end = static_cast<std::size_t>(std::llround(T * (spec.train + spec.val)));
    SplitRanges r{{0, train_end}, {train_end, val_end}, {val_end, steps}};
    for (const TimeRange* part : {&r.train, &r.val, &r.test}) {
        if (part->begin > part->end || part->size() < min_length) {
            throw std::invalid_argument("split: " + std::to_string(steps) + " steps leave a split shorter than " +
                                        std::to_string(min_length));
        }
    }
    return r;
}

Splits chronological_split(const SeriesTensor& data, const SplitSpec& spec, std::size_t min_length) {
    Splits s;
    s.ranges = split_ranges(data.steps(), spec, min_length);
    s.train = data.slice(s.ranges.train.begin, s.ranges.train.end);
    s.val = data.slice(s.ranges.val.begin, s.ranges.val.end);
    s.test = data.slice(s.ranges.test.begin, s.ranges.test.end);
    return s;
}

NormStats fit_normalizer(const SeriesTensor& train) {
    train.validate();
    const std::size_t N = train.nodes(), T = train.steps(), C = train.channels();
    NormStats stats{Tensor({N, C}), Tensor({N, C})};
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
            double mean = 0.0;
            for (std::size_t t = 0; t < T; ++t) mean += train.at(i, t, c);
            mean /= static_cast<double>(T);
            double var = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                const double d = train.at(i, t, c) - mean;
                var += d * d;
            }
            var /= static_cast<double>(T);
            stats.mean.at(i, c) = mean;
            stats.stddev.at(i, c) = std::max(std::sqrt(var), 1e-8);
        }
    }
    return stats;
}

void normalize_values(Tensor& values, const NormStats& stats) {
    const std::size_t N = values.shape().at(0), T = values.shape().at(1), C = values.shape().at(2);
    if (stats.mean.rows() != N || stats.mean.cols() != C) throw std::invalid_argument("normalize: stats do not match data");
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                double& v = values[(i * T + t) * C + c];
                v = (v - stats.mean.at(i, c)) / stats.stddev.at(i, c);
            }
}

void denormalize_values(Tensor& values, const NormStats& stats) {
    const std::size_t N = values.shape().at(0), T = values.shape().at(1), C = values.shape().at(2);
    if (stats.mean.rows() != N || stats.mean.cols() != C) throw std::invalid_argument("denormalize: stats do not match data");
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) {
                double& v = values[(i * T + t) * C + c];
                v = v * stats.stddev.at(i, c) + stats.mean.at(i, c);
            }
}

SeriesTensor normalize(const SeriesTensor& data, const NormStats& stats) {
    SeriesTensor out = data;
    normalize_values(out.values, stats);
    return out;
}

SeriesTensor denormalize(const SeriesTensor& data, const NormStats& stats) {
    SeriesTensor out = data;
    denormalize_values(out.values, stats);
    return out;
}

std::vector<std::uint8_t> encode_dataset(const SeriesTensor& data) {
    data.validate();
    ByteWriter w;
    w.raw(kDatasetMagic);
    w.u32(static_cast<std::uint32_t>(data.nodes()));
    w.u32(static_cast<std::uint32_t>(data.steps()));
    w.u32(static_cast<std::uint32_t>(data.channels()));
    w.u32(data.steps_per_day);
    w.u32(data.start_offset);
    w.f64s(data.values.values());
    w.seal();
    return w.bytes();
}

SeriesTensor decode_dataset(std::vector<std::uint8_t> bytes) {
    ByteReader r(std::move(bytes), kDatasetMagic, "dataset");
    const std::size_t N = r.u32(), T = r.u32(), C = r.u32();
    const std::uint32_t spd = r.u32();
    const std::uint32_t offset = r.u32();
    r.verify(kDatasetHeaderBytes + 8 * N * T * C + 8);
    SeriesTensor data(N, T, C);
    data.steps_per_day = spd;
    data.start_offset = offset;
    r.f64s(data.values.values());
    r.finish();
    data.validate();
    return data;
}

void save_dataset(const SeriesTensor& data, const std::filesystem::path& path) {
    write_bytes(path, encode_dataset(data));
}

SeriesTensor load_dataset(const std::filesystem::path& path) { return decode_dataset(read_bytes(path)); }

}  // namespace nest
