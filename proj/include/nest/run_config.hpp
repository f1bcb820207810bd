#pragma once

#include <cstdint>
#include <string>

#include "nest/datakit.hpp"
#include "nest/pipeline.hpp"

namespace nest {

/// Data generator knobs; the series length is days * steps_per_day.
struct DataConfig {
    std::size_t regions = 3;
    std::size_t nodes_per_region = 16;
    std::size_t days = 30;
    std::uint32_t steps_per_day = 96;
    double noise = 1.0;
    double signal_scale = 5.0;
    double offset_scale = 0.5;
    double shift_rate = 0.0;
    double shift_scale = 0.0;
    double lead_fraction = 0.0;
    std::size_t lead_steps = 0;
    std::uint64_t seed = 7;

    SyntheticSpec synthetic() const;
    bool operator==(const DataConfig&) const = default;
};

/// Every knob of a run, one INI section per stage (`;` starts a comment).
/// Unknown sections or keys are errors; missing keys keep their defaults.
struct RunConfig {
    DataConfig data;
    ExperimentSpec experiment;

    /// Sets every seed (data, clustering, model init, training) to `seed`.
    void set_seed(std::uint64_t seed);
    void validate() const;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Canonical text with every key, in a fixed order.
std::string serialize(const RunConfig& config);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

bool same_config(const RunConfig& a, const RunConfig& b);

/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace nest
