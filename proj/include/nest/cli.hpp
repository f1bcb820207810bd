#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "nest/metrics.hpp"
#include "nest/run_config.hpp"

namespace nest::cli {

/// Parses and runs one command line. Errors print "error: <code>: <message>"
/// on `err` and return a nonzero exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Worker cap from NEST_THREADS (unset means 1). Applied to Eigen.
unsigned configure_threads();

/// Writes `<output>.manifest.json` next to an output file.
void write_manifest(const std::filesystem::path& output, const std::string& command, const RunConfig& config,
                    const std::vector<std::filesystem::path>& inputs, const nlohmann::json& extra = {});
nlohmann::json read_manifest(const std::filesystem::path& output);

nlohmann::json report_json(const MetricsReport& report);

/// Settings the demo uses for `seed`: regime-shift data, 3 regions, a small
/// model and a short training run.
RunConfig demo_config(std::uint64_t seed);

struct DemoSummary {
    double ari = 0.0;
    double full_mae = 0.0;
    double past_guidance_mae = 0.0;
    double persistence_mae = 0.0;
    std::string text;
};

/// gen-data -> cluster -> train (future and past guidance) -> infer -> eval,
/// writing every artifact under `dir`.
DemoSummary run_demo(const RunConfig& config, const std::filesystem::path& dir);

struct BenchOptions {
    std::vector<std::size_t> nodes{512, 1024, 2048};
    std::vector<std::size_t> layers{2};
    std::size_t regions = 64;
    std::size_t embed_dim = 32;
    std::size_t lookback = 12;
    std::size_t patch = 4;
    std::size_t runs = 15;
    std::size_t warmup = 2;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::size_t nodes = 0, regions = 0, embed_dim = 0, layers = 0, runs = 0;
    double median_seconds = 0.0;
    AttentionCost cost;
};

/// Forward plus backward of the composite loss on one window per config,
/// timed on a single thread.
std::vector<BenchRow> run_bench(const BenchOptions& options);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace nest::cli
