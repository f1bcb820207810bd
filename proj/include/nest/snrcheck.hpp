#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace nest {

/// Members of one cluster: noiseless signals s_i (all of equal length) and the
/// per-component variance of the i.i.d. Gaussian noise added to each node.
struct NoisyCluster {
    std::vector<std::vector<double>> signals;
    double noise_variance = 1.0;

    std::size_t size() const { return signals.size(); }
    void validate() const;
};

/// ||s||^2 / sigma^2.
double signal_snr(std::span<const double> signal, double noise_variance);

/// Mean pairwise cosine similarity over ordered pairs i != j.
double avg_correlation(const NoisyCluster& cluster);

struct SnrBoundReport {
    double snr_center = 0.0;  // |C| ||mean s||^2 / sigma^2
    double mean_snr = 0.0;    // average individual SNR
    double rho = 0.0;         // 1.0 for singletons
    double bound = 0.0;       // [1 + (|C| - 1) rho] * mean_snr
    double slack = 0.0;       // snr_center - bound
    bool holds = false;       // slack >= -1e-10
};

/// Evaluates both sides of the cluster-center SNR lower bound.
SnrBoundReport verify_snr_bound(const NoisyCluster& cluster);

/// Empirical SNR of the cluster center from `draws` sampled noise realizations,
/// with the standard error of that estimate.
struct MonteCarloSnr {
    double snr = 0.0;
    double standard_error = 0.0;
};
MonteCarloSnr monte_carlo_center_snr(const NoisyCluster& cluster, std::size_t draws, std::uint64_t seed);

struct RandomClusterSpec {
    std::size_t min_size = 2;
    std::size_t max_size = 20;
    std::size_t length = 64;
    /// Reject clusters with any negative pairwise correlation.
    bool nonnegative_correlations = true;
    /// Rescale every member to the first member's norm.
    bool equal_norms = false;
};

/// Correlated sinusoidal members: a shared random waveform plus member-specific
/// harmonics, each member with its own random amplitude.
NoisyCluster random_cluster(const RandomClusterSpec& spec, std::uint64_t seed);

struct SnrSweepReport {
    std::size_t clusters_tested = 0;
    std::size_t violations = 0;
    double min_slack = 0.0;
    std::vector<NoisyCluster> violating;  // verbatim, first few only
};

SnrSweepReport snr_sweep(std::size_t clusters, const RandomClusterSpec& spec, std::uint64_t seed,
                         std::size_t keep_violations = 5);

}  // namespace nest
