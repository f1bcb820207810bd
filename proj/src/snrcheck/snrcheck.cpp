#include "nest/snrcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace nest {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

void NoisyCluster::validate() const {
    if (signals.empty()) throw std::invalid_argument("cluster: at least one member required");
    if (!(noise_variance > 0.0)) throw std::invalid_argument("cluster: noise variance must be positive");
    const std::size_t T = signals.front().size();
    bool any_signal = false;
    for (const auto& s : signals) {
        if (s.size() != T) throw std::invalid_argument("cluster: members differ in length");
        any_signal = any_signal || dot(s, s) > 0.0;
    }
    if (!any_signal) throw std::invalid_argument("cluster: all signals are zero");
}

double signal_snr(std::span<const double> signal, double noise_variance) {
    if (!(noise_variance > 0.0)) throw std::invalid_argument("signal_snr: noise variance must be positive");
    return dot(signal, signal) / noise_variance;
}

double avg_correlation(const NoisyCluster& cluster) {
    cluster.validate();
    const std::size_t n = cluster.size();
    if (n < 2) throw std::invalid_argument("avg_correlation: need at least two members");
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = std::sqrt(dot(cluster.signals[i], cluster.signals[i]));
        if (norms[i] == 0.0) throw std::invalid_argument("avg_correlation: member " + std::to_string(i) + " has a zero signal");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            total += 2.0 * dot(cluster.signals[i], cluster.signals[j]) / (norms[i] * norms[j]);
    return total / static_cast<double>(n * (n - 1));
}

SnrBoundReport verify_snr_bound(const NoisyCluster& cluster) {
    cluster.validate();
    const std::size_t n = cluster.size();
    const std::size_t T = cluster.signals.front().size();
    std::vector<double> center(T, 0.0);
    double mean_snr = 0.0;
    for (const auto& s : cluster.signals) {
        for (std::size_t t = 0; t < T; ++t) center[t] += s[t] / static_cast<double>(n);
        mean_snr += signal_snr(s, cluster.noise_variance) / static_cast<double>(n);
    }
    SnrBoundReport r;
    r.snr_center = static_cast<double>(n) * dot(center, center) / cluster.noise_variance;
    r.mean_snr = mean_snr;
    r.rho = n >= 2 ? avg_correlation(cluster) : 1.0;
    r.bound = (1.0 + static_cast<double>(n - 1) * r.rho) * mean_snr;
    r.slack = r.snr_center - r.bound;
    r.holds = r.slack >= -1e-10;
    return r;
}

MonteCarloSnr monte_carlo_center_snr(const NoisyCluster& cluster, std::size_t draws, std::uint64_t seed) {
    cluster.validate();
    if (draws < 2) throw std::invalid_argument("monte_carlo_center_snr: need at least two draws");
    const std::size_t n = cluster.size();
    const std::size_t T = cluster.signals.front().size();
    std::vector<double> center(T, 0.0);
    for (const auto& s : cluster.signals)
        for (std::size_t t = 0; t < T; ++t) center[t] += s[t] / static_cast<double>(n);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, std::sqrt(cluster.noise_variance));
    // Per-component noise variance of the center, estimated from the
    // deviations of each sampled center from the noiseless one.
    double sum_sq = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
        for (std::size_t t = 0; t < T; ++t) {
            double avg_noise = 0.0;
            for (std::size_t i = 0; i < n; ++i) avg_noise += noise(rng);
            avg_noise /= static_cast<double>(n);
            sum_sq += avg_noise * avg_noise;
        }
    }
    const double samples = static_cast<double>(draws * T);
    const double var_hat = sum_sq / samples;
    MonteCarloSnr out;
    out.snr = dot(center, center) / var_hat;
    // var_hat is a mean of chi-square(1) multiples: relative sd sqrt(2 / samples).
    out.standard_error = out.snr * std::sqrt(2.0 / samples);
    return out;
}

NoisyCluster random_cluster(const RandomClusterSpec& spec, std::uint64_t seed) {
    if (spec.min_size == 0 || spec.min_size > spec.max_size || spec.length == 0) {
        throw std::invalid_argument("random_cluster: invalid size range");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    for (;;) {
        NoisyCluster c;
        const std::size_t n = std::uniform_int_distribution<std::size_t>(spec.min_size, spec.max_size)(rng);
        c.noise_variance = 0.1 + 2.0 * unit(rng);
        const double base_freq = 1.0 + std::floor(4.0 * unit(rng));
        const double base_phase = two_pi * unit(rng);
        const double level = 2.0 * unit(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double amplitude = 0.5 + 2.5 * unit(rng);
            const double jitter = 0.5 * (unit(rng) - 0.5);
            const double harmonic = 0.6 * unit(rng);
            const double harmonic_freq = base_freq + 1.0 + std::floor(3.0 * unit(rng));
            const double harmonic_phase = two_pi * unit(rng);
            std::vector<double> s(spec.length);
            for (std::size_t t = 0; t < spec.length; ++t) {
                const double x = two_pi * static_cast<double>(t) / static_cast<double>(spec.length);
                s[t] = amplitude * (level + std::sin(base_freq * x + base_phase + jitter) +
                                    harmonic * std::sin(harmonic_freq * x + harmonic_phase));
            }
            c.signals.push_back(std::move(s));
        }
        if (spec.equal_norms) {
            const double target = std::sqrt(dot(c.signals[0], c.signals[0]));
            for (auto& s : c.signals) {
                const double scale = target / std::sqrt(dot(s, s));
                for (double& v : s) v *= scale;
            }
        }
        if (!spec.nonnegative_correlations || n < 2) return c;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i)
            for (std::size_t j = i + 1; j < n && ok; ++j) ok = dot(c.signals[i], c.signals[j]) >= 0.0;
        if (ok) return c;
    }
}

SnrSweepReport snr_sweep(std::size_t clusters, const RandomClusterSpec& spec, std::uint64_t seed,
                         std::size_t keep_violations) {
    SnrSweepReport report;
    report.min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < clusters; ++k) {
        NoisyCluster c = random_cluster(spec, seed * 1000003ULL + k);
        const SnrBoundReport r = verify_snr_bound(c);
        ++report.clusters_tested;
        report.min_slack = std::min(report.min_slack, r.slack);
        if (!r.holds) {
            ++report.violations;
            if (report.violating.size() < keep_violations) report.violating.push_back(std::move(c));
        }
    }
    return report;
}

}  // namespace nest
