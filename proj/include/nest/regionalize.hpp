#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nest/datakit.hpp"
#include "nest/tensor.hpp"

namespace nest {

enum class ChunkMode {
    full,  // squared norm over each chunk's full subsequence
    mean,  // squared difference of per-chunk averages
};

struct AffinityGraph {
    Tensor weights;  // [N, N], symmetric, zero diagonal
    double sigma = 0.0;
    std::size_t chunks = 0;
    std::size_t chunk_length = 0;
    std::size_t chunk_start = 0;  // first step used, after period alignment
};

/// Gaussian-kernel affinity over chunked distances:
///   A_ij = exp(-D_ij / (2 sigma^2 chunks)),  D_ij = sum_k ||X_i^(k) - X_j^(k)||^2
/// with A_ii = 0. `sigma <= 0` is rejected; pass the result of
/// median_sigma() for the scale-free default.
AffinityGraph build_affinity(const SeriesTensor& data, std::size_t chunks, double sigma, ChunkMode mode = ChunkMode::full);

/// Chunked squared distances D_ij (zero diagonal) and the chunk layout used.
struct ChunkedDistances {
    Tensor distances;
    std::size_t chunk_length = 0;
    std::size_t chunk_start = 0;
};
ChunkedDistances chunked_distances(const SeriesTensor& data, std::size_t chunks, ChunkMode mode);

/// Median over node pairs of sqrt(D_ij / chunks); the kernel then puts the
/// median pair at affinity exp(-1/2).
double median_sigma(const Tensor& distances, std::size_t chunks);

/// L_sym = I - D^{-1/2} A D^{-1/2}. Throws on a zero-degree node.
Tensor normalized_laplacian(const Tensor& affinity);

struct SpectralEmbedding {
    Tensor rows;                     // [N, M], unit-norm rows
    Tensor eigenvectors;             // [N, M], before row normalization
    std::vector<double> eigenvalues; // ascending, M of them
    std::vector<std::size_t> zero_rows;
};

/// Eigenvectors of the `regions` smallest eigenvalues of a symmetric matrix,
/// rows scaled to unit norm. All-zero rows are left as zero and reported.
SpectralEmbedding spectral_embed(const Tensor& laplacian, std::size_t regions);

struct KMeansOptions {
    std::size_t clusters = 2;
    std::size_t restarts = 10;
    std::size_t max_iterations = 300;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    std::vector<std::uint32_t> labels;
    Tensor centroids;                  // [clusters, dim]
    double objective = 0.0;            // within-cluster sum of squares
    std::vector<double> trace;         // objective per iteration of the winning restart
};

/// Lloyd iterations from k-means++ seeds; keeps the best of `restarts`.
/// Empty clusters are reseeded with the point farthest from its centroid.
KMeansResult kmeans(const Tensor& points, const KMeansOptions& options);

/// Within-cluster sum of squares of a labelling.
double kmeans_objective(const Tensor& points, std::span<const std::uint32_t> labels, std::size_t clusters);

/// One-hot [N, M] matrix from labels.
Tensor assignment_matrix(std::span<const std::uint32_t> labels, std::size_t regions);

/// Z_m = mean of the rows of `x` ([N, C]) assigned to region m; result [M, C].
Tensor pool_regions(const Tensor& x, std::span<const std::uint32_t> labels, std::size_t regions);

/// Pools every step: [N, T, C] -> [M, T, C].
Tensor pool_series(const Tensor& values, std::span<const std::uint32_t> labels, std::size_t regions);

/// Per-region mean rows of `x_flat` ([N, T*C]), i.e. (S^T S)^{-1} S^T X.
Tensor prototypes(std::span<const std::uint32_t> labels, const Tensor& x_flat, std::size_t regions);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const int> b);

struct RegionConfig {
    /// Region count; 0 means round(m_ratio * N).
    std::size_t regions = 0;
    double m_ratio = 0.2;
    std::size_t chunks = 100;
    /// Kernel bandwidth; <= 0 selects the median heuristic.
    double sigma = 0.0;
    ChunkMode mode = ChunkMode::full;
    std::size_t kmeans_restarts = 10;
    std::size_t kmeans_iterations = 300;
    std::uint64_t seed = 0;

    std::size_t resolve_regions(std::size_t nodes) const;
};

struct RegionModel {
    std::size_t nodes = 0;
    std::size_t regions = 0;
    std::size_t chunks = 0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> labels;  // region per node
    Tensor prototypes;                  // [M, T*C]
    Tensor embedding;                   // [N, M], not persisted
    double objective = 0.0;

    Tensor assignment() const { return assignment_matrix(labels, regions); }
    void validate() const;
};

/// affinity -> Laplacian -> spectral embedding -> k-means -> prototypes, on
/// the data given (callers pass the training split only).
RegionModel regionalize(const SeriesTensor& train, const RegionConfig& config);

/// Layout: "NESTRG1\0", u32 N, u32 M, u32 chunks, f64 sigma, u64 seed,
/// u32 prototype width, N x u32 labels, M x width f64 prototypes, FNV-1a 64.
std::vector<std::uint8_t> encode_regions(const RegionModel& model);
RegionModel decode_regions(std::vector<std::uint8_t> bytes);
void save_regions(const RegionModel& model, const std::filesystem::path& path);
RegionModel load_regions(const std::filesystem::path& path);

}  // namespace nest
