#include "nest/regionalize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "nest/binary_io.hpp"

namespace nest {

namespace {

constexpr std::string_view kRegionMagic{"NESTRG1\0", 8};

std::vector<std::size_t> region_sizes(std::span<const std::uint32_t> labels, std::size_t regions) {
    std::vector<std::size_t> sizes(regions, 0);
    for (std::uint32_t l : labels) {
        if (l >= regions) throw std::invalid_argument("region label " + std::to_string(l) + " out of range");
        ++sizes[l];
    }
    for (std::size_t m = 0; m < regions; ++m) {
        if (sizes[m] == 0) throw std::invalid_argument("region " + std::to_string(m) + " is empty");
    }
    return sizes;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

}  // namespace

ChunkedDistances chunked_distances(const SeriesTensor& data, std::size_t chunks, ChunkMode mode) {
    data.validate();
    const std::size_t N = data.nodes(), T = data.steps(), C = data.channels();
    if (chunks == 0 || chunks > T) {
        throw std::invalid_argument("affinity: " + std::to_string(chunks) + " chunks do not fit " + std::to_string(T) +
                                    " steps");
    }
    ChunkedDistances out;
    out.chunk_length = T / chunks;
    // Whole-day chunks starting on a day boundary whenever at least a day fits.
    const std::size_t spd = data.steps_per_day;
    const std::size_t align = (spd - data.start_offset % spd) % spd;
    if (spd > 0 && align < T) {
        const std::size_t days = (T - align) / chunks / spd;
        if (days > 0) {
            out.chunk_start = align;
            out.chunk_length = days * spd;
        }
    }

    const std::size_t len = out.chunk_length;
    const std::size_t used = chunks * len;
    // Feature rows per node: the used window, or one mean vector per chunk.
    const std::size_t width = mode == ChunkMode::full ? used * C : chunks * C;
    std::vector<double> rows(N * width, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        double* dst = rows.data() + i * width;
        for (std::size_t k = 0; k < chunks; ++k) {
            for (std::size_t s = 0; s < len; ++s) {
                const std::size_t t = out.chunk_start + k * len + s;
                for (std::size_t c = 0; c < C; ++c) {
                    if (mode == ChunkMode::full) {
                        dst[(k * len + s) * C + c] = data.at(i, t, c);
                    } else {
                        dst[k * C + c] += data.at(i, t, c) / static_cast<double>(len);
                    }
                }
            }
        }
    }
    out.distances = Tensor({N, N});
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
            const double d = squared_distance(rows.data() + i * width, rows.data() + j * width, width);
            out.distances.at(i, j) = d;
            out.distances.at(j, i) = d;
        }
    }
    return out;
}

double median_sigma(const Tensor& distances, std::size_t chunks) {
    const std::size_t N = distances.rows();
    std::vector<double> scales;
    scales.reserve(N * (N - 1) / 2);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) scales.push_back(std::sqrt(distances.at(i, j) / static_cast<double>(chunks)));
    if (scales.empty()) return 1.0;
    auto mid = scales.begin() + static_cast<std::ptrdiff_t>(scales.size() / 2);
    std::nth_element(scales.begin(), mid, scales.end());
    double median = *mid;
    if (scales.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(scales.begin(), mid));
    }
    return median > 0.0 ? median : 1.0;
}

AffinityGraph build_affinity(const SeriesTensor& data, std::size_t chunks, double sigma, ChunkMode mode) {
    if (!(sigma > 0.0)) throw std::invalid_argument("affinity: sigma must be positive");
    ChunkedDistances cd = chunked_distances(data, chunks, mode);
    const std::size_t N = data.nodes();
    AffinityGraph g;
    g.sigma = sigma;
    g.chunks = chunks;
    g.chunk_length = cd.chunk_length;
    g.chunk_start = cd.chunk_start;
    g.weights = Tensor({N, N});
    const double inv = 1.0 / (2.0 * sigma * sigma * static_cast<double>(chunks));
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            g.weights.at(i, j) = i == j ? 0.0 : std::exp(-cd.distances.at(i, j) * inv);
    return g;
}

Tensor normalized_laplacian(const Tensor& affinity) {
    const std::size_t N = affinity.rows();
    if (affinity.rank() != 2 || affinity.cols() != N) {
        throw std::invalid_argument("laplacian: affinity must be square, got " + shape_string(affinity.shape()));
    }
    std::vector<double> inv_sqrt_degree(N);
    for (std::size_t i = 0; i < N; ++i) {
        double d = 0.0;
        for (std::size_t j = 0; j < N; ++j) d += affinity.at(i, j);
        if (!(d > 0.0)) throw std::invalid_argument("laplacian: node " + std::to_string(i) + " has zero degree");
        inv_sqrt_degree[i] = 1.0 / std::sqrt(d);
    }
    Tensor L({N, N});
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j)
            L.at(i, j) = (i == j ? 1.0 : 0.0) - affinity.at(i, j) * (inv_sqrt_degree[i] * inv_sqrt_degree[j]);
    return L;
}

SpectralEmbedding spectral_embed(const Tensor& laplacian, std::size_t regions) {
    const std::size_t N = laplacian.rows();
    if (laplacian.rank() != 2 || laplacian.cols() != N) {
        throw std::invalid_argument("spectral_embed: matrix must be square, got " + shape_string(laplacian.shape()));
    }
    if (regions == 0 || regions > N) {
        throw std::invalid_argument("spectral_embed: need 1 <= M <= N, got M=" + std::to_string(regions));
    }
    const auto n = static_cast<Eigen::Index>(N);
    Eigen::MatrixXd L(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) L(i, j) = laplacian.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(L);
    if (solver.info() != Eigen::Success) {
        const double residual = (L * solver.eigenvectors() - solver.eigenvectors() * solver.eigenvalues().asDiagonal()).norm();
        throw std::runtime_error("spectral_embed: eigensolver did not converge, residual norm " + std::to_string(residual));
    }

    SpectralEmbedding out;
    out.eigenvectors = Tensor({N, regions});
    out.rows = Tensor({N, regions});
    for (std::size_t m = 0; m < regions; ++m) {
        out.eigenvalues.push_back(solver.eigenvalues()(static_cast<Eigen::Index>(m)));
        for (std::size_t i = 0; i < N; ++i) {
            out.eigenvectors.at(i, m) = solver.eigenvectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m));
        }
    }
    for (std::size_t i = 0; i < N; ++i) {
        double norm = 0.0;
        for (std::size_t m = 0; m < regions; ++m) norm += out.eigenvectors.at(i, m) * out.eigenvectors.at(i, m);
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            out.zero_rows.push_back(i);
            continue;
        }
        for (std::size_t m = 0; m < regions; ++m) out.rows.at(i, m) = out.eigenvectors.at(i, m) / norm;
    }
    return out;
}

double kmeans_objective(const Tensor& points, std::span<const std::uint32_t> labels, std::size_t clusters) {
    const std::size_t dim = points.cols();
    Tensor centroids = prototypes(labels, points, clusters);
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        total += squared_distance(points.data() + i * dim, centroids.data() + labels[i] * dim, dim);
    }
    return total;
}

namespace {

struct Restart {
    std::vector<std::uint32_t> labels;
    Tensor centroids;
    double objective = 0.0;
    std::vector<double> trace;
};

Restart lloyd(const Tensor& points, std::size_t K, std::size_t max_iterations, std::mt19937_64& rng) {
    const std::size_t N = points.rows(), dim = points.cols();
    auto point = [&](std::size_t i) { return points.data() + i * dim; };

    // k-means++ seeding.
    Restart r;
    r.centroids = Tensor({K, dim});
    std::vector<double> nearest(N, std::numeric_limits<double>::infinity());
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
    std::copy(point(first), point(first) + dim, r.centroids.data());
    for (std::size_t k = 1; k < K; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(point(i), r.centroids.data() + (k - 1) * dim, dim));
            total += nearest[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = N - 1;
            for (std::size_t i = 0; i < N; ++i) {
                if (u < nearest[i]) {
                    pick = i;
                    break;
                }
                u -= nearest[i];
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
        }
        std::copy(point(pick), point(pick) + dim, r.centroids.data() + k * dim);
    }

    r.labels.assign(N, 0);
    std::vector<std::uint32_t> previous;
    for (std::size_t it = 0; it < max_iterations; ++it) {
        // Assignment; ties go to the lower index.
        for (std::size_t i = 0; i < N; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                const double d = squared_distance(point(i), r.centroids.data() + k * dim, dim);
                if (d < best) {
                    best = d;
                    r.labels[i] = static_cast<std::uint32_t>(k);
                }
            }
        }
        // Repair empty clusters with the point farthest from its centroid.
        for (;;) {
            std::vector<std::size_t> sizes(K, 0);
            for (auto l : r.labels) ++sizes[l];
            auto empty = std::find(sizes.begin(), sizes.end(), std::size_t{0});
            if (empty == sizes.end()) break;
            std::size_t far = N;
            double far_d = -1.0;
            for (std::size_t i = 0; i < N; ++i) {
                if (sizes[r.labels[i]] < 2) continue;
                const double d = squared_distance(point(i), r.centroids.data() + r.labels[i] * dim, dim);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            const auto k = static_cast<std::size_t>(empty - sizes.begin());
            r.labels[far] = static_cast<std::uint32_t>(k);
            std::copy(point(far), point(far) + dim, r.centroids.data() + k * dim);
        }
        r.centroids = prototypes(r.labels, points, K);
        r.objective = 0.0;
        for (std::size_t i = 0; i < N; ++i) r.objective += squared_distance(point(i), r.centroids.data() + r.labels[i] * dim, dim);
        r.trace.push_back(r.objective);
        if (r.labels == previous) break;
        previous = r.labels;
    }
    return r;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, const KMeansOptions& options) {
    const std::size_t N = points.rows();
    if (options.clusters == 0 || options.clusters > N) {
        throw std::invalid_argument("kmeans: need N >= M >= 1, got N=" + std::to_string(N) +
                                    " M=" + std::to_string(options.clusters));
    }
    if (options.restarts == 0 || options.max_iterations == 0) {
        throw std::invalid_argument("kmeans: restarts and iterations must be positive");
    }
    KMeansResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < options.restarts; ++r) {
        std::seed_seq seq{options.seed, static_cast<std::uint64_t>(r), std::uint64_t{0x6b6d}};
        std::mt19937_64 rng(seq);
        Restart run = lloyd(points, options.clusters, options.max_iterations, rng);
        if (run.objective < best.objective) {
            best.labels = std::move(run.labels);
            best.centroids = std::move(run.centroids);
            best.objective = run.objective;
            best.trace = std::move(run.trace);
        }
    }
    return best;
}

Tensor assignment_matrix(std::span<const std::uint32_t> labels, std::size_t regions) {
    Tensor S({labels.size(), regions});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= regions) throw std::invalid_argument("assignment: label out of range");
        S.at(i, labels[i]) = 1.0;
    }
    return S;
}

Tensor pool_regions(const Tensor& x, std::span<const std::uint32_t> labels, std::size_t regions) {
    if (x.rows() != labels.size()) throw std::invalid_argument("pool_regions: one label per node row required");
    const auto sizes = region_sizes(labels, regions);
    const std::size_t C = x.cols();
    Tensor z({regions, C});
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) z.at(labels[i], c) += x.at(i, c);
    for (std::size_t m = 0; m < regions; ++m)
        for (std::size_t c = 0; c < C; ++c) z.at(m, c) /= static_cast<double>(sizes[m]);
    return z;
}

Tensor pool_series(const Tensor& values, std::span<const std::uint32_t> labels, std::size_t regions) {
    const std::size_t T = values.shape().at(1), C = values.shape().at(2);
    return prototypes(labels, values.reshaped({values.shape()[0], T * C}), regions).reshaped({regions, T, C});
}

Tensor prototypes(std::span<const std::uint32_t> labels, const Tensor& x_flat, std::size_t regions) {
    if (x_flat.rows() != labels.size()) throw std::invalid_argument("prototypes: one label per node row required");
    const auto sizes = region_sizes(labels, regions);
    const std::size_t W = x_flat.cols();
    Tensor out({regions, W});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double* src = x_flat.data() + i * W;
        double* dst = out.data() + labels[i] * W;
        for (std::size_t j = 0; j < W; ++j) dst[j] += src[j];
    }
    for (std::size_t m = 0; m < regions; ++m) {
        const double inv = 1.0 / static_cast<double>(sizes[m]);
        for (std::size_t j = 0; j < W; ++j) out.at(m, j) *= inv;
    }
    return out;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: label lists differ in length");
    const std::size_t n = a.size();
    if (n < 2) return 1.0;
    const int ka = *std::max_element(a.begin(), a.end()) + 1;
    const int kb = *std::max_element(b.begin(), b.end()) + 1;
    std::vector<double> table(static_cast<std::size_t>(ka * kb), 0.0), ra(ka, 0.0), rb(kb, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        table[static_cast<std::size_t>(a[i] * kb + b[i])] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto pairs = [](double x) { return 0.5 * x * (x - 1.0); };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (double v : table) index += pairs(v);
    for (double v : ra) sa += pairs(v);
    for (double v : rb) sb += pairs(v);
    const double expected = sa * sb / pairs(static_cast<double>(n));
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const int> b) {
    std::vector<int> ai(a.begin(), a.end());
    return adjusted_rand_index(std::span<const int>(ai), b);
}

std::size_t RegionConfig::resolve_regions(std::size_t nodes) const {
    std::size_t m = regions;
    if (m == 0) m = static_cast<std::size_t>(std::max<long long>(1, std::llround(m_ratio * static_cast<double>(nodes))));
    if (m > nodes) throw std::invalid_argument("regionalize: " + std::to_string(m) + " regions exceed " + std::to_string(nodes) + " nodes");
    return m;
}

void RegionModel::validate() const {
    if (labels.size() != nodes) throw std::invalid_argument("region model: one label per node required");
    region_sizes(labels, regions);
    if (prototypes.rows() != regions) throw std::invalid_argument("region model: one prototype per region required");
}

RegionModel regionalize(const SeriesTensor& train, const RegionConfig& config) {
    train.validate();
    const std::size_t N = train.nodes();
    const std::size_t M = config.resolve_regions(N);
    const std::size_t chunks = std::min(config.chunks, train.steps());

    ChunkedDistances cd = chunked_distances(train, chunks, config.mode);
    const double sigma = config.sigma > 0.0 ? config.sigma : median_sigma(cd.distances, chunks);
    AffinityGraph graph = build_affinity(train, chunks, sigma, config.mode);
    Tensor L = normalized_laplacian(graph.weights);
    SpectralEmbedding emb = spectral_embed(L, M);
    KMeansResult km = kmeans(emb.rows, KMeansOptions{M, config.kmeans_restarts, config.kmeans_iterations, config.seed});

    RegionModel model;
    model.nodes = N;
    model.regions = M;
    model.chunks = chunks;
    model.sigma = sigma;
    model.seed = config.seed;
    model.labels = std::move(km.labels);
    model.prototypes = prototypes(model.labels, train.flat(), M);
    model.embedding = std::move(emb.rows);
    model.objective = km.objective;
    return model;
}

std::vector<std::uint8_t> encode_regions(const RegionModel& model) {
    model.validate();
    ByteWriter w;
    w.raw(kRegionMagic);
    w.u32(static_cast<std::uint32_t>(model.nodes));
    w.u32(static_cast<std::uint32_t>(model.regions));
    w.u32(static_cast<std::uint32_t>(model.chunks));
    w.f64(model.sigma);
    w.u64(model.seed);
    w.u32(static_cast<std::uint32_t>(model.prototypes.cols()));
    for (std::uint32_t l : model.labels) w.u32(l);
    w.f64s(model.prototypes.values());
    w.seal();
    return w.bytes();
}

RegionModel decode_regions(std::vector<std::uint8_t> bytes) {
    ByteReader r(std::move(bytes), kRegionMagic, "region file");
    RegionModel model;
    model.nodes = r.u32();
    model.regions = r.u32();
    model.chunks = r.u32();
    model.sigma = r.f64();
    model.seed = r.u64();
    const std::size_t width = r.u32();
    r.verify(8 + 4 * 3 + 8 + 8 + 4 + 4 * model.nodes + 8 * model.regions * width + 8);
    model.labels.resize(model.nodes);
    for (auto& l : model.labels) l = r.u32();
    model.prototypes = Tensor({model.regions, width});
    r.f64s(model.prototypes.values());
    r.finish();
    try {
        model.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::invalid, std::string("region file: ") + e.what());
    }
    return model;
}

void save_regions(const RegionModel& model, const std::filesystem::path& path) { write_bytes(path, encode_regions(model)); }

RegionModel load_regions(const std::filesystem::path& path) { return decode_regions(read_bytes(path)); }

}  // namespace nest
