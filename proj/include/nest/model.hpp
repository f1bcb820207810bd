#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nest/autodiff.hpp"
#include "nest/datakit.hpp"

namespace nest {

struct ModelConfig {
    std::size_t nodes = 0;
    std::size_t regions = 0;
    std::size_t channels = 1;
    std::size_t lookback = 12;  // L
    std::size_t patch = 4;      // P
    std::size_t embed_dim = 32;
    std::size_t attn_dim = 0;  // 0 selects 2 * embed_dim
    std::size_t layers = 2;
    std::vector<double> quantiles{0.1, 0.5, 0.9};
    std::uint32_t steps_per_day = 96;
    std::uint32_t days_per_week = 7;
    double huber_delta = 1.0;
    bool mlp = true;
    /// Without it, node and region tokens never exchange information.
    bool cross_attention = true;

    std::size_t resolved_attn_dim() const { return attn_dim ? attn_dim : 2 * embed_dim; }
    std::size_t median_index() const;
    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Deterministic initialization of every parameter the config implies.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// A batch of B windows. Node rows are sample-major: rows [b*N, (b+1)*N) belong
/// to sample b; region rows likewise with M.
struct ForwardInput {
    Tensor x;         // [B*N, L*C], input steps origin-L .. origin-1
    Tensor guidance;  // [B*M, P*C]; empty means all-zero guidance
    std::vector<std::int64_t> origin;           // calendar step of the first forecast step
    std::vector<std::int64_t> guidance_origin;  // calendar step of the first guidance step

    std::size_t batch() const { return origin.size(); }
};

struct ForecastBundle {
    Var node;                     // [B*N, P*C], steps origin .. origin+P-1
    std::vector<Var> next;        // per quantile [B*M, P*C], the patch after the guidance window
    std::vector<Var> boundary;    // per quantile [B*M, P*C], the guidance window itself
};

/// Per-layer output of the encoders and the cross-scale stack, exposed for tests.
struct EncodedTokens {
    Var nodes;    // [B*N, d]
    Var regions;  // [B*M, d]
};

class NestModel {
public:
    NestModel(ModelConfig config, ParamStore params);
    NestModel(const ModelConfig& config, std::uint64_t seed) : NestModel(config, init_params(config, seed)) {}

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Var encode_past(Tape& tape, const Tensor& x, const std::vector<std::int64_t>& origin);
    /// An empty `guidance` tensor encodes zero masks for `batch` samples.
    Var encode_guidance(Tape& tape, const Tensor& guidance, const std::vector<std::int64_t>& guidance_origin);
    /// Top-down update of node tokens, then bottom-up update of region tokens.
    EncodedTokens cross_scale_layer(Tape& tape, std::size_t layer, EncodedTokens tokens, std::size_t batch);
    ForecastBundle forward(Tape& tape, const ForwardInput& input);

private:
    Var attend(Tape& tape, const std::string& prefix, Var query, Var keys, std::size_t batch);
    Var block_mlp(Tape& tape, const std::string& prefix, Var h);
    Var time_embedding(Tape& tape, const std::vector<std::int64_t>& start, std::size_t steps);
    Var bind(Tape& tape, const std::string& name);

    ModelConfig config_;
    ParamStore params_;
};

/// Plain tensors of one forward pass.
struct Forecast {
    Tensor node;
    std::vector<Tensor> next;
    std::vector<Tensor> boundary;
};
Forecast predict(NestModel& model, const ForwardInput& input);

struct LossTerms {
    Var total;
    double node = 0.0;
    double next = 0.0;
    double boundary = 0.0;
};

/// node + lambda1 * next + lambda2 * boundary with Huber on the node patch and
/// pinball on both region heads.
LossTerms composite_loss(const ModelConfig& config, Var node, const std::vector<Var>& next,
                         const std::vector<Var>& boundary, const Tensor& node_target, const Tensor& next_target,
                         const Tensor& boundary_target, double lambda1, double lambda2);

/// Where region guidance comes from. `future` feeds the patch being forecast
/// (ground truth while teacher forcing, predicted otherwise); `past` feeds the
/// most recent observed patch and never looks ahead.
enum class GuidanceMode { future, past };

const char* to_string(GuidanceMode mode);
GuidanceMode guidance_mode_from_string(const std::string& text);

/// Everything needed to run a trained model on raw data.
struct Checkpoint {
    ModelConfig config;
    ParamStore params;
    NormStats norm;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    GuidanceMode guidance = GuidanceMode::future;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

}  // namespace nest
