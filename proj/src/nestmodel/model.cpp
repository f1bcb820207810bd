#include "nest/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "nest/ops.hpp"

namespace nest {

std::size_t ModelConfig::median_index() const {
    for (std::size_t q = 0; q < quantiles.size(); ++q) {
        if (quantiles[q] == 0.5) return q;
    }
    throw std::invalid_argument("model config: quantile set must contain 0.5");
}

void ModelConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("model config: " + msg);
    };
    need(nodes >= 1, "nodes must be positive");
    need(regions >= 1, "regions must be positive");
    need(channels >= 1, "channels must be positive");
    need(lookback >= 1, "lookback must be positive");
    need(patch >= 1, "patch must be positive");
    need(embed_dim >= 1, "embed_dim must be positive");
    need(layers >= 1, "layers must be positive");
    need(steps_per_day >= 1 && days_per_week >= 1, "calendar extents must be positive");
    need(huber_delta > 0.0, "huber_delta must be positive");
    need(!quantiles.empty(), "quantile set is empty");
    for (std::size_t q = 0; q < quantiles.size(); ++q) {
        need(quantiles[q] > 0.0 && quantiles[q] < 1.0, "quantile levels must lie in (0, 1)");
        need(q == 0 || quantiles[q] > quantiles[q - 1], "quantile levels must be strictly increasing");
    }
    median_index();
}

namespace {

void add_linear(ParamStore& store, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t out,
                bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w({in, out});
    for (double& v : w.values()) v = u(rng);
    store.add(name + ".w", std::move(w));
    if (bias) store.add(name + ".b", Tensor({out}));
}

void add_embedding(ParamStore& store, std::mt19937_64& rng, const std::string& name, std::size_t rows,
                   std::size_t d) {
    std::normal_distribution<double> n(0.0, 0.02);
    Tensor t({rows, d});
    for (double& v : t.values()) v = n(rng);
    store.add(name, std::move(t));
}

void add_attention(ParamStore& store, std::mt19937_64& rng, const std::string& prefix, std::size_t d, std::size_t a) {
    add_linear(store, rng, prefix + ".q", d, a, false);
    add_linear(store, rng, prefix + ".k", d, a, false);
    add_linear(store, rng, prefix + ".v", d, a, false);
    add_linear(store, rng, prefix + ".o", a, d, false);
}

void add_mlp(ParamStore& store, std::mt19937_64& rng, const std::string& prefix, std::size_t d) {
    add_linear(store, rng, prefix + ".mlp1", d, 2 * d, true);
    add_linear(store, rng, prefix + ".mlp2", 2 * d, d, true);
}

std::size_t floor_mod(std::int64_t a, std::int64_t m) {
    const std::int64_t r = a % m;
    return static_cast<std::size_t>(r < 0 ? r + m : r);
}

std::int64_t floor_div(std::int64_t a, std::int64_t m) {
    std::int64_t q = a / m;
    if ((a % m != 0) && ((a < 0) != (m < 0))) --q;
    return q;
}

}  // namespace

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6d6f64u};
    std::mt19937_64 rng(seq);
    const std::size_t d = config.embed_dim, a = config.resolved_attn_dim();
    const std::size_t pc = config.patch * config.channels;
    ParamStore store;
    add_linear(store, rng, "enc.x", config.lookback * config.channels, d, true);
    add_linear(store, rng, "enc.z", pc, d, true);
    add_embedding(store, rng, "emb.node", config.nodes, d);
    add_embedding(store, rng, "emb.region", config.regions, d);
    add_embedding(store, rng, "emb.tod", config.steps_per_day, d);
    add_embedding(store, rng, "emb.dow", config.days_per_week, d);
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        if (config.cross_attention) add_attention(store, rng, p + ".td", d, a);
        if (config.mlp) add_mlp(store, rng, p + ".td", d);
        if (config.cross_attention) add_attention(store, rng, p + ".bu", d, a);
        if (config.mlp) add_mlp(store, rng, p + ".bu", d);
    }
    if (config.cross_attention) add_attention(store, rng, "bd", d, a);
    add_linear(store, rng, "head.x", d, pc, true);
    for (std::size_t q = 0; q < config.quantiles.size(); ++q)
        add_linear(store, rng, "head.z" + std::to_string(q), d, pc, true);
    for (std::size_t q = 0; q < config.quantiles.size(); ++q)
        add_linear(store, rng, "head.bd" + std::to_string(q), d, pc, true);
    return store;
}

NestModel::NestModel(ModelConfig config, ParamStore params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const ParamStore reference = init_params(config_, 0);
    if (reference.size() != params_.size()) {
        throw std::invalid_argument("model: expected " + std::to_string(reference.size()) + " parameters, got " +
                                    std::to_string(params_.size()));
    }
    for (const Parameter& p : reference) {
        if (!params_.contains(p.name)) throw std::invalid_argument("model: missing parameter " + p.name);
        const Tensor& have = params_.at(p.name).value;
        if (!have.same_shape(p.value)) {
            throw std::invalid_argument("model: parameter " + p.name + " has shape " + shape_string(have.shape()) +
                                        ", expected " + shape_string(p.value.shape()));
        }
    }
}

Var NestModel::bind(Tape& tape, const std::string& name) { return tape.param(params_.at(name)); }

Var NestModel::time_embedding(Tape& tape, const std::vector<std::int64_t>& start, std::size_t steps) {
    const auto spd = static_cast<std::int64_t>(config_.steps_per_day);
    const auto dpw = static_cast<std::int64_t>(config_.days_per_week);
    std::vector<std::vector<std::size_t>> tod(start.size()), dow(start.size());
    for (std::size_t b = 0; b < start.size(); ++b) {
        for (std::size_t s = 0; s < steps; ++s) {
            const std::int64_t t = start[b] + static_cast<std::int64_t>(s);
            tod[b].push_back(floor_mod(t, spd));
            dow[b].push_back(floor_mod(floor_div(t, spd), dpw));
        }
    }
    return add(embedding_mean(bind(tape, "emb.tod"), tod), embedding_mean(bind(tape, "emb.dow"), dow));
}

Var NestModel::encode_past(Tape& tape, const Tensor& x, const std::vector<std::int64_t>& origin) {
    const std::size_t B = origin.size(), N = config_.nodes;
    const Shape want{B * N, config_.lookback * config_.channels};
    if (x.shape() != want) {
        throw std::invalid_argument("encode_past: input " + shape_string(x.shape()) + ", expected " + shape_string(want));
    }
    std::vector<std::int64_t> first(B);
    for (std::size_t b = 0; b < B; ++b) first[b] = origin[b] - static_cast<std::int64_t>(config_.lookback);
    Var h = linear(tape.constant(x), bind(tape, "enc.x.w"), bind(tape, "enc.x.b"));
    h = add_grouped(h, time_embedding(tape, first, config_.lookback));
    return add_tiled(h, bind(tape, "emb.node"));
}

Var NestModel::encode_guidance(Tape& tape, const Tensor& guidance, const std::vector<std::int64_t>& guidance_origin) {
    const std::size_t B = guidance_origin.size(), M = config_.regions;
    const Shape want{B * M, config_.patch * config_.channels};
    if (!guidance.empty() && guidance.shape() != want) {
        throw std::invalid_argument("encode_guidance: input " + shape_string(guidance.shape()) + ", expected " +
                                    shape_string(want));
    }
    // Zero masks leave only the bias of the affine map.
    Var h = linear(tape.constant(guidance.empty() ? Tensor(want) : guidance), bind(tape, "enc.z.w"),
                   bind(tape, "enc.z.b"));
    h = add_grouped(h, time_embedding(tape, guidance_origin, config_.patch));
    return add_tiled(h, bind(tape, "emb.region"));
}

Var NestModel::attend(Tape& tape, const std::string& prefix, Var query, Var keys, std::size_t batch) {
    Var q = linear(query, bind(tape, prefix + ".q.w"));
    Var k = linear(keys, bind(tape, prefix + ".k.w"));
    Var v = linear(keys, bind(tape, prefix + ".v.w"));
    return linear(scaled_dot_attention(q, k, v, batch), bind(tape, prefix + ".o.w"));
}

Var NestModel::block_mlp(Tape& tape, const std::string& prefix, Var h) {
    Var hidden = gelu(linear(h, bind(tape, prefix + ".mlp1.w"), bind(tape, prefix + ".mlp1.b")));
    return add(h, linear(hidden, bind(tape, prefix + ".mlp2.w"), bind(tape, prefix + ".mlp2.b")));
}

EncodedTokens NestModel::cross_scale_layer(Tape& tape, std::size_t layer, EncodedTokens tokens, std::size_t batch) {
    if (layer >= config_.layers) throw std::out_of_range("cross_scale_layer: layer " + std::to_string(layer));
    const std::string p = "layer" + std::to_string(layer);
    Var hx = tokens.nodes;
    if (config_.cross_attention) hx = add(hx, attend(tape, p + ".td", hx, tokens.regions, batch));
    if (config_.mlp) hx = block_mlp(tape, p + ".td", hx);
    Var hz = tokens.regions;
    if (config_.cross_attention) hz = add(hz, attend(tape, p + ".bu", hz, hx, batch));
    if (config_.mlp) hz = block_mlp(tape, p + ".bu", hz);
    return {hx, hz};
}

ForecastBundle NestModel::forward(Tape& tape, const ForwardInput& input) {
    const std::size_t B = input.batch();
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    if (input.guidance_origin.size() != B) throw std::invalid_argument("forward: origin lists differ in length");
    EncodedTokens tokens{encode_past(tape, input.x, input.origin),
                         encode_guidance(tape, input.guidance, input.guidance_origin)};
    for (std::size_t l = 0; l < config_.layers; ++l) tokens = cross_scale_layer(tape, l, tokens, B);

    ForecastBundle out;
    out.node = linear(tokens.nodes, bind(tape, "head.x.w"), bind(tape, "head.x.b"));
    for (std::size_t q = 0; q < config_.quantiles.size(); ++q) {
        const std::string h = "head.z" + std::to_string(q);
        out.next.push_back(linear(tokens.regions, bind(tape, h + ".w"), bind(tape, h + ".b")));
    }
    // Boundary decoder: zero-mask region tokens read the enriched node tokens.
    Var hb = encode_guidance(tape, Tensor(), input.guidance_origin);
    if (config_.cross_attention) hb = add(hb, attend(tape, "bd", hb, tokens.nodes, B));
    for (std::size_t q = 0; q < config_.quantiles.size(); ++q) {
        const std::string h = "head.bd" + std::to_string(q);
        out.boundary.push_back(linear(hb, bind(tape, h + ".w"), bind(tape, h + ".b")));
    }
    return out;
}

Forecast predict(NestModel& model, const ForwardInput& input) {
    Tape tape(false);
    ForecastBundle b = model.forward(tape, input);
    Forecast f;
    f.node = b.node.value();
    for (const Var& v : b.next) f.next.push_back(v.value());
    for (const Var& v : b.boundary) f.boundary.push_back(v.value());
    return f;
}

LossTerms composite_loss(const ModelConfig& config, Var node, const std::vector<Var>& next,
                         const std::vector<Var>& boundary, const Tensor& node_target, const Tensor& next_target,
                         const Tensor& boundary_target, double lambda1, double lambda2) {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("composite_loss: weights must be nonnegative");
    Var lx = huber_loss(node, node_target, config.huber_delta);
    Var lz = pinball_loss(next, next_target, config.quantiles);
    Var lb = pinball_loss(boundary, boundary_target, config.quantiles);
    const Var terms[] = {lx, lz, lb};
    const double weights[] = {1.0, lambda1, lambda2};
    LossTerms out;
    out.total = weighted_sum(terms, weights);
    out.node = lx.value()[0];
    out.next = lz.value()[0];
    out.boundary = lb.value()[0];
    return out;
}

}  // namespace nest
