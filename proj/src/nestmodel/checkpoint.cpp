#include <stdexcept>
#include <string>

#include <json.hpp>

#include "nest/binary_io.hpp"
#include "nest/model.hpp"

namespace nest {

namespace {

constexpr std::string_view kCheckpointMagic{"NESTCK1\0", 8};
const std::string kBufferPrefix = "buffer.";

struct NamedTensor {
    std::string name;
    const Tensor* value;
};

std::size_t tensor_bytes(const NamedTensor& t) {
    return 4 + t.name.size() + 4 + 4 * t.value->rank() + 8 * t.value->size();
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"nodes", c.nodes},
            {"regions", c.regions},
            {"channels", c.channels},
            {"lookback", c.lookback},
            {"patch", c.patch},
            {"embed_dim", c.embed_dim},
            {"attn_dim", c.attn_dim},
            {"layers", c.layers},
            {"quantiles", c.quantiles},
            {"steps_per_day", c.steps_per_day},
            {"days_per_week", c.days_per_week},
            {"huber_delta", c.huber_delta},
            {"mlp", c.mlp},
            {"cross_attention", c.cross_attention}};
}

ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.nodes = j.at("nodes").get<std::size_t>();
    c.regions = j.at("regions").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.lookback = j.at("lookback").get<std::size_t>();
    c.patch = j.at("patch").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.attn_dim = j.at("attn_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.quantiles = j.at("quantiles").get<std::vector<double>>();
    c.steps_per_day = j.at("steps_per_day").get<std::uint32_t>();
    c.days_per_week = j.at("days_per_week").get<std::uint32_t>();
    c.huber_delta = j.at("huber_delta").get<double>();
    c.mlp = j.at("mlp").get<bool>();
    c.cross_attention = j.at("cross_attention").get<bool>();
    c.validate();
    return c;
}

}  // namespace

std::string config_json(const ModelConfig& config) { return to_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) { return from_json(nlohmann::json::parse(text)); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    ckpt.config.validate();
    const std::string manifest =
        nlohmann::json{{"config", to_json(ckpt.config)}, {"seed", ckpt.seed}, {"step", ckpt.step}, {"guidance", to_string(ckpt.guidance)}}.dump();
    std::vector<NamedTensor> tensors;
    for (const Parameter& p : ckpt.params) tensors.push_back({p.name, &p.value});
    tensors.push_back({kBufferPrefix + "norm.mean", &ckpt.norm.mean});
    tensors.push_back({kBufferPrefix + "norm.std", &ckpt.norm.stddev});

    std::size_t total = kCheckpointMagic.size() + 8 + 4 + manifest.size() + 4 + 8;
    for (const auto& t : tensors) total += tensor_bytes(t);

    ByteWriter w;
    w.raw(kCheckpointMagic);
    w.u64(total);
    w.str(manifest);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.value->rank()));
        for (std::size_t e : t.value->shape()) w.u32(static_cast<std::uint32_t>(e));
        w.f64s(t.value->values());
    }
    w.seal();
    return w.bytes();
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
    ByteReader r(std::move(bytes), kCheckpointMagic, "checkpoint");
    const std::uint64_t total = r.u64();
    r.verify(static_cast<std::size_t>(total));
    Checkpoint ckpt;
    try {
        const auto manifest = nlohmann::json::parse(r.str());
        ckpt.config = from_json(manifest.at("config"));
        ckpt.seed = manifest.at("seed").get<std::uint64_t>();
        ckpt.step = manifest.at("step").get<std::uint64_t>();
        ckpt.guidance = guidance_mode_from_string(manifest.value("guidance", std::string("future")));
    } catch (const std::exception& e) {
        throw FormatError(FormatError::Kind::invalid, std::string("checkpoint manifest: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    bool have_mean = false, have_std = false;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& e : shape) e = r.u32();
        Tensor value(shape);
        r.f64s(value.values());
        if (name == kBufferPrefix + "norm.mean") {
            ckpt.norm.mean = std::move(value);
            have_mean = true;
        } else if (name == kBufferPrefix + "norm.std") {
            ckpt.norm.stddev = std::move(value);
            have_std = true;
        } else {
            try {
                ckpt.params.add(name, std::move(value));
            } catch (const std::invalid_argument& e) {
                throw FormatError(FormatError::Kind::invalid, std::string("checkpoint: ") + e.what());
            }
        }
    }
    r.finish();
    if (!have_mean || !have_std) throw FormatError(FormatError::Kind::invalid, "checkpoint: normalization buffers missing");
    try {
        NestModel check(ckpt.config, ckpt.params);
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::invalid, std::string("checkpoint: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_bytes(path)); }

}  // namespace nest
