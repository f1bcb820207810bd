#include "nest/run_config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "nest/binary_io.hpp"

namespace nest {

SyntheticSpec DataConfig::synthetic() const {
    SyntheticSpec s;
    s.n_regions = regions;
    s.nodes_per_region = nodes_per_region;
    s.steps = days * steps_per_day;
    s.steps_per_day = steps_per_day;
    s.noise_sigma = noise;
    s.signal_scale = signal_scale;
    s.offset_scale = offset_scale;
    s.shift_rate = shift_rate;
    s.shift_scale = shift_scale;
    s.lead_fraction = lead_fraction;
    s.lead_steps = lead_steps;
    s.seed = seed;
    return s;
}

void RunConfig::set_seed(std::uint64_t seed) {
    data.seed = seed;
    experiment.region.seed = seed;
    experiment.train.seed = seed;
}

void RunConfig::validate() const {
    if (data.regions == 0 || data.nodes_per_region == 0 || data.days == 0 || data.steps_per_day == 0)
        throw ConfigError("data: regions, nodes_per_region, days and steps_per_day must be positive");
    if (!(data.noise >= 0.0)) throw ConfigError("data: noise must be >= 0");
    const SplitSpec& s = experiment.split;
    if (!(s.train > 0.0 && s.val > 0.0 && s.test > 0.0) || std::abs(s.train + s.val + s.test - 1.0) > 1e-9)
        throw ConfigError("split: fractions must be positive and sum to 1");
    if (experiment.region.regions == 0 && !(experiment.region.m_ratio > 0.0 && experiment.region.m_ratio <= 1.0))
        throw ConfigError("region: m_ratio must be in (0, 1]");
    if (experiment.horizon == 0) throw ConfigError("eval: horizon must be positive");
    if (experiment.eval_stride == 0) throw ConfigError("eval: stride must be positive");
    for (std::size_t s : experiment.report_steps)
        if (s == 0 || s > experiment.horizon) throw ConfigError("eval: report steps must lie in [1, horizon]");
    try {
        experiment.train.validate();
        ModelConfig m = experiment.model;
        m.nodes = 1;
        m.regions = 1;
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size())
        throw ConfigError("bad value for " + key + ": '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("bad value for " + key + ": '" + text + "' (expected true or false)");
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_floating_point_v<T>) out += format_double(xs[i]);
        else out += std::to_string(xs[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
std::vector<T> split_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
    return out;
}

struct Field {
    std::string section, key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

// Binds a numeric member reached through `ref`.
template <class Ref>
Field number(std::string section, std::string key, Ref ref) {
    const std::string name = section + "." + key;
    return Field{section, key,
                 [ref](const RunConfig& c) {
                     const auto& v = ref(const_cast<RunConfig&>(c));
                     if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) return format_double(v);
                     else return std::to_string(v);
                 },
                 [ref, name](RunConfig& c, const std::string& text) {
                     auto& v = ref(c);
                     v = parse_number<std::decay_t<decltype(v)>>(name, text);
                 }};
}

template <class Ref>
Field flag(std::string section, std::string key, Ref ref) {
    const std::string name = section + "." + key;
    return Field{section, key,
                 [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
                 [ref, name](RunConfig& c, const std::string& text) { ref(c) = parse_bool(name, text); }};
}

template <class Ref>
Field list(std::string section, std::string key, Ref ref) {
    const std::string name = section + "." + key;
    return Field{section, key, [ref](const RunConfig& c) { return join(ref(const_cast<RunConfig&>(c))); },
                 [ref, name](RunConfig& c, const std::string& text) {
                     auto& v = ref(c);
                     v = split_list<typename std::decay_t<decltype(v)>::value_type>(name, text);
                 }};
}

#define NEST_REF(path) [](RunConfig& c) -> auto& { return c.path; }

const std::vector<Field>& schema() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f;
        f.push_back(number("data", "regions", NEST_REF(data.regions)));
        f.push_back(number("data", "nodes_per_region", NEST_REF(data.nodes_per_region)));
        f.push_back(number("data", "days", NEST_REF(data.days)));
        f.push_back(number("data", "steps_per_day", NEST_REF(data.steps_per_day)));
        f.push_back(number("data", "noise", NEST_REF(data.noise)));
        f.push_back(number("data", "signal_scale", NEST_REF(data.signal_scale)));
        f.push_back(number("data", "offset_scale", NEST_REF(data.offset_scale)));
        f.push_back(number("data", "shift_rate", NEST_REF(data.shift_rate)));
        f.push_back(number("data", "shift_scale", NEST_REF(data.shift_scale)));
        f.push_back(number("data", "lead_fraction", NEST_REF(data.lead_fraction)));
        f.push_back(number("data", "lead_steps", NEST_REF(data.lead_steps)));
        f.push_back(number("data", "seed", NEST_REF(data.seed)));

        f.push_back(number("split", "train", NEST_REF(experiment.split.train)));
        f.push_back(number("split", "val", NEST_REF(experiment.split.val)));
        f.push_back(number("split", "test", NEST_REF(experiment.split.test)));

        f.push_back(number("region", "regions", NEST_REF(experiment.region.regions)));
        f.push_back(number("region", "m_ratio", NEST_REF(experiment.region.m_ratio)));
        f.push_back(number("region", "chunks", NEST_REF(experiment.region.chunks)));
        f.push_back(number("region", "sigma", NEST_REF(experiment.region.sigma)));
        f.push_back(Field{"region", "chunk_mode",
                          [](const RunConfig& c) {
                              return std::string(c.experiment.region.mode == ChunkMode::full ? "full" : "mean");
                          },
                          [](RunConfig& c, const std::string& v) {
                              if (v == "full") c.experiment.region.mode = ChunkMode::full;
                              else if (v == "mean") c.experiment.region.mode = ChunkMode::mean;
                              else throw ConfigError("bad value for region.chunk_mode: '" + v + "' (full or mean)");
                          }});
        f.push_back(number("region", "kmeans_restarts", NEST_REF(experiment.region.kmeans_restarts)));
        f.push_back(number("region", "kmeans_iterations", NEST_REF(experiment.region.kmeans_iterations)));
        f.push_back(number("region", "seed", NEST_REF(experiment.region.seed)));

        f.push_back(number("model", "lookback", NEST_REF(experiment.model.lookback)));
        f.push_back(number("model", "patch", NEST_REF(experiment.model.patch)));
        f.push_back(number("model", "embed_dim", NEST_REF(experiment.model.embed_dim)));
        f.push_back(number("model", "attn_dim", NEST_REF(experiment.model.attn_dim)));
        f.push_back(number("model", "layers", NEST_REF(experiment.model.layers)));
        f.push_back(list("model", "quantiles", NEST_REF(experiment.model.quantiles)));
        f.push_back(number("model", "huber_delta", NEST_REF(experiment.model.huber_delta)));
        f.push_back(flag("model", "mlp", NEST_REF(experiment.model.mlp)));
        f.push_back(flag("model", "cross_attention", NEST_REF(experiment.model.cross_attention)));

        f.push_back(number("train", "epochs", NEST_REF(experiment.train.epochs)));
        f.push_back(number("train", "decay", NEST_REF(experiment.train.decay)));
        f.push_back(number("train", "min_teacher", NEST_REF(experiment.train.min_teacher)));
        f.push_back(number("train", "learning_rate", NEST_REF(experiment.train.learning_rate)));
        f.push_back(number("train", "beta1", NEST_REF(experiment.train.beta1)));
        f.push_back(number("train", "beta2", NEST_REF(experiment.train.beta2)));
        f.push_back(number("train", "adam_eps", NEST_REF(experiment.train.adam_eps)));
        f.push_back(number("train", "weight_decay", NEST_REF(experiment.train.weight_decay)));
        f.push_back(number("train", "clip_norm", NEST_REF(experiment.train.clip_norm)));
        f.push_back(number("train", "batch_size", NEST_REF(experiment.train.batch_size)));
        f.push_back(number("train", "patience", NEST_REF(experiment.train.patience)));
        f.push_back(number("train", "lambda1", NEST_REF(experiment.train.lambda1)));
        f.push_back(number("train", "lambda2", NEST_REF(experiment.train.lambda2)));
        f.push_back(number("train", "seed", NEST_REF(experiment.train.seed)));
        f.push_back(number("train", "windows_per_epoch", NEST_REF(experiment.train.windows_per_epoch)));
        f.push_back(number("train", "val_stride", NEST_REF(experiment.train.val_stride)));
        f.push_back(number("train", "val_horizon", NEST_REF(experiment.train.val_horizon)));
        f.push_back(Field{"train", "guidance",
                          [](const RunConfig& c) { return to_string(c.experiment.train.guidance); },
                          [](RunConfig& c, const std::string& v) {
                              try {
                                  c.experiment.train.guidance = guidance_mode_from_string(v);
                              } catch (const std::invalid_argument&) {
                                  throw ConfigError("bad value for train.guidance: '" + v + "' (future or past)");
                              }
                          }});

        f.push_back(number("eval", "horizon", NEST_REF(experiment.horizon)));
        f.push_back(number("eval", "stride", NEST_REF(experiment.eval_stride)));
        f.push_back(list("eval", "report_steps", NEST_REF(experiment.report_steps)));
        return f;
    }();
    return fields;
}

#undef NEST_REF

}  // namespace

std::string serialize(const RunConfig& config) {
    boost::property_tree::ptree tree;
    for (const Field& f : schema()) tree.put(boost::property_tree::ptree::path_type(f.section + "." + f.key, '.'), f.get(config));
    std::ostringstream out;
    boost::property_tree::write_ini(out, tree);
    return out.str();
}

RunConfig parse_run_config(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    std::map<std::string, const Field*> by_name;
    for (const Field& f : schema()) by_name[f.section + "." + f.key] = &f;
    RunConfig config;
    for (const auto& [section, keys] : tree) {
        if (keys.empty()) throw ConfigError("key " + section + " outside any section, or empty section");
        for (const auto& [key, value] : keys) {
            const std::string name = section + "." + key;
            const auto it = by_name.find(name);
            if (it == by_name.end()) throw ConfigError("unknown key " + name);
            it->second->set(config, trim(value.data()));
        }
    }
    config.validate();
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize(config);
}

bool same_config(const RunConfig& a, const RunConfig& b) { return serialize(a) == serialize(b); }

std::string config_hash(const RunConfig& config) {
    const std::string text = serialize(config);
    const auto h = fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace nest
