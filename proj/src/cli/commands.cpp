#include "nest/cli.hpp"

#include <Eigen/Core>
#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "nest/binary_io.hpp"
#include "nest/snrcheck.hpp"

#ifndef NEST_VERSION
#define NEST_VERSION "0.0.0"
#endif

namespace nest::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit statuses by error class.
constexpr int kUsage = 2;
constexpr int kConfig = 3;
constexpr int kFormat = 4;
constexpr int kIo = 5;
constexpr int kInvalid = 6;
constexpr int kRuntime = 1;

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string file_hash(const fs::path& p) {
    const auto bytes = read_bytes(p);
    return hex64(fnv1a64(bytes));
}

fs::path manifest_path(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
    ensure_parent(p);
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + p.string() + "'");
}

std::optional<std::vector<int>> planted_labels(const fs::path& data) {
    if (!fs::exists(manifest_path(data))) return std::nullopt;
    const json m = read_manifest(data);
    if (!m.contains("labels")) return std::nullopt;
    return m.at("labels").get<std::vector<int>>();
}

RunConfig base_config(const std::string& path) {
    RunConfig c;
    if (!path.empty()) c = load_run_config(path);
    return c;
}

template <class T>
void override_if(const CLI::Option* opt, const T& value, T& target) {
    if (opt->count() > 0) target = value;
}

SeriesTensor generate(const RunConfig& c, std::vector<int>* labels) {
    SyntheticData d = generate_synthetic(c.data.synthetic());
    if (labels) *labels = d.series.labels;
    return std::move(d.series);
}

void save_dataset_with_manifest(const SeriesTensor& data, const fs::path& out, const RunConfig& config,
                                const std::string& command) {
    ensure_parent(out);
    save_dataset(data, out);
    json extra{{"nodes", data.nodes()}, {"steps", data.steps()}, {"channels", data.channels()}};
    if (!data.labels.empty()) extra["labels"] = data.labels;
    write_manifest(out, command, config, {}, extra);
}

RegionModel cluster_data(const SeriesTensor& data, const RunConfig& config) {
    const SplitRanges ranges = experiment_ranges(data, config.experiment);
    return regionalize(data.slice(ranges.train.begin, ranges.train.end), config.experiment.region);
}

json cluster_extra(const RegionModel& r, const std::optional<std::vector<int>>& planted) {
    json extra{{"nodes", r.nodes},   {"regions", r.regions},     {"chunks", r.chunks},
               {"sigma", r.sigma},   {"objective", r.objective}, {"labels", r.labels}};
    if (planted) extra["ari"] = adjusted_rand_index(r.labels, *planted);
    return extra;
}

struct Trained {
    TrainedModel model;
    std::vector<std::string> history;
};

Trained train_to(const SeriesTensor& data, const RegionModel& regions, const RunConfig& config, const fs::path& dir,
                 const std::vector<fs::path>& inputs, std::ostream* progress) {
    fs::create_directories(dir);
    Trained t;
    t.model = train_model(data, regions, config.experiment, [&](const EpochRecord& e) {
        t.history.push_back(to_json_line(e));
        if (progress) *progress << t.history.back() << "\n";
    });
    std::string lines;
    for (const auto& l : t.history) lines += l + "\n";
    write_text(dir / "history.jsonl", lines);
    save_run_config(config, dir / "run.ini");
    save_checkpoint(t.model.checkpoint, dir / "checkpoint.nest");
    const TrainResult& r = t.model.training;
    write_manifest(dir / "checkpoint.nest", "train", config, inputs,
                   {{"best_epoch", r.best_epoch},
                    {"best_val_mae", r.best_val_mae},
                    {"steps", r.steps},
                    {"early_stopped", r.early_stopped},
                    {"guidance", to_string(config.experiment.train.guidance)}});
    return t;
}

std::vector<std::uint32_t> checked_labels(const RegionModel& regions, const Checkpoint& ckpt, const SeriesTensor& data) {
    if (regions.nodes != data.nodes() || ckpt.config.nodes != data.nodes())
        throw std::invalid_argument("checkpoint, region file and data disagree on the node count");
    if (regions.regions != ckpt.config.regions)
        throw std::invalid_argument("region file has " + std::to_string(regions.regions) + " regions, checkpoint " +
                                    std::to_string(ckpt.config.regions));
    return regions.labels;
}

/// Forecast of `horizon` steps starting at `origin`, raw units, as a series
/// whose calendar starts at the first forecast step.
SeriesTensor infer_series(const Checkpoint& ckpt, const SeriesTensor& data, std::span<const std::uint32_t> labels,
                          std::size_t origin, std::size_t horizon) {
    const ModelConfig& c = ckpt.config;
    if (origin < c.lookback || origin > data.steps())
        throw std::invalid_argument("infer: origin " + std::to_string(origin) + " needs " + std::to_string(c.lookback) +
                                    " history steps inside a series of " + std::to_string(data.steps()));
    NestModel model(c, ckpt.params);
    const SeriesTensor normalized = normalize(data, ckpt.norm);
    const std::vector<std::size_t> origins{origin};
    RolloutOptions opts;
    opts.mode = ckpt.guidance;
    opts.labels.assign(labels.begin(), labels.end());
    const RolloutResult r = rollout(model, history_block(normalized, c, origins),
                                    {data.timestamp(0) + static_cast<std::int64_t>(origin)}, horizon, opts);
    SeriesTensor out(c.nodes, horizon, c.channels);
    out.steps_per_day = data.steps_per_day;
    out.days_per_week = data.days_per_week;
    out.start_offset = static_cast<std::uint32_t>(data.start_offset + origin);
    for (std::size_t i = 0; i < c.nodes; ++i)
        for (std::size_t h = 0; h < horizon; ++h)
            for (std::size_t ch = 0; ch < c.channels; ++ch) out.at(i, h, ch) = r.forecast.at(i, h * c.channels + ch);
    denormalize_values(out.values, ckpt.norm);
    return out;
}

/// Metrics of a forecast file against the data over the forecast's steps.
MetricsReport compare_forecast(const SeriesTensor& forecast, const SeriesTensor& truth,
                               std::span<const std::size_t> steps) {
    if (forecast.nodes() != truth.nodes() || forecast.channels() != truth.channels())
        throw std::invalid_argument("eval: forecast and data shapes differ");
    if (forecast.start_offset < truth.start_offset ||
        forecast.start_offset - truth.start_offset + forecast.steps() > truth.steps())
        throw std::invalid_argument("eval: forecast steps fall outside the data");
    const std::size_t first = forecast.start_offset - truth.start_offset, H = forecast.steps();
    const std::size_t width = truth.nodes() * truth.channels();
    std::vector<double> pred(H * width), real(H * width);
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < truth.nodes(); ++i)
            for (std::size_t c = 0; c < truth.channels(); ++c) {
                const std::size_t k = h * width + i * truth.channels() + c;
                pred[k] = forecast.at(i, h, c);
                real[k] = truth.at(i, first + h, c);
            }
    std::vector<std::size_t> kept;
    for (std::size_t s : steps)
        if (s <= H) kept.push_back(s);
    return metrics_report(pred, real, H, width, kept);
}

std::string per_step_csv(const WindowForecasts& f) {
    std::vector<std::size_t> all(f.horizon);
    for (std::size_t h = 0; h < f.horizon; ++h) all[h] = h + 1;
    const MetricsReport r = metrics_report(f.pred, f.truth, f.horizon, f.width, all);
    std::string csv = "step,mae,rmse,mape\n";
    for (const MetricSlice& s : r.horizons)
        csv += std::to_string(s.step) + "," + fmt(s.mae, 6) + "," + fmt(s.rmse, 6) + "," +
               (s.mape ? fmt(*s.mape, 6) : std::string()) + "\n";
    return csv;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty()) out << text;
    else write_text(path, text);
}

}  // namespace

unsigned configure_threads() {
    unsigned n = 1;
    if (const char* env = std::getenv("NEST_THREADS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) throw std::invalid_argument(std::string("NEST_THREADS must be a positive integer, got '") + env + "'");
        n = static_cast<unsigned>(v);
    }
    Eigen::setNbThreads(static_cast<int>(n));
    return n;
}

void write_manifest(const fs::path& output, const std::string& command, const RunConfig& config,
                    const std::vector<fs::path>& inputs, const json& extra) {
    json m{{"command", command},
           {"output", output.filename().string()},
           {"output_fnv1a64", file_hash(output)},
           {"config_hash", config_hash(config)},
           {"seeds", {{"data", config.data.seed}, {"region", config.experiment.region.seed}, {"train", config.experiment.train.seed}}},
           {"versions", {{"nest", NEST_VERSION}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION)}, {"compiler", __VERSION__}}}};
    json in = json::array();
    for (const fs::path& p : inputs) in.push_back({{"path", p.string()}, {"fnv1a64", file_hash(p)}});
    m["inputs"] = in;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_text(manifest_path(output), m.dump(2) + "\n");
}

json read_manifest(const fs::path& output) {
    const fs::path p = manifest_path(output);
    std::ifstream in(p);
    if (!in) throw IoError("cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::invalid, p.string() + ": " + e.what());
    }
}

json report_json(const MetricsReport& report) {
    auto slice = [](const MetricSlice& s) {
        json j{{"step", s.step}, {"samples", s.samples}, {"mae", s.mae}, {"rmse", s.rmse}, {"masked", s.masked}};
        j["mape"] = s.mape ? json(*s.mape) : json(nullptr);
        return j;
    };
    json h = json::array();
    for (const MetricSlice& s : report.horizons) h.push_back(slice(s));
    return json{{"horizons", h}, {"average", slice(report.average)}};
}

RunConfig demo_config(std::uint64_t seed) {
    RunConfig c;
    c.data.regions = 3;
    c.data.nodes_per_region = 16;
    c.data.days = 30;
    c.data.steps_per_day = 96;
    c.data.noise = 1.0;
    c.data.shift_rate = 1.0;
    c.data.shift_scale = 2.0;
    c.data.lead_fraction = 0.25;
    c.data.lead_steps = 8;
    ExperimentSpec& e = c.experiment;
    e.region.regions = 3;
    e.model.embed_dim = 16;
    e.model.layers = 2;
    e.train.epochs = 40;
    e.train.learning_rate = 1e-3;
    e.train.windows_per_epoch = 512;
    e.train.val_stride = 4;
    e.eval_stride = 4;
    c.set_seed(seed);
    return c;
}

DemoSummary run_demo(const RunConfig& config, const fs::path& dir) {
    config.validate();
    fs::create_directories(dir);
    const fs::path data_path = dir / "data.nest", region_path = dir / "regions.nest";

    SeriesTensor data = generate(config, nullptr);
    save_dataset_with_manifest(data, data_path, config, "gen-data");

    const RegionModel regions = cluster_data(data, config);
    save_regions(regions, region_path);
    DemoSummary s;
    s.ari = adjusted_rand_index(regions.labels, data.labels);
    write_manifest(region_path, "cluster", config, {data_path}, cluster_extra(regions, data.labels));

    RunConfig past = config;
    past.experiment.train.guidance = GuidanceMode::past;
    const Trained full = train_to(data, regions, config, dir / "full", {data_path, region_path}, nullptr);
    const Trained without = train_to(data, regions, past, dir / "past_guidance", {data_path, region_path}, nullptr);

    const ExperimentSpec& e = config.experiment;
    const SplitRanges ranges = experiment_ranges(data, e);
    const SeriesTensor forecast = infer_series(full.model.checkpoint, data, regions.labels, ranges.test.begin, e.horizon);
    save_dataset(forecast, dir / "forecast.nest");
    write_manifest(dir / "forecast.nest", "infer", config, {dir / "full" / "checkpoint.nest", data_path, region_path},
                   {{"origin", ranges.test.begin}, {"horizon", e.horizon}});

    const MetricsReport full_r = evaluate_checkpoint(full.model.checkpoint, data, regions.labels, ranges.test,
                                                     e.horizon, e.eval_stride, e.report_steps);
    const MetricsReport past_r = evaluate_checkpoint(without.model.checkpoint, data, regions.labels, ranges.test,
                                                     e.horizon, e.eval_stride, e.report_steps);
    const MetricsReport pers = persistence_report(data, ranges.test, e.model.lookback, e.horizon, e.eval_stride,
                                                  e.report_steps);
    json report{{"full", report_json(full_r)}, {"past_guidance", report_json(past_r)}, {"persistence", report_json(pers)}};
    write_text(dir / "eval.json", report.dump(2) + "\n");
    write_manifest(dir / "eval.json", "eval", config, {dir / "full" / "checkpoint.nest", dir / "past_guidance" / "checkpoint.nest"});

    s.full_mae = full_r.average.mae;
    s.past_guidance_mae = past_r.average.mae;
    s.persistence_mae = pers.average.mae;
    std::ostringstream t;
    t << "seed " << config.data.seed << "\n";
    t << "data: " << data.nodes() << " nodes, " << data.steps() << " steps, config " << config_hash(config) << "\n";
    t << "regions: " << regions.regions << " (ARI vs planted " << fmt(s.ari) << ")\n";
    t << "training: full " << full.model.training.history.size() << " epochs, past guidance "
      << without.model.training.history.size() << " epochs\n";
    auto row = [&](const std::string& name, const MetricsReport& r) {
        t << name;
        for (const MetricSlice& h : r.horizons) t << "  @" << h.step << " " << fmt(h.mae);
        t << "  avg MAE " << fmt(r.average.mae) << " RMSE " << fmt(r.average.rmse) << "\n";
    };
    t << "test metrics (raw units)\n";
    row("  w/ future guidance ", full_r);
    row("  w/o future guidance", past_r);
    row("  persistence        ", pers);
    t << "future guidance " << (s.full_mae < s.past_guidance_mae ? "beats" : "does not beat")
      << " past guidance; model " << (s.full_mae < s.persistence_mae ? "beats" : "does not beat") << " persistence\n";
    s.text = t.str();
    write_text(dir / "summary.txt", s.text);
    return s;
}

std::vector<BenchRow> run_bench(const BenchOptions& o) {
    Eigen::setNbThreads(1);
    std::vector<BenchRow> rows;
    for (std::size_t layers : o.layers) {
        for (std::size_t n : o.nodes) {
            ModelConfig c;
            c.nodes = n;
            c.regions = o.regions;
            c.lookback = o.lookback;
            c.patch = o.patch;
            c.embed_dim = o.embed_dim;
            c.layers = layers;
            NestModel model(c, o.seed);
            std::mt19937_64 rng(o.seed);
            std::normal_distribution<double> g;
            auto rnd = [&](Shape s) {
                Tensor t(std::move(s));
                for (double& v : t.values()) v = g(rng);
                return t;
            };
            ForwardInput in;
            in.x = rnd({n, c.lookback});
            in.guidance = rnd({c.regions, c.patch});
            in.origin = {0};
            in.guidance_origin = {0};
            const Tensor nt = rnd({n, c.patch}), zt = rnd({c.regions, c.patch});
            std::vector<double> times;
            for (std::size_t r = 0; r < o.warmup + o.runs; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                Tape tape;
                const ForecastBundle f = model.forward(tape, in);
                const LossTerms loss = composite_loss(c, f.node, f.next, f.boundary, nt, zt, zt, 0.1, 0.2);
                model.params().zero_grad();
                tape.backward(loss.total);
                const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (r >= o.warmup) times.push_back(dt);
            }
            std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
            BenchRow row{n, o.regions, o.embed_dim, layers, o.runs, times[times.size() / 2], {}};
            row.cost = attention_cost(n, o.regions, o.embed_dim, layers, c.resolved_attn_dim(), c.mlp);
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::string csv = "nodes,regions,embed_dim,layers,runs,median_seconds,cross_madds,projection_madds,self_attention_madds\n";
    for (const BenchRow& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%.6f,%llu,%llu,%llu\n", r.nodes, r.regions, r.embed_dim,
                      r.layers, r.runs, r.median_seconds, static_cast<unsigned long long>(r.cost.cross),
                      static_cast<unsigned long long>(r.cost.projection),
                      static_cast<unsigned long long>(r.cost.self_attention));
        csv += buf;
    }
    return csv;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Regional guidance forecaster: data, clustering, training, inference and evaluation", "nest"};
    app.require_subcommand(1);
    app.set_version_flag("--version", NEST_VERSION);
    std::string config_path;
    std::optional<std::uint64_t> seed;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "INI run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Seed for every stochastic component");
    };

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a planted-region synthetic dataset");
    add_common(gen);
    DataConfig g;
    std::string gen_out;
    std::vector<CLI::Option*> gen_opts{
        gen->add_option("--regions", g.regions, "Planted regions"),
        gen->add_option("--nodes-per-region", g.nodes_per_region, "Nodes per region"),
        gen->add_option("--days", g.days, "Days of data"),
        gen->add_option("--steps-per-day", g.steps_per_day, "Samples per day"),
        gen->add_option("--noise", g.noise, "Node noise standard deviation"),
        gen->add_option("--shift-rate", g.shift_rate, "Expected regime shifts per region per day"),
        gen->add_option("--shift-scale", g.shift_scale, "Standard deviation of a regime shift"),
        gen->add_option("--lead-fraction", g.lead_fraction, "Fraction of nodes that see a shift early"),
        gen->add_option("--lead-steps", g.lead_steps, "Steps of lead for those nodes")};
    gen->add_option("--out", gen_out, "Output dataset file")->required();

    // cluster
    auto* clu = app.add_subcommand("cluster", "Partition nodes into regions on the training split");
    add_common(clu);
    std::string clu_data, clu_out;
    double m_ratio = 0.2;
    std::size_t clu_regions = 0, clu_chunks = 0;
    clu->add_option("--data", clu_data, "Dataset file")->required()->check(CLI::ExistingFile);
    auto* o_ratio = clu->add_option("--m-ratio", m_ratio, "Regions as a fraction of nodes")->capture_default_str();
    auto* o_regions = clu->add_option("--regions", clu_regions, "Explicit region count (overrides --m-ratio)");
    auto* o_chunks = clu->add_option("--chunks", clu_chunks, "Time chunks for the affinity");
    clu->add_option("--out", clu_out, "Output region file")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a model against a region file");
    add_common(tr);
    std::string tr_data, tr_regions, tr_out, tr_guidance;
    std::size_t tr_epochs = 0;
    tr->add_option("--data", tr_data, "Dataset file")->required()->check(CLI::ExistingFile);
    tr->add_option("--regions", tr_regions, "Region file")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output directory")->required();
    auto* o_epochs = tr->add_option("--epochs", tr_epochs, "Epoch count");
    auto* o_guidance = tr->add_option("--guidance", tr_guidance, "future or past")->check(CLI::IsMember({"future", "past"}));

    // infer
    auto* inf = app.add_subcommand("infer", "Forecast from a checkpoint");
    add_common(inf);
    std::string inf_ckpt, inf_data, inf_regions, inf_out;
    std::size_t inf_h = 12;
    std::optional<std::size_t> inf_origin;
    inf->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    inf->add_option("--data", inf_data, "Dataset file")->required()->check(CLI::ExistingFile);
    inf->add_option("--regions", inf_regions, "Region file")->required()->check(CLI::ExistingFile);
    inf->add_option("--horizon", inf_h, "Forecast steps")->capture_default_str()->check(CLI::PositiveNumber);
    inf->add_option("--origin", inf_origin, "First forecast step (default: just past the data)");
    inf->add_option("--out", inf_out, "Output forecast file")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Metrics on the test split, or of a forecast file");
    add_common(ev);
    std::string ev_ckpt, ev_forecast, ev_data, ev_regions, ev_out, ev_csv;
    std::size_t ev_h = 0, ev_stride = 0;
    ev->add_option("--data", ev_data, "Dataset file (truth)")->required()->check(CLI::ExistingFile);
    auto* o_ckpt = ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to roll out over the test split")->check(CLI::ExistingFile);
    auto* o_fc = ev->add_option("--forecast", ev_forecast, "Forecast file to score")->check(CLI::ExistingFile);
    o_ckpt->excludes(o_fc);
    ev->add_option("--regions", ev_regions, "Region file (with --checkpoint)")->check(CLI::ExistingFile);
    auto* o_evh = ev->add_option("--horizon", ev_h, "Forecast steps (with --checkpoint)");
    auto* o_evs = ev->add_option("--stride", ev_stride, "Spacing of test windows");
    ev->add_option("--out", ev_out, "JSON report file (default stdout)");
    ev->add_option("--csv", ev_csv, "Per-step CSV file (with --checkpoint)");

    // snr-check
    auto* snr = app.add_subcommand("snr-check", "Check the center-node SNR bound on random clusters");
    add_common(snr);
    std::size_t snr_n = 1000;
    RandomClusterSpec cs;
    std::string snr_out;
    snr->add_option("--clusters", snr_n, "Clusters to test")->capture_default_str();
    snr->add_option("--min-size", cs.min_size, "Smallest cluster")->capture_default_str();
    snr->add_option("--max-size", cs.max_size, "Largest cluster")->capture_default_str();
    snr->add_option("--length", cs.length, "Signal length")->capture_default_str();
    snr->add_flag("--equal-norms", cs.equal_norms, "Rescale members to a common norm");
    snr->add_option("--out", snr_out, "JSON report file (default stdout)");

    // bench
    auto* be = app.add_subcommand("bench", "Time forward plus backward passes (single thread)");
    BenchOptions bo;
    std::string be_out;
    be->add_option("--nodes", bo.nodes, "Node counts")->delimiter(',')->capture_default_str();
    be->add_option("--layers", bo.layers, "Layer counts")->delimiter(',')->capture_default_str();
    be->add_option("--regions", bo.regions, "Region count")->capture_default_str();
    be->add_option("--embed-dim", bo.embed_dim, "Embedding width")->capture_default_str();
    be->add_option("--runs", bo.runs, "Timed runs per config")->capture_default_str()->check(CLI::PositiveNumber);
    be->add_option("--warmup", bo.warmup, "Untimed warmup runs")->capture_default_str();
    be->add_option("--seed", bo.seed, "Seed for weights and inputs")->capture_default_str();
    be->add_option("--out", be_out, "CSV file (default stdout)");

    // demo
    auto* demo = app.add_subcommand("demo", "End-to-end run on regime-shift synthetic data");
    std::uint64_t demo_seed = 7;
    std::string demo_dir = "nest-demo";
    std::optional<std::size_t> demo_epochs;
    demo->add_option("--seed", demo_seed, "Seed")->capture_default_str();
    demo->add_option("--out", demo_dir, "Output directory")->capture_default_str();
    demo->add_option("--epochs", demo_epochs, "Override the epoch count");
    std::string demo_cfg;
    demo->add_option("--config", demo_cfg, "INI run configuration replacing the demo defaults")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: usage: " << e.what() << "\n";
        return kUsage;
    }

    try {
        configure_threads();
        if (gen->parsed()) {
            RunConfig c = base_config(config_path);
            const DataConfig& d = c.data;
            DataConfig merged = d;
            override_if(gen_opts[0], g.regions, merged.regions);
            override_if(gen_opts[1], g.nodes_per_region, merged.nodes_per_region);
            override_if(gen_opts[2], g.days, merged.days);
            override_if(gen_opts[3], g.steps_per_day, merged.steps_per_day);
            override_if(gen_opts[4], g.noise, merged.noise);
            override_if(gen_opts[5], g.shift_rate, merged.shift_rate);
            override_if(gen_opts[6], g.shift_scale, merged.shift_scale);
            override_if(gen_opts[7], g.lead_fraction, merged.lead_fraction);
            override_if(gen_opts[8], g.lead_steps, merged.lead_steps);
            c.data = merged;
            if (seed) c.set_seed(*seed);
            c.validate();
            const SeriesTensor data = generate(c, nullptr);
            save_dataset_with_manifest(data, gen_out, c, "gen-data");
            out << "wrote " << gen_out << ": " << data.nodes() << " nodes, " << data.steps() << " steps\n";
        } else if (clu->parsed()) {
            RunConfig c = base_config(config_path);
            if (o_ratio->count() > 0) {
                c.experiment.region.m_ratio = m_ratio;
                c.experiment.region.regions = 0;
            } else if (config_path.empty()) {
                c.experiment.region.m_ratio = m_ratio;
            }
            override_if(o_regions, clu_regions, c.experiment.region.regions);
            override_if(o_chunks, clu_chunks, c.experiment.region.chunks);
            if (seed) c.set_seed(*seed);
            c.validate();
            const SeriesTensor data = load_dataset(clu_data);
            const RegionModel r = cluster_data(data, c);
            ensure_parent(clu_out);
            save_regions(r, clu_out);
            const json extra = cluster_extra(r, planted_labels(clu_data));
            write_manifest(clu_out, "cluster", c, {clu_data}, extra);
            out << "wrote " << clu_out << ": " << r.regions << " regions over " << r.nodes << " nodes";
            if (extra.contains("ari")) out << ", ARI " << fmt(extra["ari"].get<double>());
            out << "\n";
        } else if (tr->parsed()) {
            RunConfig c = base_config(config_path);
            override_if(o_epochs, tr_epochs, c.experiment.train.epochs);
            if (o_guidance->count() > 0) c.experiment.train.guidance = guidance_mode_from_string(tr_guidance);
            if (seed) c.set_seed(*seed);
            c.validate();
            const SeriesTensor data = load_dataset(tr_data);
            const RegionModel regions = load_regions(tr_regions);
            const Trained t = train_to(data, regions, c, tr_out, {tr_data, tr_regions}, &out);
            out << "wrote " << (fs::path(tr_out) / "checkpoint.nest").string() << ": best epoch "
                << t.model.training.best_epoch << ", val MAE " << fmt(t.model.training.best_val_mae) << "\n";
        } else if (inf->parsed()) {
            RunConfig c = base_config(config_path);
            const Checkpoint ckpt = load_checkpoint(inf_ckpt);
            const SeriesTensor data = load_dataset(inf_data);
            const RegionModel regions = load_regions(inf_regions);
            const auto labels = checked_labels(regions, ckpt, data);
            const std::size_t origin = inf_origin.value_or(data.steps());
            const SeriesTensor f = infer_series(ckpt, data, labels, origin, inf_h);
            ensure_parent(inf_out);
            save_dataset(f, inf_out);
            write_manifest(inf_out, "infer", c, {inf_ckpt, inf_data, inf_regions},
                           {{"origin", origin}, {"horizon", inf_h}, {"guidance", to_string(ckpt.guidance)}});
            out << "wrote " << inf_out << ": " << inf_h << " steps from step " << origin << "\n";
        } else if (ev->parsed()) {
            RunConfig c = base_config(config_path);
            override_if(o_evh, ev_h, c.experiment.horizon);
            override_if(o_evs, ev_stride, c.experiment.eval_stride);
            c.validate();
            const ExperimentSpec& e = c.experiment;
            const SeriesTensor data = load_dataset(ev_data);
            json report;
            std::vector<fs::path> inputs{ev_data};
            if (!ev_forecast.empty()) {
                const SeriesTensor f = load_dataset(ev_forecast);
                report = {{"forecast", report_json(compare_forecast(f, data, e.report_steps))}};
                inputs.push_back(ev_forecast);
            } else {
                if (ev_ckpt.empty() || ev_regions.empty())
                    throw std::invalid_argument("eval needs --forecast, or --checkpoint with --regions");
                const Checkpoint ckpt = load_checkpoint(ev_ckpt);
                const RegionModel regions = load_regions(ev_regions);
                const auto labels = checked_labels(regions, ckpt, data);
                ExperimentSpec spec = e;
                spec.model.lookback = ckpt.config.lookback;
                spec.model.patch = ckpt.config.patch;
                const SplitRanges ranges = experiment_ranges(data, spec);
                const auto origins = evaluation_origins(ckpt.config.lookback, ranges.test, e.horizon, e.eval_stride);
                NestModel model(ckpt.config, ckpt.params);
                RolloutOptions opts;
                opts.mode = ckpt.guidance;
                opts.labels = labels;
                const WindowForecasts wf = forecast_windows(model, normalize(data, ckpt.norm), ckpt.norm, origins, e.horizon, opts);
                report = {{"model", report_json(metrics_report(wf.pred, wf.truth, wf.horizon, wf.width, e.report_steps))},
                          {"persistence", report_json(persistence_report(data, ranges.test, ckpt.config.lookback, e.horizon,
                                                                         e.eval_stride, e.report_steps))},
                          {"windows", origins.size()},
                          {"guidance", to_string(ckpt.guidance)}};
                inputs.push_back(ev_ckpt);
                inputs.push_back(ev_regions);
                if (!ev_csv.empty()) {
                    write_text(ev_csv, per_step_csv(wf));
                    write_manifest(ev_csv, "eval", c, inputs);
                }
            }
            emit(report.dump(2) + "\n", ev_out, out);
            if (!ev_out.empty()) write_manifest(ev_out, "eval", c, inputs);
        } else if (snr->parsed()) {
            RunConfig c = base_config(config_path);
            if (seed) c.set_seed(*seed);
            const SnrSweepReport r = snr_sweep(snr_n, cs, c.data.seed);
            json v = json::array();
            for (const NoisyCluster& k : r.violating) {
                const SnrBoundReport b = verify_snr_bound(k);
                v.push_back({{"signals", k.signals},
                             {"noise_variance", k.noise_variance},
                             {"snr_center", b.snr_center},
                             {"bound", b.bound},
                             {"slack", b.slack}});
            }
            const json report{{"clusters_tested", r.clusters_tested}, {"violations", r.violations},
                              {"min_slack", r.min_slack}, {"violating", v}};
            emit(report.dump(2) + "\n", snr_out, out);
            if (!snr_out.empty()) write_manifest(snr_out, "snr-check", c, {});
        } else if (be->parsed()) {
            const std::string csv = bench_csv(run_bench(bo));
            emit(csv, be_out, out);
            if (!be_out.empty()) {
                RunConfig c;
                c.set_seed(bo.seed);
                write_manifest(be_out, "bench", c, {});
            }
        } else if (demo->parsed()) {
            RunConfig c = demo_cfg.empty() ? demo_config(demo_seed) : load_run_config(demo_cfg);
            if (!demo_cfg.empty()) c.set_seed(demo_seed);
            if (demo_epochs) c.experiment.train.epochs = *demo_epochs;
            out << run_demo(c, demo_dir).text;
        }
    } catch (const ConfigError& e) {
        err << "error: config: " << e.what() << "\n";
        return kConfig;
    } catch (const FormatError& e) {
        static const char* kinds[] = {"bad_magic", "truncated", "checksum_mismatch", "invalid"};
        err << "error: " << kinds[static_cast<int>(e.kind())] << ": " << e.what() << "\n";
        return kFormat;
    } catch (const IoError& e) {
        err << "error: io: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: io: " << e.what() << "\n";
        return kIo;
    } catch (const std::invalid_argument& e) {
        err << "error: invalid: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::out_of_range& e) {
        err << "error: invalid: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        err << "error: runtime: " << e.what() << "\n";
        return kRuntime;
    }
    return 0;
}

}  // namespace nest::cli
