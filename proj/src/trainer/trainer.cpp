#include "nest/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nest/rollout.hpp"

namespace nest {

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("train config: " + msg);
    };
    need(epochs >= 1, "epochs must be positive");
    need(decay > 0.0 && decay <= 1.0, "decay must lie in (0, 1]");
    need(min_teacher >= 0.0 && min_teacher <= 1.0, "min_teacher must lie in [0, 1]");
    need(learning_rate > 0.0, "learning_rate must be positive");
    need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
    need(adam_eps > 0.0, "adam_eps must be positive");
    need(weight_decay >= 0.0, "weight_decay must be nonnegative");
    need(clip_norm >= 0.0, "clip_norm must be nonnegative");
    need(batch_size >= 1, "batch_size must be positive");
    need(patience >= 1, "patience must be positive");
    need(lambda1 >= 0.0 && lambda2 >= 0.0, "loss weights must be nonnegative");
    need(val_stride >= 1, "val_stride must be positive");
}

double sampling_prob(std::size_t epoch, double decay, double min_teacher) {
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("sampling_prob: decay must lie in (0, 1]");
    if (!(min_teacher >= 0.0 && min_teacher <= 1.0)) throw std::invalid_argument("sampling_prob: floor must lie in [0, 1]");
    return std::max(min_teacher, std::pow(decay, static_cast<double>(epoch)));
}

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(ParamStore& params) {
    if (m_.empty()) {
        for (const Parameter& p : params) {
            m_.emplace_back(p.value.shape());
            v_.emplace_back(p.value.shape());
        }
    }
    if (m_.size() != params.size()) throw std::logic_error("AdamW: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    std::size_t k = 0;
    for (Parameter& p : params) {
        double* w = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[k].data();
        double* v = v_[k].data();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            w[j] -= lr_ * (wd_ * w[j] + (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_));
        }
        ++k;
    }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
    double sq = 0.0;
    for (const Parameter& p : params)
        for (double g : p.grad.values()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (Parameter& p : params)
            for (double& g : p.grad.values()) g *= s;
    }
    return norm;
}

StepGraph build_step(Tape& tape, NestModel& model, const WindowBatch& batch, double p_tf, GuidanceMode mode,
                     double lambda1, double lambda2, std::mt19937_64& rng) {
    const ModelConfig& cfg = model.config();
    const std::size_t B = batch.input.batch(), M = cfg.regions, width = cfg.patch * cfg.channels;
    StepGraph out;
    if (mode == GuidanceMode::past) {
        ForecastBundle f = model.forward(tape, batch.input);
        out.guidance = batch.input.guidance;
        out.teacher_forced = B;
        out.loss = composite_loss(cfg, f.node, f.next, f.boundary, batch.node_target, batch.next_target,
                                  batch.boundary_target, lambda1, lambda2);
        return out;
    }
    // Boundary pass on zero masks; supervised whether or not its output is used.
    ForwardInput zero = batch.input;
    zero.guidance = Tensor();
    ForecastBundle bd = model.forward(tape, zero);
    // Only the value is reused, so nothing flows back through the guidance.
    const Tensor median = bd.boundary[cfg.median_index()].value();
    out.guidance = batch.input.guidance;
    std::bernoulli_distribution teacher(std::clamp(p_tf, 0.0, 1.0));
    for (std::size_t b = 0; b < B; ++b) {
        if (teacher(rng)) {
            ++out.teacher_forced;
            continue;
        }
        std::copy(median.data() + b * M * width, median.data() + (b + 1) * M * width,
                  out.guidance.data() + b * M * width);
    }
    ForwardInput main = batch.input;
    main.guidance = out.guidance;
    ForecastBundle f = model.forward(tape, main);
    out.loss = composite_loss(cfg, f.node, f.next, bd.boundary, batch.node_target, batch.next_target,
                              batch.boundary_target, lambda1, lambda2);
    return out;
}

StepStats train_step(NestModel& model, const WindowBatch& batch, double p_tf, const TrainConfig& config,
                     AdamW& optimizer, std::mt19937_64& rng) {
    Tape tape;
    StepGraph g = build_step(tape, model, batch, p_tf, config.guidance, config.lambda1, config.lambda2, rng);
    StepStats s;
    s.loss = g.loss.total.value()[0];
    s.node = g.loss.node;
    s.next = g.loss.next;
    s.boundary = g.loss.boundary;
    s.teacher_forced = g.teacher_forced;
    if (!std::isfinite(s.loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss (node " << s.node << ", next " << s.next << ", boundary " << s.boundary
            << ") at optimizer step " << optimizer.steps() + 1;
        throw std::runtime_error(msg.str());
    }
    model.params().zero_grad();
    tape.backward(g.loss.total);
    s.grad_norm = clip_grad_norm(model.params(), config.clip_norm);
    optimizer.step(model.params());
    return s;
}

std::string to_json_line(const EpochRecord& r) {
    return nlohmann::json{{"epoch", r.epoch},
                          {"train_loss", r.train_loss},
                          {"val_mae", r.val_mae},
                          {"p_tf", r.p_tf},
                          {"seconds", r.seconds}}
        .dump();
}

namespace {

double validation_mae(NestModel& model, const SeriesTensor& normalized, std::span<const std::uint32_t> labels,
                      std::span<const std::size_t> origins, std::size_t horizon, GuidanceMode mode) {
    const ModelConfig& cfg = model.config();
    const std::size_t N = cfg.nodes, C = cfg.channels;
    RolloutOptions opts;
    opts.mode = mode;
    opts.labels.assign(labels.begin(), labels.end());
    double total = 0.0;
    std::size_t count = 0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < origins.size(); start += kChunk) {
        const auto chunk = origins.subspan(start, std::min(kChunk, origins.size() - start));
        std::vector<std::int64_t> stamps;
        for (std::size_t t : chunk) stamps.push_back(normalized.timestamp(t));
        const RolloutResult r = rollout(model, history_block(normalized, cfg, chunk), stamps, horizon, opts);
        for (std::size_t b = 0; b < chunk.size(); ++b)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t h = 0; h < horizon; ++h)
                    for (std::size_t c = 0; c < C; ++c) {
                        total += std::abs(r.forecast[(b * N + i) * horizon * C + h * C + c] -
                                          normalized.at(i, chunk[b] + h, c));
                        ++count;
                    }
    }
    return total / static_cast<double>(count);
}

}  // namespace

TrainResult train_loop(NestModel& model, const SeriesTensor& normalized, std::span<const std::uint32_t> labels,
                       const SplitRanges& ranges, const TrainConfig& config,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
    config.validate();
    const ModelConfig& cfg = model.config();
    if (normalized.nodes() != cfg.nodes || normalized.channels() != cfg.channels) {
        throw std::invalid_argument("train_loop: series shape does not match the model");
    }
    if (labels.size() != cfg.nodes) throw std::invalid_argument("train_loop: one region label per node required");
    const WindowSource source(normalized, labels, cfg.regions);
    std::vector<std::size_t> train_origins = training_origins(cfg, config.guidance, ranges.train);
    if (train_origins.empty()) throw std::invalid_argument("train_loop: training split too short for one window");
    const std::size_t val_h = config.val_horizon ? config.val_horizon : cfg.patch;
    const auto val_origins = evaluation_origins(cfg.lookback, ranges.val, val_h, config.val_stride);
    if (val_origins.empty()) throw std::invalid_argument("train_loop: validation split too short for one window");

    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0x747261u};
    std::mt19937_64 rng(seq);
    AdamW opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
    TrainResult result;
    ParamStore best = model.params();
    result.best_val_mae = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double p_tf = sampling_prob(epoch, config.decay, config.min_teacher);
        std::shuffle(train_origins.begin(), train_origins.end(), rng);
        const std::size_t take = config.windows_per_epoch ? std::min(config.windows_per_epoch, train_origins.size())
                                                          : train_origins.size();
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < take; start += config.batch_size) {
            const std::span<const std::size_t> chunk(train_origins.data() + start,
                                                     std::min(config.batch_size, take - start));
            const WindowBatch batch = make_batch(source, cfg, config.guidance, chunk);
            loss_sum += train_step(model, batch, p_tf, config, opt, rng).loss;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.p_tf = p_tf;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        rec.val_mae = validation_mae(model, normalized, labels, val_origins, val_h, config.guidance);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (rec.val_mae < result.best_val_mae) {
            result.best_val_mae = rec.val_mae;
            result.best_epoch = epoch;
            best = model.params();
            since_best = 0;
        } else if (++since_best >= config.patience) {
            result.early_stopped = true;
            break;
        }
    }
    model.params() = std::move(best);
    result.steps = opt.steps();
    return result;
}

}  // namespace nest
