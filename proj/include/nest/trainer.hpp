#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nest/model.hpp"
#include "nest/windows.hpp"

namespace nest {

struct TrainConfig {
    std::size_t epochs = 100;
    double decay = 0.97;        // gamma
    double min_teacher = 0.25;  // r
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 5.0;  // 0 disables clipping
    std::size_t batch_size = 32;
    std::size_t patience = 30;
    double lambda1 = 0.1;
    double lambda2 = 0.2;
    std::uint64_t seed = 0;
    /// Training windows drawn per epoch; 0 uses every window once.
    std::size_t windows_per_epoch = 0;
    /// Spacing of validation origins.
    std::size_t val_stride = 1;
    /// Horizon of the validation rollout; 0 uses one patch.
    std::size_t val_horizon = 0;
    GuidanceMode guidance = GuidanceMode::future;

    void validate() const;
};

/// Teacher-forcing probability for a 0-based epoch: max(r, gamma^epoch).
double sampling_prob(std::size_t epoch, double decay, double min_teacher);

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
    void step(ParamStore& params);
    std::uint64_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_, wd_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Scales every gradient so the global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

struct StepStats {
    double loss = 0.0;
    double node = 0.0;
    double next = 0.0;
    double boundary = 0.0;
    double grad_norm = 0.0;
    std::size_t teacher_forced = 0;  // samples that received ground-truth guidance
};

struct StepGraph {
    LossTerms loss;
    Tensor guidance;  // what the main pass consumed
    std::size_t teacher_forced = 0;
};
/// Builds the training loss for one batch on `tape`. With future guidance the
/// boundary decoder first runs on zero masks; each sample then receives
/// ground truth with probability p_tf and the detached boundary median
/// otherwise. Parameter gradients are accumulated by the caller's backward.
StepGraph build_step(Tape& tape, NestModel& model, const WindowBatch& batch, double p_tf, GuidanceMode mode,
                     double lambda1, double lambda2, std::mt19937_64& rng);

/// One optimizer update. Throws std::runtime_error on a non-finite loss.
StepStats train_step(NestModel& model, const WindowBatch& batch, double p_tf, const TrainConfig& config,
                     AdamW& optimizer, std::mt19937_64& rng);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mae = 0.0;
    double p_tf = 0.0;
    double seconds = 0.0;
};

std::string to_json_line(const EpochRecord& record);

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_mae = 0.0;
    std::uint64_t steps = 0;
    bool early_stopped = false;
};

/// Fits `model` on windows inside `ranges.train` of a normalized series and
/// validates on `ranges.val` (normalized MAE of the validation rollout). The
/// model ends up holding the best-validation parameters.
TrainResult train_loop(NestModel& model, const SeriesTensor& normalized, std::span<const std::uint32_t> labels,
                       const SplitRanges& ranges, const TrainConfig& config,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace nest
