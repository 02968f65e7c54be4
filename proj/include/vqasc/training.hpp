#pragma once

// Progressive four-stage training and evaluation.
//
//   s1  VideoQA only, channel bypassed        trains zeta, nu
//   s2  DJSCC at a fixed allocation            trains theta, phi
//   s3  adaptive DJSCC, L_task + lambda L_rate trains theta, phi, epsilon
//   s4  joint fine-tuning                      trains everything
//
// One SNR is drawn per mini-batch. Each sample builds its own graph and is
// back-propagated with weight 1/B; an Adam step follows every mini-batch.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vqasc/channel.hpp"
#include "vqasc/dataset.hpp"
#include "vqasc/model.hpp"

namespace vqasc {

enum class Stage { s1_videoqa, s2_fixed_djscc, s3_adaptive_djscc, s4_finetune };

const char* stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct StagePlan {
    Stage stage = Stage::s1_videoqa;
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    double lambda = 0.0;
    double tau_init = 5.0;
    double tau_decay = 0.9;
    RateMode rate_mode = RateMode::full;
    std::vector<std::size_t> fixed_k;  // RateMode::fixed

    std::vector<ParamGroup> trainable() const;
    /// Desk-scale defaults.
    static StagePlan defaults(Stage s);
    /// Epoch counts and learning rates of the original schedule.
    static StagePlan paper_schedule(Stage s);
};

/// tau_init * tau_decay^epoch; ContractError outside s3/s4.
double anneal_tau(const StagePlan& plan, std::size_t epoch);
double anneal_tau(Stage stage, std::size_t epoch);

struct TrainConfig {
    std::size_t batch_size = 16;
    double snr_start = -5.0;
    double snr_end = 15.0;
    std::optional<double> fixed_snr;
    ChannelConfig channel;  // kind and sigma_h; snr_db is set per batch
    std::uint64_t seed = 1;
    double clip_norm = 5.0;
    std::size_t frame_x = 167;
    std::size_t frame_y = 167;

    void validate() const;
};

/// Uniform(snr_start, snr_end), or fixed_snr when set.
double sample_training_snr(const TrainConfig& cfg, Rng& rng);

/// Same-length fixed allocation of even counts whose sum is the even number
/// nearest to target_sum_k, clamped to [2 l_v, d l_v]; the remainder goes in
/// steps of two to the leading tokens.
std::vector<std::size_t> matched_fixed_allocation(double target_sum_k, std::size_t l_v, std::size_t d);

// ---------------------------------------------------------------------------
// Forward pass

struct SampleInputs {
    Tensor y_v;  // [l_v, d] transmitter semantics
    TextFeatures text;
};

SampleInputs encode_inputs(const Model& model, const Dataset& ds, const QATask& task);

struct StepOptions {
    Stage stage = Stage::s1_videoqa;
    RateMode rate_mode = RateMode::full;
    Selection selection = Selection::gumbel;
    double tau = 1.0;
    std::vector<std::size_t> fixed_k;
    ChannelConfig channel;
    std::size_t frame_x = 167;
    std::size_t frame_y = 167;
};

struct SampleOutput {
    Prediction pred;
    Tensor loss_task;
    Tensor rate_cost;  // differentiable bandwidth surrogate; undefined unless adaptive
    MaskAndSideInfo side;
    bool used_channel = false;
    BcrReport bcr;
    std::vector<double> predictor_snr;
};

/// encode -> flatten/R2C -> channel -> C2R/unflatten -> decode -> fuse ->
/// predict for one sample. Stage 1 feeds Y_v straight to the fuser.
SampleOutput forward_sample(const Model& model, const SampleInputs& in, std::size_t label, const StepOptions& opt,
                            Rng& rng);

/// forward_sample over a mini-batch with one shared channel configuration.
std::vector<SampleOutput> forward_step(const Model& model, const std::vector<SampleInputs>& batch,
                                       const std::vector<std::size_t>& labels, const StepOptions& opt, Rng& rng);

/// s1/s2: task loss; s3/s4: task + lambda * rate (rate may be undefined,
/// in which case it contributes nothing).
Tensor stage_loss(Stage stage, const Tensor& task, const Tensor& rate, double lambda);

// ---------------------------------------------------------------------------
// Optimiser

class Adam {
public:
    Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Clips the global gradient norm to max_norm (if positive), applies one
    /// update and clears the gradients. Returns the pre-clip norm.
    double step(double max_norm);
    void zero_grad();
    std::size_t steps() const { return t_; }

private:
    ParamList params_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop

struct EpochMetrics {
    Stage stage = Stage::s1_videoqa;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss_total = 0.0;
    double loss_task = 0.0;
    double loss_rate = 0.0;  // mean differentiable rate term (0 when not adaptive)
    double accuracy = 0.0;   // training accuracy over the epoch
    double tau = 0.0;        // 0 outside s3/s4
    double snr_db = 0.0;     // mean training SNR (NaN in s1)
    double mean_k = 0.0;     // mean per-sample sum of retained channels
    double bcr = 0.0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const EpochMetrics& m);

using ProgressFn = std::function<void(const EpochMetrics&)>;

std::vector<EpochMetrics> train_stage(Model& model, const Dataset& ds, const StagePlan& plan, const TrainConfig& cfg,
                                      const ProgressFn& progress = {});

struct RunOptions {
    std::filesystem::path out_dir;  // empty: no files written
    bool resume = false;            // skip stages whose checkpoint already exists
    ProgressFn progress;
};

/// Runs the plans in stage order, writing metrics.csv and one checkpoint
/// per stage (stage_<name>.ckpt) when out_dir is set.
std::vector<EpochMetrics> run_training(Model& model, const Dataset& ds, const std::vector<StagePlan>& plans,
                                       const TrainConfig& cfg, const RunOptions& run = {});

/// Checkpoint metadata describing how the model should be evaluated.
std::map<std::string, std::string> plan_metadata(const StagePlan& plan, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
    std::vector<double> snrs{-5.0, 0.0, 5.0, 10.0};
    ChannelConfig channel;
    std::size_t draws = 5;
    std::size_t max_tasks = 0;  // 0: whole test split
    Stage stage = Stage::s3_adaptive_djscc;
    RateMode rate_mode = RateMode::adaptive;
    std::vector<std::size_t> fixed_k;
    // Allocation at test time: a hard Gumbel sample as in training, or the mode of D.
    Selection selection = Selection::gumbel;
};

/// Evaluation defaults recovered from a checkpoint's plan metadata.
EvalOptions eval_options_from(const Checkpoint& ckpt);

struct SweepRow {
    std::string channel;
    double snr_db = 0.0;
    std::size_t trials = 0;
    double accuracy = 0.0;
    double ci_half_width = 0.0;  // 1.96 sqrt(p (1 - p) / trials)
    double mean_bcr = 0.0;
    double mean_sum_k = 0.0;
};

std::vector<SweepRow> evaluate_sweep(const Model& model, const Dataset& ds, const EvalOptions& opt,
                                     std::uint64_t seed);

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

struct AllocationReport {
    double snr_db = 0.0;
    std::vector<std::size_t> rates;       // candidate k values
    std::vector<std::size_t> histogram;   // token count per candidate
    std::vector<double> token_mean_k;     // mean k per token position
    double mean_sum_k = 0.0;
};

std::vector<AllocationReport> report_allocation(const Model& model, const Dataset& ds, const EvalOptions& opt,
                                                std::uint64_t seed);

void write_allocation_csv(std::ostream& os, const std::vector<AllocationReport>& reports);

const char* channel_name(ChannelKind k);
ChannelKind parse_channel(std::string_view name);

}  // namespace vqasc
