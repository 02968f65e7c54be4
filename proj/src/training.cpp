#include "vqasc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace vqasc {

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

const char* rate_mode_name(RateMode m)
{
    switch (m) {
    case RateMode::adaptive: return "adaptive";
    case RateMode::fixed: return "fixed";
    case RateMode::full: return "full";
    }
    return "?";
}

RateMode parse_rate_mode(const std::string& s)
{
    if (s == "adaptive") return RateMode::adaptive;
    if (s == "fixed") return RateMode::fixed;
    if (s == "full") return RateMode::full;
    throw InputError("unknown rate mode '" + s + "'");
}

std::string join_counts(const std::vector<std::size_t>& k)
{
    std::string s;
    for (std::size_t i = 0; i < k.size(); ++i) s += (i ? "," : "") + std::to_string(k[i]);
    return s;
}

std::vector<std::size_t> split_counts(const std::string& s)
{
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    return out;
}

void shuffle_order(std::vector<std::size_t>& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

// Decoder input with the transmitter's differentiable mask applied again at
// the receiver: M (s_hat + (J - M_hard)(y + n~)) + (J - M) c, where n~ is a
// fresh draw of the noise the withheld channels would have picked up. The
// value equals compensate(s_hat, side, c) exactly; the gradient on M now sees
// what a withheld channel would have contributed.
Tensor relaxed_receiver_input(const Model& model, const EncodeResult& enc, const Tensor& s_hat,
                              const SymbolStream& sent, const TransmitResult& rx, const ChannelConfig& channel,
                              Rng& rng)
{
    const double sigma = std::sqrt(channel.noise_variance() / 2.0) / std::abs(rx.h) * sent.norm[0];
    const auto hard = enc.side.mask.data();
    const auto feat = enc.features.data();
    std::vector<double> withheld(hard.size(), 0.0);
    for (std::size_t i = 0; i < hard.size(); ++i) {
        if (hard[i] == 0.0) withheld[i] = feat[i] + (sigma > 0.0 ? sigma * standard_normal(rng) : 0.0);
    }
    const auto full = add(s_hat, Tensor(s_hat.shape(), std::move(withheld)));
    const auto comp = expand_leading(model.jsc.compensation, enc.side.tokens());
    const auto ones = Tensor::ones(s_hat.shape());
    return add(hadamard(enc.mask, full), hadamard(sub(ones, enc.mask), comp));
}

// Restores requires_grad on every parameter when a stage ends.
class FreezeScope {
public:
    FreezeScope(const Model& model, const std::vector<ParamGroup>& trainable) : params_(model.parameters())
    {
        const std::set<ParamGroup> on(trainable.begin(), trainable.end());
        for (auto& [name, t] : params_) t.set_requires_grad(on.contains(group_of(name)));
    }
    ~FreezeScope()
    {
        for (auto& [name, t] : params_) t.set_requires_grad(true);
    }
    FreezeScope(const FreezeScope&) = delete;
    FreezeScope& operator=(const FreezeScope&) = delete;

    ParamList trainable() const
    {
        ParamList out;
        for (const auto& p : params_)
            if (p.second.requires_grad()) out.push_back(p);
        return out;
    }

private:
    ParamList params_;
};

bool uses_channel(Stage s) { return s != Stage::s1_videoqa; }

}  // namespace

const char* stage_name(Stage s)
{
    switch (s) {
    case Stage::s1_videoqa: return "s1";
    case Stage::s2_fixed_djscc: return "s2";
    case Stage::s3_adaptive_djscc: return "s3";
    case Stage::s4_finetune: return "s4";
    }
    return "?";
}

Stage parse_stage(std::string_view name)
{
    if (name == "s1") return Stage::s1_videoqa;
    if (name == "s2") return Stage::s2_fixed_djscc;
    if (name == "s3") return Stage::s3_adaptive_djscc;
    if (name == "s4") return Stage::s4_finetune;
    throw InputError("unknown stage '" + std::string(name) + "' (expected s1..s4)");
}

const char* channel_name(ChannelKind k) { return k == ChannelKind::awgn ? "awgn" : "rayleigh"; }

ChannelKind parse_channel(std::string_view name)
{
    if (name == "awgn") return ChannelKind::awgn;
    if (name == "rayleigh") return ChannelKind::rayleigh_block;
    throw InputError("unknown channel '" + std::string(name) + "' (expected awgn or rayleigh)");
}

std::vector<ParamGroup> StagePlan::trainable() const
{
    switch (stage) {
    case Stage::s1_videoqa: return {ParamGroup::zeta, ParamGroup::nu};
    case Stage::s2_fixed_djscc: return {ParamGroup::theta, ParamGroup::phi};
    case Stage::s3_adaptive_djscc: return {ParamGroup::theta, ParamGroup::phi, ParamGroup::epsilon};
    case Stage::s4_finetune:
        return {ParamGroup::zeta, ParamGroup::theta, ParamGroup::epsilon, ParamGroup::phi, ParamGroup::nu};
    }
    return {};
}

StagePlan StagePlan::defaults(Stage s)
{
    StagePlan p;
    p.stage = s;
    switch (s) {
    case Stage::s1_videoqa:
        p.epochs = 10;
        p.learning_rate = 1e-3;
        break;
    case Stage::s2_fixed_djscc:
        p.epochs = 10;
        p.learning_rate = 5e-4;
        break;
    case Stage::s3_adaptive_djscc:
        p.epochs = 10;
        p.learning_rate = 5e-4;
        p.lambda = 1e-3;
        p.rate_mode = RateMode::adaptive;
        break;
    case Stage::s4_finetune:
        p.epochs = 5;
        p.learning_rate = 2e-4;
        p.lambda = 1e-3;
        p.tau_init = 1.0;
        p.tau_decay = 0.95;
        p.rate_mode = RateMode::adaptive;
        break;
    }
    return p;
}

StagePlan StagePlan::paper_schedule(Stage s)
{
    StagePlan p = defaults(s);
    switch (s) {
    case Stage::s1_videoqa:
        p.epochs = 20;
        p.learning_rate = 1e-5;
        break;
    case Stage::s2_fixed_djscc:
        p.epochs = 20;
        p.learning_rate = 5e-6;
        break;
    case Stage::s3_adaptive_djscc:
        p.epochs = 20;
        p.learning_rate = 5e-6;
        break;
    case Stage::s4_finetune:
        p.epochs = 10;
        p.learning_rate = 2e-6;
        break;
    }
    return p;
}

double anneal_tau(const StagePlan& plan, std::size_t epoch)
{
    if (plan.stage != Stage::s3_adaptive_djscc && plan.stage != Stage::s4_finetune) {
        throw ContractError(std::string("anneal_tau: no temperature schedule in stage ") + stage_name(plan.stage));
    }
    return plan.tau_init * std::pow(plan.tau_decay, static_cast<double>(epoch));
}

double anneal_tau(Stage stage, std::size_t epoch) { return anneal_tau(StagePlan::defaults(stage), epoch); }

void TrainConfig::validate() const
{
    if (batch_size == 0) throw InputError("train config: batch_size must be positive");
    if (!(snr_start <= snr_end)) throw InputError("train config: snr_start must not exceed snr_end");
    if (clip_norm < 0.0) throw InputError("train config: clip_norm must be non-negative");
    channel.validate();
}

double sample_training_snr(const TrainConfig& cfg, Rng& rng)
{
    if (cfg.fixed_snr) return *cfg.fixed_snr;
    return cfg.snr_start + (cfg.snr_end - cfg.snr_start) * uniform_open(rng);
}

std::vector<std::size_t> matched_fixed_allocation(double target_sum_k, std::size_t l_v, std::size_t d)
{
    if (l_v == 0 || d < 2) throw InputError("matched_fixed_allocation: bad dimensions");
    const double lo = 2.0 * static_cast<double>(l_v), hi = static_cast<double>(d * l_v);
    const double clamped = std::clamp(target_sum_k, lo, hi);
    const auto total = static_cast<std::size_t>(2.0 * std::round(clamped / 2.0));
    const std::size_t base = (total / l_v) & ~std::size_t{1};
    std::vector<std::size_t> k(l_v, base);
    std::size_t rem = total - base * l_v;
    for (std::size_t i = 0; rem >= 2 && i < l_v; ++i, rem -= 2) k[i] += 2;
    return k;
}

// ---------------------------------------------------------------------------

SampleInputs encode_inputs(const Model& model, const Dataset& ds, const QATask& task)
{
    const auto provider = ds.video(task);
    return {model.sem.encode_video(provider), model.text.encode(task.tokens)};
}

SampleOutput forward_sample(const Model& model, const SampleInputs& in, std::size_t label, const StepOptions& opt,
                            Rng& rng)
{
    SampleOutput out;
    if (!uses_channel(opt.stage)) {
        out.pred = predict(fuse(in.y_v, in.text, model.fuser), in.text, model.fuser);
        out.loss_task = task_loss(out.pred.scores, label);
        return out;
    }

    const auto realization = draw_realization(opt.channel, rng);
    const std::size_t snr_inputs = model.jsc.config().snr_inputs;
    if (snr_inputs > 0 && opt.rate_mode == RateMode::adaptive) {
        if (!std::isfinite(opt.channel.snr_db)) {
            throw ContractError("SNR-conditioned rate predictors need a finite SNR");
        }
        out.predictor_snr.push_back(opt.channel.snr_db);
        if (snr_inputs == 2) out.predictor_snr.push_back(realization.effective_snr_db(opt.channel));
    }

    EncodeOptions eo;
    eo.mode = opt.rate_mode;
    eo.selection = opt.selection;
    eo.tau = opt.tau;
    eo.snr_db = out.predictor_snr;
    eo.fixed_k = opt.fixed_k;
    auto enc = model.jsc.encode(in.y_v, eo, rng);

    const auto stream = flatten_r2c(enc.s_v, enc.side);
    const auto rx = transmit(stream, opt.channel, realization, rng);
    // The receiver knows the allocation only through the side link.
    const auto side_rx = mask_from_side_info(decode_side_info(encode_side_info(enc.side.b)), model.jsc.config().d);
    const auto s_hat = c2r_unflatten(rx.received, side_rx);
    const bool relax = grad_enabled() && enc.mask.defined() && enc.mask.requires_grad();
    const auto y_hat = relax ? model.jsc.decode_compensated(
                                   relaxed_receiver_input(model, enc, s_hat, stream, rx, opt.channel, rng))
                             : model.jsc.decode(s_hat, side_rx);

    out.pred = predict(fuse(y_hat, in.text, model.fuser), in.text, model.fuser);
    out.loss_task = task_loss(out.pred.scores, label);
    out.rate_cost = enc.rate_cost;
    out.used_channel = true;
    out.bcr = compute_bcr(enc.side, opt.frame_x, opt.frame_y);
    out.side = std::move(enc.side);
    return out;
}

std::vector<SampleOutput> forward_step(const Model& model, const std::vector<SampleInputs>& batch,
                                       const std::vector<std::size_t>& labels, const StepOptions& opt, Rng& rng)
{
    if (batch.size() != labels.size()) throw DimensionError("forward_step: batch and label counts differ");
    std::vector<SampleOutput> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(forward_sample(model, batch[i], labels[i], opt, rng));
    return out;
}

Tensor stage_loss(Stage stage, const Tensor& task, const Tensor& rate, double lambda)
{
    if (stage == Stage::s1_videoqa || stage == Stage::s2_fixed_djscc || !rate.defined()) return task;
    return add(task, scale(rate, lambda));
}

// ---------------------------------------------------------------------------

Adam::Adam(ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::zero_grad()
{
    for (auto& [name, t] : params_) t.zero_grad();
}

double Adam::step(double max_norm)
{
    double sq = 0.0;
    for (const auto& [name, t] : params_) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    const double clip = (max_norm > 0.0 && norm > max_norm) ? max_norm / norm : 1.0;

    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        auto& t = params_[p].second;
        if (!t.has_grad()) continue;
        const auto g = t.grad();
        auto w = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
    zero_grad();
    return norm;
}

// ---------------------------------------------------------------------------

void write_metrics_header(std::ostream& os)
{
    os << "stage,epoch,step,loss_total,loss_task,loss_rate_bits,accuracy,tau,snr_db,mean_k,bcr\n";
}

void write_metrics_row(std::ostream& os, const EpochMetrics& m)
{
    os << stage_name(m.stage) << ',' << m.epoch << ',' << m.step << ',' << fmt(m.loss_total) << ','
       << fmt(m.loss_task) << ',' << fmt(m.loss_rate) << ',' << fmt(m.accuracy) << ',' << fmt(m.tau) << ','
       << fmt(m.snr_db) << ',' << fmt(m.mean_k) << ',' << fmt(m.bcr) << '\n';
}

std::vector<EpochMetrics> train_stage(Model& model, const Dataset& ds, const StagePlan& plan, const TrainConfig& cfg,
                                      const ProgressFn& progress)
{
    cfg.validate();
    if (plan.epochs == 0) return {};
    if (plan.rate_mode == RateMode::adaptive && plan.stage == Stage::s2_fixed_djscc) {
        throw ContractError("stage s2 runs at a fixed allocation; rate predictors are bypassed");
    }
    FreezeScope freeze(model, plan.trainable());
    Adam opt(freeze.trainable(), plan.learning_rate);

    const auto groups = plan.trainable();
    const bool frozen_front = std::find(groups.begin(), groups.end(), ParamGroup::zeta) == groups.end() &&
                              std::find(groups.begin(), groups.end(), ParamGroup::nu) == groups.end();
    std::vector<SampleInputs> cache;
    if (frozen_front) {
        NoGradGuard ng;
        cache.reserve(ds.train.size());
        for (const auto& t : ds.train) cache.push_back(encode_inputs(model, ds, t));
    }

    const std::size_t n = ds.train.size();
    const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<std::size_t> order(n);
    std::vector<EpochMetrics> log;

    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        auto order_rng = make_rng(cfg.seed, std::string("order-") + stage_name(plan.stage), epoch);
        shuffle_order(order, order_rng);

        StepOptions so;
        so.stage = plan.stage;
        so.rate_mode = plan.rate_mode;
        so.selection = Selection::gumbel;
        so.tau = uses_channel(plan.stage) && plan.stage != Stage::s2_fixed_djscc ? anneal_tau(plan, epoch) : 1.0;
        so.fixed_k = plan.fixed_k;
        so.channel = cfg.channel;
        so.frame_x = cfg.frame_x;
        so.frame_y = cfg.frame_y;

        EpochMetrics em;
        em.stage = plan.stage;
        em.epoch = epoch;
        em.tau = (plan.stage == Stage::s3_adaptive_djscc || plan.stage == Stage::s4_finetune) ? so.tau : 0.0;
        std::size_t correct = 0;

        for (std::size_t b = 0; b < batches; ++b) {
            auto rng = make_rng(cfg.seed, std::string("batch-") + stage_name(plan.stage), epoch * batches + b);
            so.channel.snr_db = uses_channel(plan.stage) ? sample_training_snr(cfg, rng) : kNoiseless;
            const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
            const double weight = 1.0 / static_cast<double>(hi - lo);
            for (std::size_t j = lo; j < hi; ++j) {
                const auto& task = ds.train[order[j]];
                const SampleInputs fresh = frozen_front ? SampleInputs{} : encode_inputs(model, ds, task);
                const SampleInputs& in = frozen_front ? cache[order[j]] : fresh;
                const auto out = forward_sample(model, in, task.label, so, rng);
                const auto loss = stage_loss(plan.stage, out.loss_task, out.rate_cost, plan.lambda);
                backward(scale(loss, weight));

                em.loss_total += loss.item();
                em.loss_task += out.loss_task.item();
                if (out.rate_cost.defined() && plan.stage != Stage::s2_fixed_djscc) em.loss_rate += out.rate_cost.item();
                if (out.pred.answer == task.label) ++correct;
                if (out.used_channel) {
                    em.snr_db += so.channel.snr_db;
                    em.mean_k += static_cast<double>(out.side.total_retained());
                    em.bcr += out.bcr.bcr;
                }
            }
            opt.step(cfg.clip_norm);
        }
        const double dn = static_cast<double>(n);
        em.step = opt.steps();
        em.loss_total /= dn;
        em.loss_task /= dn;
        em.loss_rate /= dn;
        em.accuracy = static_cast<double>(correct) / dn;
        if (uses_channel(plan.stage)) {
            em.snr_db /= dn;
            em.mean_k /= dn;
            em.bcr /= dn;
        } else {
            em.snr_db = std::nan("");
            em.mean_k = std::nan("");
            em.bcr = std::nan("");
        }
        log.push_back(em);
        if (progress) progress(em);
    }
    return log;
}

std::map<std::string, std::string> plan_metadata(const StagePlan& plan, const TrainConfig& cfg)
{
    return {
        {"train.last_stage", stage_name(plan.stage)},
        {"train.rate_mode", rate_mode_name(plan.rate_mode)},
        {"train.fixed_k", join_counts(plan.fixed_k)},
        {"train.lambda", fmt(plan.lambda)},
        {"train.channel", channel_name(cfg.channel.kind)},
        {"train.sigma_h", fmt(cfg.channel.sigma_h)},
        {"train.optimizer", "adam beta1=0.9 beta2=0.999 eps=1e-8 clip=" + fmt(cfg.clip_norm)},
    };
}

std::vector<EpochMetrics> run_training(Model& model, const Dataset& ds, const std::vector<StagePlan>& plans,
                                       const TrainConfig& cfg, const RunOptions& run)
{
    for (std::size_t i = 1; i < plans.size(); ++i) {
        if (static_cast<int>(plans[i].stage) <= static_cast<int>(plans[i - 1].stage)) {
            throw InputError("run_training: stages must appear in increasing order s1 -> s4");
        }
    }
    const bool write = !run.out_dir.empty();
    std::ofstream metrics;
    if (write) {
        std::filesystem::create_directories(run.out_dir);
        const auto path = run.out_dir / "metrics.csv";
        const bool append = run.resume && std::filesystem::exists(path);
        metrics.open(path, append ? std::ios::app : std::ios::trunc);
        if (!metrics) throw IoError("cannot write " + path.string());
        if (!append) write_metrics_header(metrics);
    }

    std::vector<EpochMetrics> all;
    for (const auto& plan : plans) {
        const auto ckpt_path = run.out_dir / (std::string("stage_") + stage_name(plan.stage) + ".ckpt");
        if (write && run.resume && std::filesystem::exists(ckpt_path)) {
            model.load(load_checkpoint(ckpt_path));
            continue;
        }
        auto progress = [&](const EpochMetrics& m) {
            if (write) {
                write_metrics_row(metrics, m);
                metrics.flush();
            }
            if (run.progress) run.progress(m);
        };
        const auto log = train_stage(model, ds, plan, cfg, progress);
        all.insert(all.end(), log.begin(), log.end());
        if (write) {
            const auto ckpt = model.to_checkpoint(cfg.seed, plan_metadata(plan, cfg));
            save_checkpoint(ckpt_path, ckpt);
            save_checkpoint(run.out_dir / "model.ckpt", ckpt);
        }
    }
    return all;
}

// ---------------------------------------------------------------------------

EvalOptions eval_options_from(const Checkpoint& ckpt)
{
    EvalOptions opt;
    const auto get = [&](const char* key) -> std::string {
        const auto it = ckpt.metadata.find(key);
        return it == ckpt.metadata.end() ? std::string() : it->second;
    };
    if (const auto s = get("train.last_stage"); !s.empty()) opt.stage = parse_stage(s);
    if (const auto s = get("train.rate_mode"); !s.empty()) opt.rate_mode = parse_rate_mode(s);
    opt.fixed_k = split_counts(get("train.fixed_k"));
    if (const auto s = get("train.channel"); !s.empty()) opt.channel.kind = parse_channel(s);
    if (const auto s = get("train.sigma_h"); !s.empty()) opt.channel.sigma_h = std::stod(s);
    if (opt.stage == Stage::s2_fixed_djscc && opt.rate_mode == RateMode::adaptive) opt.rate_mode = RateMode::full;
    return opt;
}

namespace {

std::vector<SampleInputs> cached_test_inputs(const Model& model, const Dataset& ds, std::size_t count)
{
    std::vector<SampleInputs> cache;
    cache.reserve(count);
    for (std::size_t i = 0; i < count; ++i) cache.push_back(encode_inputs(model, ds, ds.test[i]));
    return cache;
}

StepOptions eval_step_options(const EvalOptions& opt, double snr)
{
    StepOptions so;
    so.stage = opt.stage;
    so.rate_mode = opt.rate_mode;
    so.selection = opt.selection;
    so.fixed_k = opt.fixed_k;
    so.channel = opt.channel;
    so.channel.snr_db = snr;
    return so;
}

}  // namespace

std::vector<SweepRow> evaluate_sweep(const Model& model, const Dataset& ds, const EvalOptions& opt, std::uint64_t seed)
{
    NoGradGuard ng;
    const std::size_t n = opt.max_tasks == 0 ? ds.test.size() : std::min(opt.max_tasks, ds.test.size());
    const std::size_t draws = std::max<std::size_t>(1, opt.draws);
    const auto cache = cached_test_inputs(model, ds, n);

    std::vector<SweepRow> rows;
    for (std::size_t si = 0; si < opt.snrs.size(); ++si) {
        const auto so = eval_step_options(opt, opt.snrs[si]);
        SweepRow row;
        row.channel = channel_name(opt.channel.kind);
        row.snr_db = opt.snrs[si];
        std::size_t correct = 0;
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t k = 0; k < draws; ++k) {
                auto rng = make_rng(seed, "eval", (si * n + t) * draws + k);
                const auto out = forward_sample(model, cache[t], ds.test[t].label, so, rng);
                if (out.pred.answer == ds.test[t].label) ++correct;
                if (out.used_channel) {
                    row.mean_bcr += out.bcr.bcr;
                    row.mean_sum_k += static_cast<double>(out.side.total_retained());
                }
                ++row.trials;
            }
        }
        const double tr = static_cast<double>(row.trials);
        row.accuracy = static_cast<double>(correct) / tr;
        row.ci_half_width = 1.96 * std::sqrt(row.accuracy * (1.0 - row.accuracy) / tr);
        row.mean_bcr /= tr;
        row.mean_sum_k /= tr;
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows)
{
    os << "channel,snr_db,trials,accuracy,ci_half_width,mean_bcr,mean_sum_k\n";
    for (const auto& r : rows) {
        os << r.channel << ',' << fmt(r.snr_db) << ',' << r.trials << ',' << fmt(r.accuracy) << ','
           << fmt(r.ci_half_width) << ',' << fmt(r.mean_bcr) << ',' << fmt(r.mean_sum_k) << '\n';
    }
}

std::vector<AllocationReport> report_allocation(const Model& model, const Dataset& ds, const EvalOptions& opt,
                                                std::uint64_t seed)
{
    NoGradGuard ng;
    const std::size_t n = opt.max_tasks == 0 ? ds.test.size() : std::min(opt.max_tasks, ds.test.size());
    const std::size_t draws = std::max<std::size_t>(1, opt.draws);
    const auto cache = cached_test_inputs(model, ds, n);
    const auto& rates = model.jsc.rates();
    const std::size_t l_v = model.jsc.config().l_v;

    std::vector<AllocationReport> out;
    for (std::size_t si = 0; si < opt.snrs.size(); ++si) {
        auto so = eval_step_options(opt, opt.snrs[si]);
        if (so.stage == Stage::s1_videoqa) so.stage = Stage::s3_adaptive_djscc;
        AllocationReport rep;
        rep.snr_db = opt.snrs[si];
        rep.rates = rates.rates;
        rep.histogram.assign(rates.q(), 0);
        rep.token_mean_k.assign(l_v, 0.0);
        std::size_t trials = 0;
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t k = 0; k < draws; ++k) {
                auto rng = make_rng(seed, "alloc", (si * n + t) * draws + k);
                const auto res = forward_sample(model, cache[t], ds.test[t].label, so, rng);
                for (std::size_t i = 0; i < l_v; ++i) {
                    const auto ki = res.side.k[i];
                    const auto pos = std::find(rates.rates.begin(), rates.rates.end(), ki);
                    if (pos != rates.rates.end()) ++rep.histogram[static_cast<std::size_t>(pos - rates.rates.begin())];
                    rep.token_mean_k[i] += static_cast<double>(ki);
                }
                rep.mean_sum_k += static_cast<double>(res.side.total_retained());
                ++trials;
            }
        }
        for (auto& v : rep.token_mean_k) v /= static_cast<double>(trials);
        rep.mean_sum_k /= static_cast<double>(trials);
        out.push_back(std::move(rep));
    }
    return out;
}

void write_allocation_csv(std::ostream& os, const std::vector<AllocationReport>& reports)
{
    os << "snr_db,kind,index,value\n";
    for (const auto& r : reports) {
        for (std::size_t j = 0; j < r.rates.size(); ++j) {
            os << fmt(r.snr_db) << ",k_count," << r.rates[j] << ',' << r.histogram[j] << '\n';
        }
        for (std::size_t i = 0; i < r.token_mean_k.size(); ++i) {
            os << fmt(r.snr_db) << ",token_mean_k," << i << ',' << fmt(r.token_mean_k[i]) << '\n';
        }
        os << fmt(r.snr_db) << ",mean_sum_k,," << fmt(r.mean_sum_k) << '\n';
    }
}

}  // namespace vqasc
