#include "vqasc/dataset.hpp"

#include <ostream>

namespace vqasc {

namespace {

// Fisher-Yates with an explicit modulus so the order does not depend on the
// standard library's shuffle.
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

constexpr std::size_t kTemplates = 4;

std::vector<std::size_t> question_template(std::size_t t)
{
    const std::size_t len = 3 + t % 3;
    std::vector<std::size_t> q;
    for (std::size_t i = 0; i < len; ++i) q.push_back(Vocabulary::question_word((t * 5 + i) % Vocabulary::kQuestionWords));
    return q;
}

QATask make_task(std::uint64_t seed, const DatasetConfig& cfg, std::size_t index)
{
    auto rng = make_rng(seed, "task", index);
    QATask task;
    task.task_id = index;
    task.class_id = index % cfg.classes;
    task.video_seed = derive_seed(seed, "video", index);

    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < cfg.classes; ++c)
        if (c != task.class_id) others.push_back(c);
    shuffle_indices(others, rng);
    task.label = rng() % cfg.candidates;
    for (std::size_t i = 0, o = 0; i < cfg.candidates; ++i) {
        task.answer_classes.push_back(i == task.label ? task.class_id : others[o++]);
    }

    const auto question = question_template(rng() % kTemplates);
    const std::size_t padded = 5 + 1 + 2;
    for (std::size_t i = 0; i < cfg.candidates; ++i) {
        std::vector<std::size_t> seq = question;
        seq.push_back(Vocabulary::kSep);
        seq.push_back(Vocabulary::answer_word(task.answer_classes[i]));
        seq.push_back(Vocabulary::modifier(rng() % Vocabulary::kModifiers));
        seq.resize(padded, kPadToken);
        task.tokens.ids.push_back(std::move(seq));
    }
    return task;
}

}  // namespace

void DatasetConfig::validate() const
{
    if (classes < 2 || classes > Vocabulary::kMaxClasses) {
        throw InputError("dataset: classes must be within [2, " + std::to_string(Vocabulary::kMaxClasses) + "]");
    }
    if (candidates < 2 || candidates > classes) throw InputError("dataset: candidates must be within [2, classes]");
    if (train_tasks == 0 || test_tasks == 0) throw InputError("dataset: splits must be non-empty");
    if (noise_sigma < 0.0 || jitter_sigma < 0.0 || drift_scale <= 0.0) {
        throw InputError("dataset: noise and jitter must be non-negative, drift positive");
    }
}

SyntheticVideoProvider Dataset::video(const QATask& task) const
{
    return SyntheticVideoProvider(world, enc, task.class_id, task.video_seed);
}

Dataset make_dataset(std::uint64_t seed, const DatasetConfig& cfg, const EncoderConfig& enc)
{
    cfg.validate();
    enc.validate();
    Dataset ds;
    ds.seed = seed;
    ds.cfg = cfg;
    ds.enc = enc;
    ds.world = std::make_shared<const SyntheticWorld>(SyntheticWorld::create(
        derive_seed(seed, "dataset-world"), cfg.classes, enc.r, enc.m, cfg.noise_sigma, cfg.jitter_sigma,
        cfg.drift_scale));
    for (std::size_t i = 0; i < cfg.train_tasks; ++i) ds.train.push_back(make_task(seed, cfg, i));
    for (std::size_t i = 0; i < cfg.test_tasks; ++i) ds.test.push_back(make_task(seed, cfg, cfg.train_tasks + i));
    return ds;
}

void write_manifest(std::ostream& os, const Dataset& ds)
{
    os << "task_id,split,class,label,seed\n";
    for (const auto& t : ds.train) os << t.task_id << ",train," << t.class_id << ',' << t.label << ',' << t.video_seed << '\n';
    for (const auto& t : ds.test) os << t.task_id << ",test," << t.class_id << ',' << t.label << ',' << t.video_seed << '\n';
}

}  // namespace vqasc
