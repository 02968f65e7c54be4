#pragma once

// Synthetic multiple-choice video QA. Each task pairs one synthetic video of
// class c with a question and b = 5 candidate answers naming the classes in
// a random order; the label is the position of the answer naming c. The
// question carries no class information, so the text alone is at chance.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include "vqasc/semantic_encoder.hpp"
#include "vqasc/task_fuser.hpp"

namespace vqasc {

/// Symbolic vocabulary: padding, separator, question words, one answer word
/// per class and a few shared answer modifiers.
struct Vocabulary {
    static constexpr std::size_t kSep = 1;
    static constexpr std::size_t kQuestionWords = 20;
    static constexpr std::size_t kModifiers = 6;
    static constexpr std::size_t kMaxClasses = 20;

    static constexpr std::size_t question_word(std::size_t i) { return 2 + i; }
    static constexpr std::size_t modifier(std::size_t i) { return 2 + kQuestionWords + i; }
    static constexpr std::size_t answer_word(std::size_t c) { return 2 + kQuestionWords + kModifiers + c; }
    static constexpr std::size_t size() { return 2 + kQuestionWords + kModifiers + kMaxClasses; }
};

struct DatasetConfig {
    std::size_t train_tasks = 2000;
    std::size_t test_tasks = 500;
    std::size_t classes = 5;
    std::size_t candidates = 5;
    double noise_sigma = 0.1;
    double jitter_sigma = 0.5;
    double drift_scale = 0.25;

    void validate() const;
};

struct QATask {
    std::size_t task_id = 0;
    std::size_t class_id = 0;
    std::size_t label = 0;           // candidate index holding the true answer
    std::uint64_t video_seed = 0;
    std::vector<std::size_t> answer_classes;  // class named by each candidate
    CandidateTokens tokens;
};

struct Dataset {
    std::uint64_t seed = 0;
    DatasetConfig cfg;
    EncoderConfig enc;
    std::shared_ptr<const SyntheticWorld> world;
    std::vector<QATask> train;
    std::vector<QATask> test;

    SyntheticVideoProvider video(const QATask& task) const;
};

/// Deterministic in (seed, cfg, enc). Classes cycle through 0..classes-1 so
/// each split is balanced up to rounding.
Dataset make_dataset(std::uint64_t seed, const DatasetConfig& cfg, const EncoderConfig& enc);

/// CSV "task_id,split,class,label,seed".
void write_manifest(std::ostream& os, const Dataset& ds);

}  // namespace vqasc
