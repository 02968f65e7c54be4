#pragma once

// Experiment configuration as "key = value" lines grouped in [sections].
// '#' starts a comment. Unknown sections or keys are rejected with the line
// number; every key has a default, and to_text() writes the fully resolved
// configuration back in a form parse_config() reads unchanged.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vqasc/dataset.hpp"
#include "vqasc/model.hpp"
#include "vqasc/training.hpp"

namespace vqasc {

class ConfigError : public InputError {
public:
    using InputError::InputError;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DatasetConfig data;
    ModelConfig model;
    TrainConfig train;
    std::vector<Stage> run_stages{Stage::s1_videoqa, Stage::s2_fixed_djscc, Stage::s3_adaptive_djscc,
                                  Stage::s4_finetune};
    std::vector<StagePlan> plans{StagePlan::defaults(Stage::s1_videoqa), StagePlan::defaults(Stage::s2_fixed_djscc),
                                 StagePlan::defaults(Stage::s3_adaptive_djscc),
                                 StagePlan::defaults(Stage::s4_finetune)};
    EvalOptions eval;

    /// Plans for run_stages, in order.
    std::vector<StagePlan> selected_plans() const;
    /// Switches every stage to the original epoch counts and learning rates.
    void use_paper_schedule();
    void validate() const;
};

ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);
std::string to_text(const ExperimentConfig& cfg);

}  // namespace vqasc
