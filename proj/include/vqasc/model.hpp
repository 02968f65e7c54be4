#pragma once

// The full learnable system: semantic encoder (zeta), JSC codec (theta for
// the encoder blocks and rate embedding, epsilon for the rate predictors,
// phi for the decoder) and the text encoder plus fuser (nu).

#include <cstdint>
#include <map>
#include <string>

#include "vqasc/checkpoint.hpp"
#include "vqasc/jsc_codec.hpp"
#include "vqasc/semantic_encoder.hpp"
#include "vqasc/task_fuser.hpp"

namespace vqasc {

struct ModelConfig {
    EncoderConfig enc;
    JscConfig jsc;
    std::size_t fuser_heads = 4;
    std::size_t text_blocks = 2;
    std::size_t refine_blocks = 2;
    std::size_t vocab = 0;  // 0: the synthetic vocabulary size

    /// Keeps l_v and d consistent between encoder and codec.
    void validate() const;
    std::map<std::string, std::string> to_metadata() const;
    static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);
};

enum class ParamGroup { zeta, theta, epsilon, phi, nu };

const char* group_name(ParamGroup g);
/// Group of a parameter by its checkpoint name; throws ContractError if unknown.
ParamGroup group_of(const std::string& name);

class Model {
public:
    static Model create(const ModelConfig& cfg, std::uint64_t seed);
    /// Rebuilds the architecture from the checkpoint metadata and loads the values.
    static Model from_checkpoint(const Checkpoint& ckpt);

    const ModelConfig& config() const { return cfg_; }
    ParamList parameters() const;

    Checkpoint to_checkpoint(std::uint64_t seed, std::map<std::string, std::string> extra = {}) const;
    /// Copies values by name; every parameter must be present with its shape.
    void load(const Checkpoint& ckpt);

    SemanticEncoder sem;
    JscCodec jsc;
    TextEncoder text;
    FuserParams fuser;

private:
    ModelConfig cfg_;
};

}  // namespace vqasc
