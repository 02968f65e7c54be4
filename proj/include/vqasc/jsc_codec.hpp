#pragma once

// Cross-attention DJSCC encoder/decoder. Both sides run L dual-branch blocks
// whose rate branch starts from the same learnable rate embedding; the
// encoder additionally carries one rate predictor per block and turns the
// final decision into a channel mask.

#include <cstddef>
#include <optional>
#include <vector>

#include "vqasc/nn.hpp"
#include "vqasc/rate_allocator.hpp"

namespace vqasc {

struct JscConfig {
    std::size_t l_v = 16;
    std::size_t d = 32;
    std::size_t blocks = 4;
    std::size_t heads = 4;
    std::size_t ffn_mult = 2;
    // SNR channels fed to every rate predictor: 0 content-adaptive only,
    // 1 SNR-adaptive, 2 for (statistical, current) SNR on fading channels.
    std::size_t snr_inputs = 0;

    void validate() const;
};

enum class RateMode {
    adaptive,  // predictors choose k_i per token
    fixed,     // caller supplies k_i
    full,      // every channel retained
};

enum class Selection {
    gumbel,  // straight-through Gumbel sample (training)
    argmax,  // most likely rate (evaluation)
};

struct EncodeOptions {
    RateMode mode = RateMode::adaptive;
    Selection selection = Selection::gumbel;
    double tau = 1.0;
    std::vector<double> snr_db;         // must match JscConfig::snr_inputs in adaptive mode
    std::vector<std::size_t> fixed_k;   // RateMode::fixed only, one per token
};

struct EncodeResult {
    Tensor s_v;       // [l_v, d], zero beyond k_i in every row
    Tensor features;  // feature-branch output of the last block, before masking
    MaskAndSideInfo side;

    // Adaptive mode only.
    std::vector<Tensor> layer_decisions;  // D_1 .. D_{L-1}
    Tensor decision;                      // final D
    std::optional<GumbelSample> sample;   // present when selection == gumbel
    Tensor selection;                     // one-hot in value; soft gradient under gumbel
    Tensor mask;                          // selection . prefix_table, equal to side.mask in value
    Tensor rate_cost;                     // sum_i <selection_i, rates> as a differentiable scalar
};

class JscCodec {
public:
    static JscCodec create(const JscConfig& cfg, Rng& rng);

    const JscConfig& config() const { return cfg_; }
    const CandidateRates& rates() const { return rates_; }

    EncodeResult encode(const Tensor& y_v, const EncodeOptions& opt, Rng& rng) const;
    /// Compensation, then the decoder blocks with the shared rate embedding.
    Tensor decode(const Tensor& s_hat, const MaskAndSideInfo& side) const;
    /// Decoder blocks on an input that is already compensated.
    Tensor decode_compensated(const Tensor& x) const;

    void collect(const std::string& prefix, ParamList& out) const;

    Tensor rate_embedding;  // [l_v, d]
    std::vector<DualBranchBlock> enc_blocks;
    std::vector<RatePredictor> predictors;
    std::vector<DualBranchBlock> dec_blocks;
    Tensor compensation;  // [d]

private:
    JscConfig cfg_;
    CandidateRates rates_{2};
    Tensor prefix_table_;
};

}  // namespace vqasc
