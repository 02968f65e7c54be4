#pragma once

// Multimodal answer prediction. Candidate "question [SEP] answer" sequences
// are embedded by a small text encoder; the decoded video tokens attend over
// every candidate's text tokens, the attended text is added back to the video
// tokens, and after refinement the pooled video feature is compared with each
// candidate's pooled text feature.

#include <cstddef>
#include <vector>

#include "vqasc/nn.hpp"

namespace vqasc {

/// Token ids for one task: b candidates, each padded to a common length s.
struct CandidateTokens {
    std::vector<std::vector<std::size_t>> ids;  // [b][s], 0 is padding
    std::size_t length() const { return ids.empty() ? 0 : ids.front().size(); }
};

inline constexpr std::size_t kPadToken = 0;

/// Encoded candidates plus the padding layout.
struct TextFeatures {
    Tensor y_q;                   // [b, s, d]
    std::vector<double> key_bias; // b*s entries, 0 or -inf
    std::vector<std::size_t> lengths;  // unpadded length per candidate

    std::size_t candidates() const { return y_q.dim(0); }
    std::size_t length() const { return y_q.dim(1); }
};

struct TextEncoder {
    Tensor embedding;  // [vocab, d]
    std::vector<TransformerBlock> blocks;

    static TextEncoder create(std::size_t vocab, std::size_t d, std::size_t heads, std::size_t blocks,
                              std::size_t ffn_mult, Rng& rng);
    TextFeatures encode(const CandidateTokens& tokens) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct FuserParams {
    Linear video_query;  // E_v
    Linear text_key;     // E_q
    std::vector<TransformerBlock> refine;

    static FuserParams create(std::size_t d, std::size_t heads, std::size_t refine_blocks, std::size_t ffn_mult,
                              Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Y_qv = Y_v + sum_i softmax(E_v E_{q,i}^T) Y_{q,i}, padded keys excluded.
Tensor fuse(const Tensor& y_v_hat, const TextFeatures& text, const FuserParams& params);

struct Prediction {
    Tensor scores;  // [1, b], row-stochastic
    std::size_t answer = 0;
};

/// Refine, pool and score: softmax(<Y_qv^global, Y_q^global_i>) over candidates.
Prediction predict(const Tensor& y_qv, const TextFeatures& text, const FuserParams& params);

/// Masked mean over each candidate's unpadded tokens: [b, d].
Tensor text_global(const TextFeatures& text);

/// -log(max(scores[label], 1e-12)).
Tensor task_loss(const Tensor& scores, std::size_t label);

}  // namespace vqasc
