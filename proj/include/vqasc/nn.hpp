#pragma once

// Reusable neural components built on the tensor core: linear layers,
// feed-forward networks, multi-head attention, the pre-norm self-attention
// transformer block and the dual-branch cross-attention block used by the
// JSC codec.
//
// Sequence inputs are [n, d] or batched [B, n, d]. Parameters are created
// from an explicit Rng: weights ~ N(0, 0.02^2), biases 0, layer-norm gain 1.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vqasc/rng.hpp"
#include "vqasc/tensor.hpp"

namespace vqasc {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline constexpr double kInitStd = 0.02;

Tensor normal_param(Shape shape, Rng& rng, double stddev = kInitStd);

enum class Activation { none, gelu };

struct Linear {
    Tensor weight;  // [d_in, d_out]
    Tensor bias;    // [d_out]
    Activation activation = Activation::none;

    static Linear create(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng);
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
    double eps = 1e-5;

    static LayerNormParams create(std::size_t d);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Two linear layers with GELU between them.
struct FeedForward {
    Linear up;
    Linear down;

    static FeedForward create(std::size_t d, std::size_t hidden, Rng& rng);
    Tensor forward(const Tensor& x) const { return down.forward(up.forward(x)); }
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Packed Q/K/V projection plus the output projection of one attention layer.
struct MultiHeadProjection {
    Tensor w_qkv;  // [d, 3d], columns ordered Q | K | V
    Tensor b_qkv;  // [3d]
    Tensor w_out;  // [d, d]
    Tensor b_out;  // [d]
    std::size_t heads = 1;

    static MultiHeadProjection create(std::size_t d, std::size_t heads, Rng& rng);
    std::size_t width() const { return w_out.dim(0); }
    std::size_t head_dim() const { return width() / heads; }

    /// Returns (Q, K, V), each shaped like x.
    struct Qkv {
        Tensor q, k, v;
    };
    Qkv project(const Tensor& x) const;
    Tensor output(const Tensor& attended) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Per-head attention weights recorded during a forward pass, each [B*h, n_q, n_k].
struct AttentionTrace {
    std::vector<Tensor> weights;
};

/// Scaled dot-product attention over `heads` heads, scale 1/sqrt(d/heads).
/// q: [B, n_q, d], k/v: [B, n_k, d]. key_bias (optional, B*n_k entries) is
/// added to every score row before the softmax; use -inf to exclude a key.
/// Returns the merged heads [B, n_q, d], before any output projection.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            const std::vector<double>* key_bias = nullptr, AttentionTrace* trace = nullptr);

/// softmax(Q_q K_kv^T / sqrt(head_dim)) V_kv with Q from q_side through proj_q
/// and K, V from kv_side through proj_kv. Output is pre output-projection.
Tensor cross_attention(const Tensor& q_side, const Tensor& kv_side, const MultiHeadProjection& proj_q,
                       const MultiHeadProjection& proj_kv, AttentionTrace* trace = nullptr);

/// Standard pre-norm block: h = x + MHSA(LN1(x)); out = h + FFN(LN2(h)).
struct TransformerBlock {
    LayerNormParams ln1;
    MultiHeadProjection attn;
    LayerNormParams ln2;
    FeedForward ffn;

    static TransformerBlock create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
    std::size_t width() const { return attn.width(); }
    Tensor forward(const Tensor& x, const std::vector<double>* key_bias = nullptr,
                   AttentionTrace* trace = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

/// One branch of the dual-branch block.
struct CrossBranch {
    LayerNormParams ln1;
    MultiHeadProjection attn;
    LayerNormParams ln2;
    FeedForward ffn;

    static CrossBranch create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// Dual-branch cross-attention block. For the rate branch
///   t    = MHCA(LN1(rate), LN1'(feat)) + rate
///   rate'= FFN(LN2(t)) + LN2(t)
/// and symmetrically for the feature branch. The second residual adds the
/// normalised t rather than t itself, which is not the usual pre-norm layout.
/// Both outputs are computed from the block's input pair.
struct DualBranchBlock {
    CrossBranch rate;
    CrossBranch feat;

    static DualBranchBlock create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
    std::size_t width() const { return rate.attn.width(); }
    std::pair<Tensor, Tensor> forward(const Tensor& y_rate, const Tensor& y_v) const;
    void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace vqasc
