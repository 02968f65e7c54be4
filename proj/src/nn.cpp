#include "vqasc/nn.hpp"

#include <cmath>

namespace vqasc {

namespace {

// Promotes [n, d] to [1, n, d]; returns whether it did.
std::pair<Tensor, bool> as_batched(const Tensor& x)
{
    if (x.rank() == 3) return {x, false};
    if (x.rank() == 2) return {reshape(x, {1, x.dim(0), x.dim(1)}), true};
    throw DimensionError("expected [n, d] or [B, n, d], got " + to_string(x.shape()));
}

Tensor split_heads(const Tensor& x, std::size_t heads)
{
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2), hd = d / heads;
    if (heads == 1) return x;
    auto t = reshape(x, {b, n, heads, hd});
    t = permute(t, {0, 2, 1, 3});
    return reshape(t, {b * heads, n, hd});
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads)
{
    if (heads == 1) return x;
    const std::size_t n = x.dim(1), hd = x.dim(2);
    auto t = reshape(x, {batch, heads, n, hd});
    t = permute(t, {0, 2, 1, 3});
    return reshape(t, {batch, n, heads * hd});
}

}  // namespace

Tensor normal_param(Shape shape, Rng& rng, double stddev)
{
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = stddev * standard_normal(rng);
    return Tensor(std::move(shape), std::move(values), true);
}

// ---------------------------------------------------------------------------

Linear Linear::create(std::size_t d_in, std::size_t d_out, Activation act, Rng& rng)
{
    Linear l;
    l.weight = normal_param({d_in, d_out}, rng);
    l.bias = Tensor::zeros({d_out}, true);
    l.activation = act;
    return l;
}

Tensor Linear::forward(const Tensor& x) const
{
    auto y = add_rowwise(matmul(x, weight), bias);
    return activation == Activation::gelu ? gelu(y) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::create(std::size_t d)
{
    LayerNormParams ln;
    ln.gain = Tensor(Shape{d}, std::vector<double>(d, 1.0), true);
    ln.bias = Tensor::zeros({d}, true);
    return ln;
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

FeedForward FeedForward::create(std::size_t d, std::size_t hidden, Rng& rng)
{
    FeedForward f;
    f.up = Linear::create(d, hidden, Activation::gelu, rng);
    f.down = Linear::create(hidden, d, Activation::none, rng);
    return f;
}

void FeedForward::collect(const std::string& prefix, ParamList& out) const
{
    up.collect(prefix + ".up", out);
    down.collect(prefix + ".down", out);
}

MultiHeadProjection MultiHeadProjection::create(std::size_t d, std::size_t heads, Rng& rng)
{
    if (heads == 0 || d % heads != 0) {
        throw InputError("attention width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    MultiHeadProjection p;
    p.w_qkv = normal_param({d, 3 * d}, rng);
    p.b_qkv = Tensor::zeros({3 * d}, true);
    p.w_out = normal_param({d, d}, rng);
    p.b_out = Tensor::zeros({d}, true);
    p.heads = heads;
    return p;
}

MultiHeadProjection::Qkv MultiHeadProjection::project(const Tensor& x) const
{
    const std::size_t d = width();
    if (x.shape().back() != d) {
        throw DimensionError("attention input width " + std::to_string(x.shape().back()) +
                             " does not match block width " + std::to_string(d));
    }
    auto qkv = add_rowwise(matmul(x, w_qkv), b_qkv);
    const std::size_t ax = x.rank() - 1;
    return {slice(qkv, ax, 0, d), slice(qkv, ax, d, 2 * d), slice(qkv, ax, 2 * d, 3 * d)};
}

Tensor MultiHeadProjection::output(const Tensor& attended) const
{
    return add_rowwise(matmul(attended, w_out), b_out);
}

void MultiHeadProjection::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".w_qkv", w_qkv);
    out.emplace_back(prefix + ".b_qkv", b_qkv);
    out.emplace_back(prefix + ".w_out", w_out);
    out.emplace_back(prefix + ".b_out", b_out);
}

// ---------------------------------------------------------------------------

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in, std::size_t heads,
                            const std::vector<double>* key_bias, AttentionTrace* trace)
{
    auto [q, q_promoted] = as_batched(q_in);
    auto [k, k_promoted] = as_batched(k_in);
    auto [v, v_promoted] = as_batched(v_in);
    (void)k_promoted;
    (void)v_promoted;
    if (k.shape() != v.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
        throw DimensionError("attention: incompatible q " + to_string(q.shape()) + ", k " +
                             to_string(k.shape()) + ", v " + to_string(v.shape()));
    }
    const std::size_t batch = q.dim(0), nq = q.dim(1), nk = k.dim(1), d = q.dim(2);
    if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / heads));

    auto qh = split_heads(q, heads);
    auto kh = split_heads(k, heads);
    auto vh = split_heads(v, heads);
    auto scores = scale(bmm(qh, transpose(kh)), scale_factor);
    if (key_bias) {
        if (key_bias->size() != batch * nk) throw DimensionError("attention: key bias size mismatch");
        std::vector<double> bias(batch * heads * nq * nk);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < nq; ++i)
                    for (std::size_t j = 0; j < nk; ++j)
                        bias[((b * heads + h) * nq + i) * nk + j] = (*key_bias)[b * nk + j];
        scores = add(scores, Tensor(scores.shape(), std::move(bias)));
    }
    auto weights = softmax_lastaxis(scores);
    if (trace) trace->weights.push_back(weights);
    auto out = merge_heads(bmm(weights, vh), batch, heads);
    return q_promoted ? reshape(out, {nq, d}) : out;
}

Tensor cross_attention(const Tensor& q_side, const Tensor& kv_side, const MultiHeadProjection& proj_q,
                       const MultiHeadProjection& proj_kv, AttentionTrace* trace)
{
    if (proj_q.width() != proj_kv.width() || proj_q.heads != proj_kv.heads) {
        throw DimensionError("cross_attention: projections disagree on width or heads");
    }
    if (q_side.rank() != kv_side.rank() || q_side.shape().back() != kv_side.shape().back()) {
        throw DimensionError("cross_attention: " + to_string(q_side.shape()) + " vs " + to_string(kv_side.shape()));
    }
    const auto q = proj_q.project(q_side).q;
    const auto kv = proj_kv.project(kv_side);
    return multi_head_attention(q, kv.k, kv.v, proj_q.heads, nullptr, trace);
}

// ---------------------------------------------------------------------------

TransformerBlock TransformerBlock::create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng)
{
    TransformerBlock b;
    b.ln1 = LayerNormParams::create(d);
    b.attn = MultiHeadProjection::create(d, heads, rng);
    b.ln2 = LayerNormParams::create(d);
    b.ffn = FeedForward::create(d, ffn_hidden, rng);
    return b;
}

Tensor TransformerBlock::forward(const Tensor& x, const std::vector<double>* key_bias, AttentionTrace* trace) const
{
    if (x.rank() < 2 || x.shape().back() != width()) {
        throw DimensionError("transformer block of width " + std::to_string(width()) + " got " + to_string(x.shape()));
    }
    const auto qkv = attn.project(ln1.forward(x));
    const auto h = add(x, attn.output(multi_head_attention(qkv.q, qkv.k, qkv.v, attn.heads, key_bias, trace)));
    return add(h, ffn.forward(ln2.forward(h)));
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const
{
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ffn.collect(prefix + ".ffn", out);
}

CrossBranch CrossBranch::create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng)
{
    CrossBranch b;
    b.ln1 = LayerNormParams::create(d);
    b.attn = MultiHeadProjection::create(d, heads, rng);
    b.ln2 = LayerNormParams::create(d);
    b.ffn = FeedForward::create(d, ffn_hidden, rng);
    return b;
}

void CrossBranch::collect(const std::string& prefix, ParamList& out) const
{
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ffn.collect(prefix + ".ffn", out);
}

DualBranchBlock DualBranchBlock::create(std::size_t d, std::size_t heads, std::size_t ffn_hidden, Rng& rng)
{
    DualBranchBlock b;
    b.rate = CrossBranch::create(d, heads, ffn_hidden, rng);
    b.feat = CrossBranch::create(d, heads, ffn_hidden, rng);
    return b;
}

std::pair<Tensor, Tensor> DualBranchBlock::forward(const Tensor& y_rate, const Tensor& y_v) const
{
    if (y_rate.shape() != y_v.shape()) {
        throw DimensionError("dual-branch block: rate " + to_string(y_rate.shape()) + " vs feature " +
                             to_string(y_v.shape()));
    }
    const auto rate_qkv = rate.attn.project(rate.ln1.forward(y_rate));
    const auto feat_qkv = feat.attn.project(feat.ln1.forward(y_v));
    const std::size_t heads = rate.attn.heads;

    const auto rate_ca = multi_head_attention(rate_qkv.q, feat_qkv.k, feat_qkv.v, heads);
    const auto feat_ca = multi_head_attention(feat_qkv.q, rate_qkv.k, rate_qkv.v, heads);

    const auto rate_t = add(rate.attn.output(rate_ca), y_rate);
    const auto feat_t = add(feat.attn.output(feat_ca), y_v);
    const auto rate_n = rate.ln2.forward(rate_t);
    const auto feat_n = feat.ln2.forward(feat_t);
    return {add(rate.ffn.forward(rate_n), rate_n), add(feat.ffn.forward(feat_n), feat_n)};
}

void DualBranchBlock::collect(const std::string& prefix, ParamList& out) const
{
    rate.collect(prefix + ".rate", out);
    feat.collect(prefix + ".feat", out);
}

}  // namespace vqasc
