#include "vqasc/task_fuser.hpp"

#include <algorithm>
#include <limits>

namespace vqasc {

TextEncoder TextEncoder::create(std::size_t vocab, std::size_t d, std::size_t heads, std::size_t blocks,
                                std::size_t ffn_mult, Rng& rng)
{
    TextEncoder t;
    t.embedding = normal_param({vocab, d}, rng, 1.0);
    for (std::size_t i = 0; i < blocks; ++i) t.blocks.push_back(TransformerBlock::create(d, heads, ffn_mult * d, rng));
    return t;
}

TextFeatures TextEncoder::encode(const CandidateTokens& tokens) const
{
    const std::size_t b = tokens.ids.size(), s = tokens.length(), vocab = embedding.dim(0), d = embedding.dim(1);
    if (b == 0 || s == 0) throw InputError("text encoder: no candidates");
    TextFeatures out;
    std::vector<std::size_t> flat;
    flat.reserve(b * s * d);
    out.key_bias.assign(b * s, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        if (tokens.ids[i].size() != s) throw InputError("text encoder: candidates must share one padded length");
        std::size_t len = 0;
        for (std::size_t j = 0; j < s; ++j) {
            const std::size_t id = tokens.ids[i][j];
            if (id >= vocab) throw InputError("text encoder: token id " + std::to_string(id) + " outside vocabulary");
            if (id == kPadToken) {
                out.key_bias[i * s + j] = -std::numeric_limits<double>::infinity();
            } else {
                ++len;
            }
            for (std::size_t e = 0; e < d; ++e) flat.push_back(id * d + e);
        }
        if (len == 0) throw InputError("text encoder: candidate " + std::to_string(i) + " is all padding");
        out.lengths.push_back(len);
    }
    Tensor x = reshape(gather(embedding, flat), {b, s, d});
    for (const auto& blk : blocks) x = blk.forward(x, &out.key_bias);
    out.y_q = x;
    return out;
}

void TextEncoder::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".embedding", embedding);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

FuserParams FuserParams::create(std::size_t d, std::size_t heads, std::size_t refine_blocks, std::size_t ffn_mult,
                                Rng& rng)
{
    FuserParams p;
    p.video_query = Linear::create(d, d, Activation::none, rng);
    p.text_key = Linear::create(d, d, Activation::none, rng);
    for (std::size_t i = 0; i < refine_blocks; ++i) {
        p.refine.push_back(TransformerBlock::create(d, heads, ffn_mult * d, rng));
    }
    return p;
}

void FuserParams::collect(const std::string& prefix, ParamList& out) const
{
    video_query.collect(prefix + ".video_query", out);
    text_key.collect(prefix + ".text_key", out);
    for (std::size_t i = 0; i < refine.size(); ++i) refine[i].collect(prefix + ".refine" + std::to_string(i), out);
}

Tensor fuse(const Tensor& y_v_hat, const TextFeatures& text, const FuserParams& params)
{
    const std::size_t d = params.video_query.in_features();
    if (y_v_hat.rank() != 2 || y_v_hat.dim(1) != d || text.y_q.rank() != 3 || text.y_q.dim(2) != d) {
        throw DimensionError("fuse: video " + to_string(y_v_hat.shape()) + ", text " + to_string(text.y_q.shape()));
    }
    const std::size_t l_v = y_v_hat.dim(0), b = text.candidates(), s = text.length();
    const auto e_v = expand_leading(params.video_query.forward(y_v_hat), b);  // [b, l_v, d]
    const auto e_q = params.text_key.forward(text.y_q);                        // [b, s, d]
    std::vector<double> bias(b * l_v * s);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t t = 0; t < l_v; ++t)
            std::copy_n(text.key_bias.begin() + static_cast<std::ptrdiff_t>(i * s), s,
                        bias.begin() + static_cast<std::ptrdiff_t>((i * l_v + t) * s));
    const auto gamma = softmax_lastaxis(add(bmm(e_v, transpose(e_q)), Tensor({b, l_v, s}, std::move(bias))));
    const auto attended = bmm(gamma, text.y_q);  // [b, l_v, d]
    return add(y_v_hat, scale(mean(attended, 0), static_cast<double>(b)));
}

Tensor text_global(const TextFeatures& text)
{
    const std::size_t b = text.candidates(), s = text.length(), d = text.y_q.dim(2);
    std::vector<double> w(b * s, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < s; ++j)
            if (text.key_bias[i * s + j] == 0.0) w[i * s + j] = 1.0 / static_cast<double>(text.lengths[i]);
    return reshape(bmm(Tensor({b, 1, s}, std::move(w)), text.y_q), {b, d});
}

Prediction predict(const Tensor& y_qv, const TextFeatures& text, const FuserParams& params)
{
    Tensor x = y_qv;
    for (const auto& blk : params.refine) x = blk.forward(x);
    const std::size_t d = x.dim(1);
    const auto video_global = reshape(mean(x, 0), {1, d});
    Prediction p;
    p.scores = softmax_lastaxis(matmul(video_global, transpose(text_global(text))));
    const auto sd = p.scores.data();
    p.answer = static_cast<std::size_t>(std::max_element(sd.begin(), sd.end()) - sd.begin());
    return p;
}

Tensor task_loss(const Tensor& scores, std::size_t label)
{
    if (label >= scores.numel()) {
        throw InputError("task_loss: label " + std::to_string(label) + " outside " + std::to_string(scores.numel()) +
                         " candidates");
    }
    return scale(log(clamp_min(gather(scores, {label}), 1e-12)), -1.0);
}

}  // namespace vqasc
