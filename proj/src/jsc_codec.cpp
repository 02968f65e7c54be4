#include "vqasc/jsc_codec.hpp"

namespace vqasc {

void JscConfig::validate() const
{
    if (l_v == 0) throw InputError("jsc config: l_v must be positive");
    if (blocks == 0) throw InputError("jsc config: at least one block is required");
    if (heads == 0 || d % heads != 0) throw InputError("jsc config: d must be divisible by heads");
    if (snr_inputs > 2) throw InputError("jsc config: snr_inputs must be 0, 1 or 2");
    CandidateRates check(d);
    (void)check;
}

JscCodec JscCodec::create(const JscConfig& cfg, Rng& rng)
{
    cfg.validate();
    JscCodec c;
    c.cfg_ = cfg;
    c.rates_ = CandidateRates(cfg.d);
    c.prefix_table_ = c.rates_.prefix_table();
    c.rate_embedding = normal_param({cfg.l_v, cfg.d}, rng);
    const std::size_t hidden = cfg.ffn_mult * cfg.d;
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
        c.enc_blocks.push_back(DualBranchBlock::create(cfg.d, cfg.heads, hidden, rng));
    }
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
        const bool last = l + 1 == cfg.blocks;
        c.predictors.push_back(RatePredictor::create(cfg.d, c.rates_.q(), last, cfg.snr_inputs, rng));
    }
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
        c.dec_blocks.push_back(DualBranchBlock::create(cfg.d, cfg.heads, hidden, rng));
    }
    c.compensation = Tensor::zeros({cfg.d}, true);
    return c;
}

EncodeResult JscCodec::encode(const Tensor& y_v, const EncodeOptions& opt, Rng& rng) const
{
    if (y_v.shape() != Shape{cfg_.l_v, cfg_.d}) {
        throw DimensionError("jsc encode: expected [" + std::to_string(cfg_.l_v) + ", " + std::to_string(cfg_.d) +
                             "], got " + to_string(y_v.shape()));
    }
    const bool adaptive = opt.mode == RateMode::adaptive;
    EncodeResult res;
    Tensor y_rate = rate_embedding;
    Tensor y = y_v;
    for (std::size_t l = 0; l < cfg_.blocks; ++l) {
        std::tie(y_rate, y) = enc_blocks[l].forward(y_rate, y);
        if (!adaptive) continue;
        if (l + 1 < cfg_.blocks) {
            res.layer_decisions.push_back(predictors[l].predict_layer(y_rate, opt.snr_db));
        } else {
            res.decision = aggregate_final(predictors[l], predictors[l].rate_features(y_rate), res.layer_decisions,
                                           cfg_.blocks, opt.snr_db);
        }
    }
    res.features = y;

    switch (opt.mode) {
    case RateMode::full:
        res.side = mask_from_counts(std::vector<std::size_t>(cfg_.l_v, cfg_.d), cfg_.d);
        res.s_v = y;
        return res;
    case RateMode::fixed:
        if (opt.fixed_k.size() != cfg_.l_v) {
            throw ContractError("jsc encode: fixed mode needs " + std::to_string(cfg_.l_v) + " counts, got " +
                                std::to_string(opt.fixed_k.size()));
        }
        res.side = mask_from_counts(opt.fixed_k, cfg_.d);
        res.s_v = hadamard(y, res.side.mask);
        return res;
    case RateMode::adaptive:
        break;
    }

    if (opt.selection == Selection::gumbel) {
        res.sample = gumbel_sample(res.decision, opt.tau, rng);
        res.selection = straight_through_select(*res.sample);
        res.side = build_mask(res.sample->hard, rates_);
        res.rate_cost = rate_surrogate(res.sample->soft, rates_);
    } else {
        res.selection = argmax_select(res.decision);
        res.side = build_mask(res.selection, rates_);
        res.rate_cost = rate_surrogate(res.selection, rates_);
    }
    // selection . prefix_table equals side.mask in value; routing the mask
    // through the selection lets the task loss reach the predictors.
    res.mask = matmul(res.selection, prefix_table_);
    res.s_v = hadamard(y, res.mask);
    return res;
}

Tensor JscCodec::decode(const Tensor& s_hat, const MaskAndSideInfo& side) const
{
    if (s_hat.shape() != Shape{cfg_.l_v, cfg_.d} || side.mask.shape() != s_hat.shape()) {
        throw DimensionError("jsc decode: symbols " + to_string(s_hat.shape()) + " vs side info " +
                             to_string(side.mask.shape()));
    }
    return decode_compensated(compensate(s_hat, side, compensation));
}

Tensor JscCodec::decode_compensated(const Tensor& x) const
{
    if (x.shape() != Shape{cfg_.l_v, cfg_.d}) throw DimensionError("jsc decode: input " + to_string(x.shape()));
    Tensor y = x;
    Tensor y_rate = rate_embedding;
    for (const auto& block : dec_blocks) std::tie(y_rate, y) = block.forward(y_rate, y);
    return y;
}

void JscCodec::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".rate_embedding", rate_embedding);
    for (std::size_t l = 0; l < enc_blocks.size(); ++l) enc_blocks[l].collect(prefix + ".enc.block" + std::to_string(l), out);
    for (std::size_t l = 0; l < predictors.size(); ++l) predictors[l].collect(prefix + ".enc.pred" + std::to_string(l), out);
    for (std::size_t l = 0; l < dec_blocks.size(); ++l) dec_blocks[l].collect(prefix + ".dec.block" + std::to_string(l), out);
    out.emplace_back(prefix + ".dec.compensation", compensation);
}

}  // namespace vqasc
