#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vqasc/channel.hpp"
#include "vqasc/jsc_codec.hpp"

using namespace vqasc;
using vqasc::testing::gradcheck;
using vqasc::testing::max_abs_diff;
using vqasc::testing::project;
using vqasc::testing::random_tensor;

namespace {

JscConfig tiny(std::size_t snr_inputs = 0)
{
    JscConfig c;
    c.l_v = 4;
    c.d = 8;
    c.blocks = 2;
    c.heads = 1;
    c.snr_inputs = snr_inputs;
    return c;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(JscCodec, ConfigValidation)
{
    JscConfig c = tiny();
    c.d = 12;
    EXPECT_THROW(c.validate(), InputError);
    c = tiny();
    c.heads = 3;
    EXPECT_THROW(c.validate(), InputError);
    c = tiny();
    c.snr_inputs = 3;
    EXPECT_THROW(c.validate(), InputError);
}

TEST(JscCodec, ParameterNames)
{
    auto rng = make_rng(1, "names");
    const auto codec = JscCodec::create(tiny(), rng);
    ParamList ps;
    codec.collect("jsc", ps);
    auto has_prefix = [&](const std::string& p) {
        return std::any_of(ps.begin(), ps.end(), [&](auto& e) { return e.first.rfind(p, 0) == 0; });
    };
    EXPECT_TRUE(has_prefix("jsc.rate_embedding"));
    EXPECT_TRUE(has_prefix("jsc.enc.block0.rate."));
    EXPECT_TRUE(has_prefix("jsc.enc.block1.feat."));
    EXPECT_TRUE(has_prefix("jsc.enc.pred1."));
    EXPECT_TRUE(has_prefix("jsc.dec.block1."));
    EXPECT_TRUE(has_prefix("jsc.dec.compensation"));
    EXPECT_EQ(std::count_if(ps.begin(), ps.end(), [](auto& e) { return e.first == "jsc.rate_embedding"; }), 1);
}

TEST(JscCodec, FullRateKeepsFeatures)
{
    auto rng = make_rng(2, "full");
    const auto codec = JscCodec::create(tiny(), rng);
    const auto y = random_tensor({4, 8}, rng);
    EncodeOptions o;
    o.mode = RateMode::full;
    const auto r = codec.encode(y, o, rng);
    EXPECT_EQ(values(r.s_v), values(r.features));
    EXPECT_EQ(r.side.total_retained(), 32u);
}

TEST(JscCodec, MaskedChannelsAreExactlyZero)
{
    auto rng = make_rng(3, "sparsity");
    const auto codec = JscCodec::create(tiny(), rng);
    for (int t = 0; t < 50; ++t) {
        EncodeOptions o;
        o.tau = 0.5;
        const auto r = codec.encode(random_tensor({4, 8}, rng), o, rng);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 8; ++j) {
                if (j >= r.side.k[i]) {
                    ASSERT_EQ(r.s_v[i * 8 + j], 0.0);
                } else {
                    ASSERT_EQ(r.s_v[i * 8 + j], r.features[i * 8 + j]);
                }
            }
        }
        EXPECT_EQ(r.layer_decisions.size(), 1u);
        EXPECT_TRUE(r.sample.has_value());
    }
}

TEST(JscCodec, ArgmaxSelectionFollowsDecision)
{
    auto rng = make_rng(4, "argmax");
    const auto codec = JscCodec::create(tiny(), rng);
    EncodeOptions o;
    o.selection = Selection::argmax;
    const auto r = codec.encode(random_tensor({4, 8}, rng), o, rng);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto row = r.decision.data().subspan(i * 3, 3);
        const auto j = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        EXPECT_EQ(r.side.k[i], codec.rates().rates[j]);
    }
    EXPECT_FALSE(r.sample.has_value());
    EXPECT_EQ(r.rate_cost.item(), static_cast<double>(r.side.total_retained()));
}

TEST(JscCodec, FixedModeChecksCounts)
{
    auto rng = make_rng(5, "fixed");
    const auto codec = JscCodec::create(tiny(), rng);
    EncodeOptions o;
    o.mode = RateMode::fixed;
    o.fixed_k = {2, 4};
    EXPECT_THROW(codec.encode(random_tensor({4, 8}, rng), o, rng), ContractError);
    o.fixed_k = {2, 4, 6, 8};
    const auto r = codec.encode(random_tensor({4, 8}, rng), o, rng);
    EXPECT_EQ(r.side.k, o.fixed_k);
    EXPECT_THROW(codec.encode(random_tensor({3, 8}, rng), o, rng), DimensionError);
}

TEST(JscCodec, SnrAdaptiveNeedsSnr)
{
    auto rng = make_rng(6, "snr");
    const auto codec = JscCodec::create(tiny(1), rng);
    EncodeOptions o;
    EXPECT_THROW(codec.encode(random_tensor({4, 8}, rng), o, rng), ContractError);
    o.snr_db = {0.0};
    EXPECT_NO_THROW(codec.encode(random_tensor({4, 8}, rng), o, rng));
}

TEST(JscCodec, EncodeIsReplayDeterministic)
{
    auto init = make_rng(7, "replay-init");
    const auto codec = JscCodec::create(tiny(), init);
    const auto y = random_tensor({4, 8}, init, 1.0, false);
    auto run = [&] {
        auto rng = make_rng(7, "replay-draw");
        EncodeOptions o;
        const auto r = codec.encode(y, o, rng);
        return std::make_pair(values(r.s_v), r.side.k);
    };
    EXPECT_EQ(run(), run());
}

TEST(JscCodec, SharedRateEmbeddingFeedsBothSides)
{
    auto rng = make_rng(8, "shared");
    auto codec = JscCodec::create(tiny(), rng);
    const auto y = random_tensor({4, 8}, rng, 1.0, false);
    EncodeOptions o;
    o.mode = RateMode::full;
    auto r0 = make_rng(1, "x");
    const auto enc0 = codec.encode(y, o, r0);
    const auto dec0 = codec.decode(enc0.s_v, enc0.side);
    codec.rate_embedding.mutable_data()[0] += 0.5;
    auto r1 = make_rng(1, "x");
    const auto enc1 = codec.encode(y, o, r1);
    EXPECT_GT(max_abs_diff(enc0.features.data(), enc1.features.data()), 0.0);
    // Decoder alone on the old symbols also moves.
    const auto dec1 = codec.decode(enc0.s_v, enc0.side);
    EXPECT_GT(max_abs_diff(dec0.data(), dec1.data()), 0.0);
}

TEST(JscCodec, DecodeRejectsInconsistentSideInfo)
{
    auto rng = make_rng(9, "decode-bad");
    const auto codec = JscCodec::create(tiny(), rng);
    const std::vector<std::size_t> k(3, 2);
    EXPECT_THROW(codec.decode(Tensor::zeros({4, 8}), mask_from_counts(k, 8)), DimensionError);
}

TEST(JscCodec, ZeroDecoderIsLayerNormSkeleton)
{
    auto rng = make_rng(10, "zero-dec");
    auto codec = JscCodec::create(tiny(), rng);
    ParamList ps;
    for (std::size_t l = 0; l < codec.dec_blocks.size(); ++l) codec.dec_blocks[l].collect("b", ps);
    for (auto& [n, t] : ps) {
        if (n.find(".ln") != std::string::npos) continue;
        for (auto& v : t.mutable_data()) v = 0.0;
    }
    const std::vector<std::size_t> k(4, 8);
    const auto x = random_tensor({4, 8}, rng, 1.0, false);
    const auto out = codec.decode(x, mask_from_counts(k, 8));
    // Two blocks of LN(input) with unit gain: LN is idempotent up to eps.
    const auto ref = layer_norm(layer_norm(x, Tensor::ones({8}), Tensor::zeros({8})), Tensor::ones({8}),
                                Tensor::zeros({8}));
    EXPECT_LT(max_abs_diff(out.data(), ref.data()), 1e-14);
}

TEST(JscCodec, EndToEndGradcheckThroughNoiselessChannel)
{
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        auto rng = make_rng(11, "e2e", trial);
        auto codec = JscCodec::create(tiny(), rng);
        ParamList ps;
        codec.collect("jsc", ps);
        std::vector<Tensor> inputs{random_tensor({4, 8}, rng, 2.0)};
        for (auto& [n, t] : ps) {
            if (n.find(".enc.pred") != std::string::npos) continue;  // unused in fixed mode
            for (auto& v : t.mutable_data()) v += 0.3 * standard_normal(rng);
            inputs.push_back(t);
        }
        EncodeOptions o;
        o.mode = RateMode::fixed;
        o.fixed_k = {2, 4, 8, 6};
        ChannelConfig ch;
        ch.snr_db = kNoiseless;
        const double err = gradcheck(
            [&](const std::vector<Tensor>& in) {
                auto r = make_rng(0, "unused");
                const auto enc = codec.encode(in[0], o, r);
                const auto sent = flatten_r2c(enc.s_v, enc.side);
                const auto rx = transmit(sent, ch, r);
                const auto side = mask_from_side_info(decode_side_info(encode_side_info(enc.side.b)), 8);
                return sum(codec.decode(c2r_unflatten(rx.received, side), side));
            },
            inputs);
        EXPECT_LT(err, 1e-4) << "trial " << trial;
    }
}
