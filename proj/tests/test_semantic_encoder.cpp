#include <gtest/gtest.h>

#include <memory>
#include <numbers>

#include "oracles.hpp"
#include "vqasc/semantic_encoder.hpp"

using namespace vqasc;
using vqasc::testing::gradcheck;
using vqasc::testing::max_abs_diff;
using vqasc::testing::project;
using vqasc::testing::random_tensor;

namespace {

EncoderConfig small_config()
{
    EncoderConfig c;
    c.l_v = 4;
    c.l_c = 2;
    c.l_f = 2;
    c.r = 3;
    c.m = 8;
    c.d = 4;
    c.temporal_blocks = 1;
    c.temporal_heads = 2;
    return c;
}

class FixedProvider : public FeatureProvider {
public:
    explicit FixedProvider(std::vector<ClipFeatures> c) : clips_(std::move(c)) {}
    std::vector<ClipFeatures> clips() const override { return clips_; }

private:
    std::vector<ClipFeatures> clips_;
};

std::vector<ClipFeatures> random_clips(const EncoderConfig& c, Rng& rng)
{
    std::vector<ClipFeatures> out;
    for (std::size_t i = 0; i < c.l_c; ++i) {
        out.push_back({random_tensor({c.l_f, c.r, c.m}, rng, 1.0, false), random_tensor({c.l_f, c.m}, rng, 1.0, false)});
    }
    return out;
}

}  // namespace

TEST(SemanticEncoder, KeyframeExamples)
{
    EXPECT_EQ(sample_keyframes(16, 16), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}));
    EXPECT_EQ(sample_keyframes(100, 4), (std::vector<std::size_t>{0, 25, 50, 75}));
    EXPECT_EQ(sample_keyframes(10, 4), (std::vector<std::size_t>{0, 2, 5, 7}));
    EXPECT_THROW(sample_keyframes(3, 4), InputError);
    for (std::size_t total = 16; total < 200; ++total) {
        const auto k = sample_keyframes(total, 16);
        for (std::size_t i = 1; i < k.size(); ++i) EXPECT_LT(k[i - 1], k[i]);
        EXPECT_LT(k.back(), total);
    }
}

TEST(SemanticEncoder, ConfigValidation)
{
    auto c = small_config();
    c.l_v = 5;
    EXPECT_THROW(c.validate(), InputError);
    c = small_config();
    c.d = 6;
    EXPECT_THROW(c.validate(), InputError);
    c = small_config();
    c.temporal_heads = 3;
    EXPECT_THROW(c.validate(), InputError);
}

TEST(SemanticEncoder, SingleObjectGraphConvIsGatedSelfMap)
{
    // With one object the affinity softmax is exactly 1.
    auto rng = make_rng(1, "graph-r1");
    const auto g = GraphConvParams::create(4, rng);
    const auto o = random_tensor({3, 1, 4}, rng, 1.0, false);
    const auto out = spatial_graph_conv(o, g);
    const auto ref = add(gelu(matmul(reshape(o, {3, 4}), g.w_g)), reshape(o, {3, 4}));
    EXPECT_LT(max_abs_diff(out.data(), ref.data()), 1e-14);
}

TEST(SemanticEncoder, GraphConvMatchesLoopReference)
{
    auto rng = make_rng(2, "graph-ref");
    const std::size_t lf = 2, r = 3, m = 4;
    const auto g = GraphConvParams::create(m, rng);
    const auto o = random_tensor({lf, r, m}, rng, 1.0, false);
    const auto out = spatial_graph_conv(o, g);
    auto mm = [&](const double* x, const Tensor& w, std::size_t col) {
        double s = 0.0;
        for (std::size_t e = 0; e < m; ++e) s += x[e] * w[e * m + col];
        return s;
    };
    for (std::size_t f = 0; f < lf; ++f) {
        const double* x = o.data().data() + f * r * m;
        std::vector<double> a(r * r);
        for (std::size_t i = 0; i < r; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < r; ++j) {
                double s = 0.0;
                for (std::size_t e = 0; e < m; ++e) s += mm(x + i * m, g.w_a, e) * mm(x + j * m, g.w_b, e);
                a[i * r + j] = s;
                mx = std::max(mx, s);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < r; ++j) z += (a[i * r + j] = std::exp(a[i * r + j] - mx));
            for (std::size_t j = 0; j < r; ++j) a[i * r + j] /= z;
        }
        for (std::size_t i = 0; i < r; ++i) {
            std::vector<double> ax(m, 0.0);
            for (std::size_t j = 0; j < r; ++j)
                for (std::size_t e = 0; e < m; ++e) ax[e] += a[i * r + j] * x[j * m + e];
            for (std::size_t e = 0; e < m; ++e) {
                const double h = mm(ax.data(), g.w_g, e);
                const double ref = 0.5 * h * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (h + 0.044715 * h * h * h))) +
                                   x[i * m + e];
                EXPECT_NEAR(out[(f * r + i) * m + e], ref, 1e-12);
            }
        }
    }
}

TEST(SemanticEncoder, PoolFuseProject)
{
    auto rng = make_rng(3, "pool");
    const auto proj = Linear::create(8, 2, Activation::none, rng);
    const auto o = random_tensor({2, 3, 4}, rng, 1.0, false);
    const auto f = random_tensor({2, 4}, rng, 1.0, false);
    const auto out = pool_fuse_project(o, f, proj);
    ASSERT_EQ(out.shape(), (Shape{2, 2}));
    for (std::size_t j = 0; j < 2; ++j) {
        std::vector<double> in(8);
        for (std::size_t e = 0; e < 4; ++e) {
            in[e] = (o[(j * 3) * 4 + e] + o[(j * 3 + 1) * 4 + e] + o[(j * 3 + 2) * 4 + e]) / 3.0;
            in[4 + e] = f[j * 4 + e];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double s = proj.bias[c];
            for (std::size_t e = 0; e < 8; ++e) s += in[e] * proj.weight[e * 2 + c];
            EXPECT_NEAR(out[j * 2 + c], s, 1e-14);
        }
    }
    EXPECT_THROW(pool_fuse_project(o, random_tensor({3, 4}, rng), proj), DimensionError);
}

TEST(SemanticEncoder, VideoShapeAndClipIndependence)
{
    const auto cfg = small_config();
    auto rng = make_rng(4, "video");
    const auto enc = SemanticEncoder::create(cfg, rng);
    auto clips = random_clips(cfg, rng);
    const auto y = enc.encode_video(FixedProvider(clips));
    ASSERT_EQ(y.shape(), (Shape{4, 4}));

    // Changing clip 1 leaves clip 0's tokens alone.
    clips[1].objects = random_tensor({cfg.l_f, cfg.r, cfg.m}, rng, 1.0, false);
    const auto y2 = enc.encode_video(FixedProvider(clips));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y[i], y2[i]);
    EXPECT_GT(max_abs_diff(y.data().subspan(8), y2.data().subspan(8)), 0.0);

    const auto c0 = enc.encode_clip(clips[0]);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(c0[i], y[i], 1e-14);

    clips.pop_back();
    EXPECT_THROW(enc.encode_video(FixedProvider(clips)), InputError);
}

TEST(SemanticEncoder, TemporalBlocksActPerObjectSlot)
{
    const auto cfg = small_config();
    auto rng = make_rng(5, "slots");
    const auto enc = SemanticEncoder::create(cfg, rng);
    const auto o = random_tensor({2, 3, 8}, rng, 1.0, false);
    const auto out = temporal_aggregate(o, enc.temporal);
    // Slot 1 alone through the same blocks.
    std::vector<double> slot(16);
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t e = 0; e < 8; ++e) slot[f * 8 + e] = o[(f * 3 + 1) * 8 + e];
    auto x = Tensor({2, 8}, slot);
    for (const auto& b : enc.temporal) x = b.forward(x);
    for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t e = 0; e < 8; ++e) EXPECT_NEAR(out[(f * 3 + 1) * 8 + e], x[f * 8 + e], 1e-13);
}

TEST(SemanticEncoder, SyntheticVideosAreDeterministic)
{
    const auto cfg = small_config();
    auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::create(1, 5, cfg.r, cfg.m));
    const SyntheticVideoProvider a(world, cfg, 2, 77), b(world, cfg, 2, 77), c(world, cfg, 3, 77);
    EXPECT_GE(a.total_frames(), cfg.l_v);
    EXPECT_LE(a.total_frames(), 3 * cfg.l_v);
    const auto ca = a.clips(), cb = b.clips(), cc = c.clips();
    ASSERT_EQ(ca.size(), cfg.l_c);
    EXPECT_EQ(max_abs_diff(ca[1].objects.data(), cb[1].objects.data()), 0.0);
    EXPECT_GT(max_abs_diff(ca[1].objects.data(), cc[1].objects.data()), 0.0);
    EXPECT_THROW(SyntheticVideoProvider(world, cfg, 5, 1), InputError);
}

TEST(SemanticEncoder, EncoderGradcheck)
{
    const auto cfg = small_config();
    auto rng = make_rng(6, "enc-grad");
    auto enc = SemanticEncoder::create(cfg, rng);
    ParamList ps;
    enc.collect("sem", ps);
    const auto clip_frames = random_tensor({cfg.l_f, cfg.m}, rng);
    std::vector<Tensor> inputs{random_tensor({cfg.l_f, cfg.r, cfg.m}, rng)};
    for (auto& [n, t] : ps) {
        for (auto& v : t.mutable_data()) v += 0.3 * standard_normal(rng);
        inputs.push_back(t);
    }
    const double err = gradcheck(
        [&](const std::vector<Tensor>& in) { return project(enc.encode_clip({in[0], clip_frames}), 4); }, inputs);
    EXPECT_LT(err, 1e-5);
}
