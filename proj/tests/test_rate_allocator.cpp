#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "vqasc/rate_allocator.hpp"

using namespace vqasc;
using vqasc::testing::gradcheck;
using vqasc::testing::max_abs_diff;
using vqasc::testing::project;
using vqasc::testing::random_tensor;

namespace {

void zero_linear(Linear& l)
{
    for (auto& v : l.weight.mutable_data()) v = 0.0;
    for (auto& v : l.bias.mutable_data()) v = 0.0;
}

std::size_t argmax_row(std::span<const double> row)
{
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Plain-loop reference for the predictor stack.
using Mat = std::vector<std::vector<double>>;

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x))); }

Mat linear_ref(const Mat& x, const Linear& l)
{
    const std::size_t din = l.in_features(), dout = l.out_features();
    Mat y(x.size(), std::vector<double>(dout));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t o = 0; o < dout; ++o) {
            double s = l.bias[o];
            for (std::size_t k = 0; k < din; ++k) s += x[i][k] * l.weight[k * dout + o];
            y[i][o] = l.activation == Activation::gelu ? gelu_ref(s) : s;
        }
    }
    return y;
}

Mat softmax_ref(Mat x)
{
    for (auto& row : x) {
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (auto& v : row) s += (v = std::exp(v - mx));
        for (auto& v : row) v /= s;
    }
    return x;
}

Mat to_mat(const Tensor& t)
{
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t[i * t.dim(1) + j];
    return m;
}

Mat z_rate_ref(const Mat& y, const RatePredictor& p)
{
    const auto local = linear_ref(y, p.local);
    std::vector<double> g(local[0].size(), 0.0);
    for (const auto& row : local)
        for (std::size_t j = 0; j < row.size(); ++j) g[j] += row[j] / static_cast<double>(local.size());
    Mat z = local;
    for (auto& row : z) row.insert(row.end(), g.begin(), g.end());
    return z;
}

Mat decide_ref(Mat x, const RatePredictor& p, double snr)
{
    if (p.snr_inputs)
        for (auto& row : x) row.push_back(snr / 20.0);
    return softmax_ref(linear_ref(linear_ref(x, p.mlp_hidden), p.mlp_out));
}

}  // namespace

TEST(RateAllocator, CandidateRates)
{
    const CandidateRates r(256);
    EXPECT_EQ(r.rates, (std::vector<std::size_t>{2, 4, 8, 16, 32, 64, 128, 256}));
    EXPECT_EQ(r.q(), 8u);
    EXPECT_EQ(CandidateRates(32).q(), 5u);
    EXPECT_THROW(CandidateRates(24), InputError);
    EXPECT_THROW(CandidateRates(1), InputError);
    const auto t = CandidateRates(8).prefix_table();
    EXPECT_EQ(t.shape(), (Shape{3, 8}));
    EXPECT_EQ(t[0 * 8 + 1], 1.0);
    EXPECT_EQ(t[0 * 8 + 2], 0.0);
    EXPECT_EQ(t[2 * 8 + 7], 1.0);
}

TEST(RateAllocator, IdenticalTokensGiveIdenticalRows)
{
    auto rng = make_rng(1, "pred-sym");
    const auto p = RatePredictor::create(8, 3, false, 0, rng);
    const auto row = random_tensor({1, 8}, rng, 1.0, false);
    const auto d = p.predict_layer(reshape(expand_leading(row, 4), {4, 8}));
    for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(d[i * 3 + j], d[j]);
}

TEST(RateAllocator, ZeroMlpGivesUniformRows)
{
    auto rng = make_rng(2, "pred-zero");
    auto p = RatePredictor::create(8, 3, false, 0, rng);
    zero_linear(p.mlp_hidden);
    zero_linear(p.mlp_out);
    const auto d = p.predict_layer(random_tensor({5, 8}, rng));
    for (double v : d.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

    auto f = RatePredictor::create(8, 3, true, 0, rng);
    zero_linear(f.mlp_hidden);
    zero_linear(f.mlp_out);
    const std::vector<Tensor> priors{softmax_lastaxis(random_tensor({5, 3}, rng))};
    const auto df = aggregate_final(f, f.rate_features(random_tensor({5, 8}, rng)), priors, 2);
    for (double v : df.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(RateAllocator, SnrPresenceIsChecked)
{
    auto rng = make_rng(3, "pred-snr");
    const auto plain = RatePredictor::create(8, 3, false, 0, rng);
    const auto snr = RatePredictor::create(8, 3, false, 1, rng);
    const auto y = random_tensor({4, 8}, rng);
    const std::vector<double> one{5.0};
    EXPECT_THROW(plain.predict_layer(y, one), ContractError);
    EXPECT_THROW(snr.predict_layer(y), ContractError);
    EXPECT_NO_THROW(snr.predict_layer(y, one));
    const auto fin = RatePredictor::create(8, 3, true, 0, rng);
    EXPECT_THROW(fin.predict_layer(y), ContractError);
}

TEST(RateAllocator, SnrChangesDecision)
{
    auto rng = make_rng(4, "pred-snr-effect");
    const auto p = RatePredictor::create(8, 3, false, 1, rng);
    const auto y = random_tensor({4, 8}, rng);
    const std::vector<double> lo{-5.0}, hi{10.0};
    EXPECT_GT(max_abs_diff(p.predict_layer(y, lo).data(), p.predict_layer(y, hi).data()), 0.0);
}

TEST(RateAllocator, BetaUsesBlockCountDivisor)
{
    auto rng = make_rng(5, "beta");
    const auto p = softmax_lastaxis(random_tensor({3, 4}, rng));
    const auto beta = aggregate_decisions({p, p, p}, 4);
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(beta[i], 0.75 * p[i], 1e-16);

    const auto f = RatePredictor::create(8, 4, true, 0, rng);
    const auto z = f.rate_features(random_tensor({3, 8}, rng));
    EXPECT_THROW(aggregate_final(f, z, {p, p}, 4), ContractError);
    EXPECT_NO_THROW(aggregate_final(f, z, {p, p, p}, 4));
}

TEST(RateAllocator, PredictorStackMatchesLoopReference)
{
    for (std::size_t snr_inputs : {0u, 1u}) {
        auto rng = make_rng(6, "stack-ref", snr_inputs);
        const std::size_t L = 3, d = 8, q = 3, lv = 5;
        const double snr = 3.5;
        std::vector<RatePredictor> preds;
        for (std::size_t l = 0; l < L; ++l) preds.push_back(RatePredictor::create(d, q, l + 1 == L, snr_inputs, rng));
        for (auto& p : preds)
            for (Linear* lin : {&p.local, &p.mlp_hidden, &p.mlp_out})
                for (auto& v : lin->weight.mutable_data()) v = 0.5 * standard_normal(rng);

        std::vector<Tensor> ys;
        for (std::size_t l = 0; l < L; ++l) ys.push_back(random_tensor({lv, d}, rng, 1.0, false));
        const std::vector<double> s{snr};
        const std::span<const double> sspan = snr_inputs ? std::span<const double>(s) : std::span<const double>();

        std::vector<Tensor> priors;
        Mat beta(lv, std::vector<double>(q, 0.0));
        for (std::size_t l = 0; l + 1 < L; ++l) {
            priors.push_back(preds[l].predict_layer(ys[l], sspan));
            const auto ref = decide_ref(z_rate_ref(to_mat(ys[l]), preds[l]), preds[l], snr);
            for (std::size_t i = 0; i < lv; ++i)
                for (std::size_t j = 0; j < q; ++j) {
                    EXPECT_NEAR(priors.back()[i * q + j], ref[i][j], 1e-13);
                    beta[i][j] += ref[i][j] / static_cast<double>(L);
                }
        }
        const auto fin = aggregate_final(preds[L - 1], preds[L - 1].rate_features(ys[L - 1]), priors, L, sspan);
        auto z = z_rate_ref(to_mat(ys[L - 1]), preds[L - 1]);
        for (std::size_t i = 0; i < lv; ++i) z[i].insert(z[i].end(), beta[i].begin(), beta[i].end());
        const auto ref = decide_ref(z, preds[L - 1], snr);
        for (std::size_t i = 0; i < lv; ++i)
            for (std::size_t j = 0; j < q; ++j) EXPECT_NEAR(fin[i * q + j], ref[i][j], 1e-13);
    }
}

TEST(RateAllocator, PredictLayerGradcheck)
{
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        auto rng = make_rng(7, "pred-grad", trial);
        auto p = RatePredictor::create(8, 3, false, 1, rng);
        ParamList ps;
        p.collect("p", ps);
        std::vector<Tensor> inputs{random_tensor({3, 8}, rng)};
        for (auto& [n, t] : ps) {
            for (auto& v : t.mutable_data()) v += 0.3 * standard_normal(rng);
            inputs.push_back(t);
        }
        const std::vector<double> snr{2.0};
        EXPECT_LT(gradcheck([&](const std::vector<Tensor>& in) { return project(p.predict_layer(in[0], snr), trial); },
                            inputs),
                  1e-5);
    }
}

TEST(RateAllocator, GumbelOneHotDecisionIsDeterministicAtLowTau)
{
    auto rng = make_rng(8, "gumbel-onehot");
    const Tensor d({1, 4}, {0.0, 0.0, 1.0, 0.0});
    int hits = 0;
    for (int t = 0; t < 10000; ++t) {
        const auto s = gumbel_sample(d, 0.1, rng);
        hits += s.hard[2] == 1.0;
    }
    EXPECT_GE(hits / 1e4, 0.999);
}

TEST(RateAllocator, GumbelMaxFrequencies)
{
    auto rng = make_rng(9, "gumbel-freq");
    const Tensor d({1, 3}, {0.5, 0.3, 0.2});
    std::vector<double> freq(3, 0.0);
    const int n = 100000;
    for (int t = 0; t < n; ++t) {
        const auto s = gumbel_sample(d, 1.0, rng);
        for (std::size_t j = 0; j < 3; ++j) freq[j] += s.hard[j];
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(freq[j] / n, d[j], 0.01);
}

TEST(RateAllocator, SoftRowsApproachUniformAtHighTau)
{
    auto rng = make_rng(10, "gumbel-tau");
    const auto d = softmax_lastaxis(random_tensor({4, 5}, rng, 1.0, false));
    const auto s = gumbel_sample(d, 1e6, rng);
    for (double v : s.soft.data()) EXPECT_LT(std::abs(v - 0.2), 1e-4);
}

TEST(RateAllocator, SoftHardConsistencyAndTemperatureMonotonicity)
{
    auto rng = make_rng(11, "gumbel-consistency");
    const auto d = softmax_lastaxis(random_tensor({3, 5}, rng, 1.0, false));
    double prev = std::numeric_limits<double>::infinity();
    for (double tau : {5.0, 2.0, 1.0, 0.5, 0.1}) {
        auto r = make_rng(12, "gumbel-mono");  // common random numbers across tau
        double l1 = 0.0;
        for (int t = 0; t < 10000; ++t) {
            const auto s = gumbel_sample(d, tau, r);
            for (std::size_t i = 0; i < 3; ++i) {
                const auto soft = s.soft.data().subspan(i * 5, 5);
                const auto hard = s.hard.data().subspan(i * 5, 5);
                ASSERT_EQ(argmax_row(soft), argmax_row(hard));
                double rs = 0.0;
                for (std::size_t j = 0; j < 5; ++j) {
                    l1 += std::abs(soft[j] - hard[j]);
                    rs += soft[j];
                }
                ASSERT_NEAR(rs, 1.0, 1e-12);
            }
        }
        EXPECT_LE(l1, prev);
        prev = l1;
    }
}

TEST(RateAllocator, StraightThroughContract)
{
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        auto rng = make_rng(13, "st", trial);
        const auto p = RatePredictor::create(8, 3, false, 0, rng);
        ParamList ps;
        p.collect("p", ps);
        const auto d = p.predict_layer(random_tensor({4, 8}, rng, 1.0, false));
        const auto s = gumbel_sample(d, 0.7, rng);
        const auto sel = straight_through_select(s);
        ASSERT_EQ(std::vector<double>(sel.data().begin(), sel.data().end()),
                  std::vector<double>(s.hard.data().begin(), s.hard.data().end()));

        const CandidateRates rates(8);
        backward(rate_surrogate(sel, rates));
        std::vector<std::vector<double>> st;
        double norm = 0.0;
        for (auto& [n, t] : ps) {
            st.emplace_back(t.grad().begin(), t.grad().end());
            for (double g : t.grad()) norm += g * g;
            t.zero_grad();
        }
        EXPECT_GT(norm, 0.0);
        backward(rate_surrogate(s.soft, rates));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto g = ps[i].second.grad();
            ASSERT_EQ(st[i], std::vector<double>(g.begin(), g.end())) << ps[i].first;
        }
    }
}

TEST(RateAllocator, BuildMaskExamples)
{
    const CandidateRates r(8);
    std::vector<double> top(4 * 3, 0.0);
    for (std::size_t i = 0; i < 4; ++i) top[i * 3 + 2] = 1.0;
    const auto full = build_mask(Tensor({4, 3}, top), r);
    for (double v : full.mask.data()) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(full.b, (std::vector<std::uint16_t>{8, 8, 8, 8}));

    const auto low = build_mask(Tensor({1, 3}, {1, 0, 0}), r);
    EXPECT_EQ(low.k, (std::vector<std::size_t>{2}));
    EXPECT_EQ(std::vector<double>(low.mask.data().begin(), low.mask.data().end()),
              (std::vector<double>{1, 1, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(rate_loss(low), 2.0);

    EXPECT_THROW(build_mask(Tensor({1, 3}, {0.5, 0.5, 0}), r), ContractError);
    EXPECT_THROW(build_mask(Tensor({1, 3}, {1, 1, 0}), r), ContractError);
    EXPECT_THROW(build_mask(Tensor({1, 3}, {0, 0, 0}), r), ContractError);
}

TEST(RateAllocator, RateLossExamples)
{
    const std::vector<std::size_t> all256(16, 256), all4(16, 4);
    EXPECT_EQ(rate_loss(mask_from_counts(all256, 256)), 4096.0);
    EXPECT_EQ(rate_loss(mask_from_counts(all4, 256)), 64.0);

    const CandidateRates r(8);
    const Tensor onehot({2, 3}, {0, 1, 0, 0, 0, 1});
    EXPECT_EQ(rate_surrogate(onehot, r).item(), rate_loss(build_mask(onehot, r)));
}

TEST(RateAllocator, MaskPrefixAndSideInfoBijection)
{
    auto rng = make_rng(14, "bijection");
    const CandidateRates r(32);
    for (int t = 0; t < 1000; ++t) {
        std::vector<std::size_t> k(16);
        for (auto& v : k) v = r.rates[rng() % r.q()];
        const auto m = mask_from_counts(k, 32);
        for (std::size_t i = 0; i < 16; ++i) {
            for (std::size_t j = 0; j < 32; ++j) ASSERT_EQ(m.mask[i * 32 + j], j < k[i] ? 1.0 : 0.0);
        }
        const double loss = rate_loss(m);
        EXPECT_GE(loss, 2.0 * 16);
        EXPECT_LE(loss, 32.0 * 16);
        const auto bytes = encode_side_info(m.b);
        ASSERT_EQ(bytes.size(), 32u);
        const auto back = mask_from_side_info(decode_side_info(bytes), 32);
        ASSERT_EQ(back.k, m.k);
        ASSERT_EQ(std::vector<double>(back.mask.data().begin(), back.mask.data().end()),
                  std::vector<double>(m.mask.data().begin(), m.mask.data().end()));
    }
}

TEST(RateAllocator, SideInfoWireFormat)
{
    const std::vector<std::uint16_t> b{2, 256, 0x1234};
    const auto bytes = encode_side_info(b);
    EXPECT_EQ(bytes, (std::vector<std::uint8_t>{2, 0, 0, 1, 0x34, 0x12}));
    const std::vector<std::uint8_t> odd{1, 2, 3};
    EXPECT_THROW(decode_side_info(odd), ProtocolError);
    const std::vector<std::uint16_t> bad{3};
    EXPECT_THROW(mask_from_side_info(bad, 8), ContractError);
}

TEST(RateAllocator, Compensation)
{
    auto rng = make_rng(15, "comp");
    Tensor c = random_tensor({8}, rng);
    const std::vector<std::size_t> kfull{8, 8};
    const auto full = mask_from_counts(kfull, 8);
    const auto x = random_tensor({2, 8}, rng, 1.0, false);
    EXPECT_EQ(max_abs_diff(compensate(x, full, c).data(), x.data()), 0.0);

    const std::vector<std::size_t> kmix{2, 8};
    const auto mix = mask_from_counts(kmix, 8);
    const auto masked = hadamard(x, mix.mask);
    const auto y = compensate(masked, mix, c);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y[j], j < 2 ? x[j] : c[j]);

    backward(sum(compensate(masked, full, c)));
    for (double g : c.grad()) EXPECT_EQ(g, 0.0);
}
