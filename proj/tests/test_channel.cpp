#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "vqasc/channel.hpp"

using namespace vqasc;
using vqasc::testing::gradcheck;
using vqasc::testing::project;
using vqasc::testing::random_tensor;

namespace {

// Stream of n unit-power-or-less symbols with one token of 2n retained channels.
SymbolStream zero_stream(std::size_t n)
{
    const std::vector<std::size_t> k{2 * n};
    return flatten_r2c(Tensor::zeros({1, 2 * n}), mask_from_counts(k, 2 * n));
}

std::vector<std::size_t> random_counts(Rng& rng, std::size_t lv, std::size_t d)
{
    const CandidateRates r(d);
    std::vector<std::size_t> k(lv);
    for (auto& v : k) v = r.rates[rng() % r.q()];
    return k;
}

}  // namespace

TEST(Channel, R2cArithmeticExample)
{
    const std::vector<std::size_t> k{2};
    const auto side = mask_from_counts(k, 4);
    const auto s = flatten_r2c(Tensor({1, 4}, {3, 4, 0, 0}), side);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_DOUBLE_EQ(s.raw_power, 25.0);
    EXPECT_NEAR(s.symbol(0).real(), 0.6, 1e-15);
    EXPECT_NEAR(s.symbol(0).imag(), 0.8, 1e-15);
    EXPECT_DOUBLE_EQ(s.norm.item(), 5.0);
}

TEST(Channel, AllZeroInputNeedsNoDivision)
{
    const auto s = zero_stream(4);
    EXPECT_EQ(s.norm.item(), 1.0);
    for (double v : s.reals.data()) EXPECT_EQ(v, 0.0);
}

TEST(Channel, OddCountIsContractError)
{
    MaskAndSideInfo side;
    side.k = {3};
    side.b = {3};
    side.mask = Tensor({1, 4}, {1, 1, 1, 0});
    EXPECT_THROW(flatten_r2c(Tensor::zeros({1, 4}), side), ContractError);
}

TEST(Channel, NoiselessTransmitIsIdentity)
{
    auto rng = make_rng(1, "noiseless");
    const std::vector<std::size_t> k{4, 2};
    const auto s = flatten_r2c(random_tensor({2, 4}, rng, 1.0, false), mask_from_counts(k, 4));
    ChannelConfig cfg;
    cfg.snr_db = kNoiseless;
    const auto rx = transmit(s, cfg, rng);
    EXPECT_EQ(std::vector<double>(rx.received.reals.data().begin(), rx.received.reals.data().end()),
              std::vector<double>(s.reals.data().begin(), s.reals.data().end()));
}

TEST(Channel, NoiseVarianceFromSnr)
{
    ChannelConfig c;
    c.snr_db = 10.0;
    EXPECT_DOUBLE_EQ(c.noise_variance(), 0.1);
    c.snr_db = 0.0;
    EXPECT_DOUBLE_EQ(c.noise_variance(), 1.0);
    c.snr_db = kNoiseless;
    EXPECT_EQ(c.noise_variance(), 0.0);
}

TEST(Channel, AwgnStatistics)
{
    const std::size_t n = 1'000'000;
    const auto s = zero_stream(n);
    for (double snr : {-5.0, 0.0, 10.0}) {
        auto rng = make_rng(2, "awgn", static_cast<std::uint64_t>(snr + 100));
        ChannelConfig cfg;
        cfg.snr_db = snr;
        const auto rx = transmit(s, cfg, rng);
        double mean_re = 0.0, mean_im = 0.0, p = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            mean_re += rx.noise[2 * t];
            mean_im += rx.noise[2 * t + 1];
            p += rx.noise[2 * t] * rx.noise[2 * t] + rx.noise[2 * t + 1] * rx.noise[2 * t + 1];
        }
        const double var = cfg.noise_variance();
        EXPECT_LT(std::abs(mean_re / n), 0.01);
        EXPECT_LT(std::abs(mean_im / n), 0.01);
        EXPECT_NEAR(p / n, var, 0.01 * var) << "snr " << snr;
    }
}

TEST(Channel, RayleighGainStatistics)
{
    for (double sigma : {0.5, 1.0, 2.0}) {
        auto rng = make_rng(3, "rayleigh", static_cast<std::uint64_t>(sigma * 10));
        ChannelConfig cfg;
        cfg.kind = ChannelKind::rayleigh_block;
        cfg.sigma_h = sigma;
        const int n = 1'000'000;
        double mean = 0.0, mean_phase = 0.0;
        for (int t = 0; t < n; ++t) {
            const auto h = draw_realization(cfg, rng).h;
            mean += std::abs(h);
            mean_phase += std::arg(h);
        }
        EXPECT_NEAR(mean / n, sigma * std::sqrt(std::numbers::pi / 2.0), 0.01 * sigma * std::sqrt(std::numbers::pi / 2.0));
        EXPECT_NEAR(mean_phase / n, 0.0, 0.01);
    }
    ChannelConfig bad;
    bad.kind = ChannelKind::rayleigh_block;
    bad.sigma_h = 0.0;
    auto rng = make_rng(3, "bad");
    EXPECT_THROW(draw_realization(bad, rng), InputError);
}

TEST(Channel, RayleighEqualisationLeavesScaledNoise)
{
    auto rng = make_rng(4, "equalise");
    const std::vector<std::size_t> k{8};
    const auto s = flatten_r2c(random_tensor({1, 8}, rng, 1.0, false), mask_from_counts(k, 8));
    ChannelConfig cfg;
    cfg.kind = ChannelKind::rayleigh_block;
    cfg.snr_db = 5.0;
    ChannelRealization real;
    real.h = {0.3, -1.1};
    const auto rx = transmit(s, cfg, real, rng);
    for (std::size_t t = 0; t < s.size(); ++t) {
        const std::complex<double> n(rx.noise[2 * t], rx.noise[2 * t + 1]);
        const auto expect = (real.h * s.symbol(t) + n) / real.h;
        EXPECT_NEAR(rx.received.symbol(t).real(), expect.real(), 1e-12);
        EXPECT_NEAR(rx.received.symbol(t).imag(), expect.imag(), 1e-12);
    }
    EXPECT_NEAR(real.effective_snr_db(cfg), 5.0 + 20.0 * std::log10(std::abs(real.h)), 1e-12);
}

TEST(Channel, PowerConstraintOnRandomEncodes)
{
    auto rng = make_rng(5, "power");
    for (int t = 0; t < 10000; ++t) {
        const auto k = random_counts(rng, 4, 16);
        const double scale = std::exp(3.0 * standard_normal(rng));
        const auto s = flatten_r2c(random_tensor({4, 16}, rng, scale, false), mask_from_counts(k, 16));
        ASSERT_LE(s.power(), 1.0 + 1e-9);
        if (s.raw_power <= 1.0) ASSERT_EQ(s.norm.item(), 1.0);
    }
}

TEST(Channel, NoiselessRoundtrip)
{
    auto rng = make_rng(6, "roundtrip");
    ChannelConfig cfg;
    cfg.snr_db = kNoiseless;
    for (int t = 0; t < 1000; ++t) {
        const auto k = random_counts(rng, 5, 16);
        const auto side = mask_from_counts(k, 16);
        const auto x = hadamard(random_tensor({5, 16}, rng, 5.0, false), side.mask);
        const auto sent = flatten_r2c(x, side);
        ASSERT_EQ(sent.size(), side.total_retained() / 2);
        const auto back = c2r_unflatten(transmit(sent, cfg, rng).received, side);
        for (std::size_t i = 0; i < x.numel(); ++i) ASSERT_NEAR(back[i], x[i], 1e-12);
    }
}

TEST(Channel, CountMismatchIsProtocolError)
{
    auto rng = make_rng(7, "mismatch");
    const std::vector<std::size_t> k{4, 4}, other{4, 2};
    const auto s = flatten_r2c(random_tensor({2, 4}, rng, 1.0, false), mask_from_counts(k, 4));
    EXPECT_THROW(c2r_unflatten(s, mask_from_counts(other, 4)), ProtocolError);
}

TEST(Channel, GradientPassesThroughChannel)
{
    for (auto kind : {ChannelKind::awgn, ChannelKind::rayleigh_block}) {
        for (std::uint64_t trial = 0; trial < 20; ++trial) {
            auto rng = make_rng(8, "channel-grad", trial);
            const auto k = random_counts(rng, 3, 8);
            const auto side = mask_from_counts(k, 8);
            ChannelConfig cfg;
            cfg.kind = kind;
            cfg.snr_db = 3.0;
            const auto real = draw_realization(cfg, rng);
            const std::uint64_t noise_seed = rng();
            // Scale 2 keeps the mean power above the max(1, .) kink.
            const std::vector<Tensor> in{random_tensor({3, 8}, rng, 2.0)};
            const double err = gradcheck(
                [&](const std::vector<Tensor>& x) {
                    auto nr = make_rng(noise_seed, "noise");
                    const auto rx = transmit(flatten_r2c(hadamard(x[0], side.mask), side), cfg, real, nr);
                    return project(c2r_unflatten(rx.received, side), trial);
                },
                in);
            EXPECT_LT(err, 1e-5);
        }
    }
}

TEST(Channel, BcrExamples)
{
    const std::vector<std::size_t> k4(16, 4), k256(16, 256);
    const auto r = compute_bcr(mask_from_counts(k4, 256));
    EXPECT_EQ(r.n, 32u);
    EXPECT_DOUBLE_EQ(r.bcr, 32.0 / (16.0 * 3.0 * 167.0 * 167.0));
    EXPECT_NEAR(r.bcr, 2.39e-5, 0.005e-5);
    EXPECT_EQ(r.side_info_bits, 256u);
    EXPECT_EQ(compute_bcr(mask_from_counts(k256, 256)).n, 2048u);

    auto rng = make_rng(9, "bcr-geom");
    const auto side = mask_from_counts(k4, 256);
    for (int t = 0; t < 100; ++t) {
        const std::size_t x = 1 + rng() % 500, y = 1 + rng() % 500;
        const auto a = compute_bcr(side, x, y);
        const auto b = compute_bcr(side, 2 * x, y);
        EXPECT_NEAR(a.bcr / b.bcr, 2.0, 1e-12);
    }
    EXPECT_THROW(compute_bcr(side, 0, 10), InputError);
}

TEST(Channel, TraceCsv)
{
    auto rng = make_rng(10, "trace");
    const std::vector<std::size_t> k{4};
    const auto s = flatten_r2c(random_tensor({1, 4}, rng, 1.0, false), mask_from_counts(k, 4));
    ChannelConfig cfg;
    const auto rx = transmit(s, cfg, rng);
    std::ostringstream os;
    write_channel_trace(os, s, rx);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "re,im,noise_re,noise_im");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 2);
}
