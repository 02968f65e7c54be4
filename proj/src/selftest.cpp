#include "vqasc/selftest.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "vqasc/channel.hpp"
#include "vqasc/checkpoint.hpp"
#include "vqasc/jsc_codec.hpp"
#include "vqasc/nn.hpp"
#include "vqasc/rate_allocator.hpp"
#include "vqasc/task_fuser.hpp"

namespace vqasc {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0)
{
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = lo + (hi - lo) * uniform_open(rng);
    return Tensor(shape, std::move(v), true);
}

double weighted(const Tensor& out, const std::vector<double>& w)
{
    const auto d = out.data();
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += w[i] * d[i];
    return s;
}

// Relative error between the tape gradient of sum(w * f(x)) and central
// differences with step 1e-6, over all inputs.
double gradcheck(const Fn& f, std::vector<Tensor> inputs, Rng& rng)
{
    const Tensor out = f(inputs);
    std::vector<double> w(out.numel());
    for (auto& x : w) x = -1.0 + 2.0 * uniform_open(rng);
    backward(sum(hadamard(out, Tensor(out.shape(), w))));

    constexpr double h = 1e-6;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (auto& in : inputs) {
        const auto g = in.grad();
        auto x = in.mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            double up, down;
            {
                NoGradGuard ng;
                x[i] = orig + h;
                up = weighted(f(inputs), w);
                x[i] = orig - h;
                down = weighted(f(inputs), w);
                x[i] = orig;
            }
            const double num = (up - down) / (2.0 * h);
            diff += (g[i] - num) * (g[i] - num);
            na += g[i] * g[i];
            nn += num * num;
        }
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

SelfTestResult check(std::string name, bool ok, std::string detail = {})
{
    return {std::move(name), ok, std::move(detail)};
}

std::string num(double v)
{
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

SelfTestResult gradient_checks(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-grad");
    std::vector<std::pair<std::string, Fn>> cases = {
        {"matmul", [](const std::vector<Tensor>& x) { return matmul(x[0], x[1]); }},
        {"softmax", [](const std::vector<Tensor>& x) { return softmax_lastaxis(x[0]); }},
        {"layer_norm", [](const std::vector<Tensor>& x) { return layer_norm(x[0], x[1], x[2]); }},
        {"gelu", [](const std::vector<Tensor>& x) { return gelu(x[0]); }},
        {"mean", [](const std::vector<Tensor>& x) { return mean(x[0], 0); }},
        {"hadamard", [](const std::vector<Tensor>& x) { return hadamard(x[0], x[1]); }},
    };
    std::vector<std::vector<Shape>> shapes = {
        {{4, 3}, {3, 5}}, {{2, 5}}, {{3, 6}, {6}, {6}}, {{7}}, {{3, 4}}, {{2, 3}, {2, 3}},
    };
    double worst = 0.0;
    std::string worst_op;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<Tensor> in;
            for (const auto& s : shapes[c]) in.push_back(random_tensor(s, rng));
            const double e = gradcheck(cases[c].second, in, rng);
            if (e > worst) {
                worst = e;
                worst_op = cases[c].first;
            }
        }
    }
    return check("gradient checks (6 ops x 20 trials)", worst < 1e-5, "worst rel. error " + num(worst) + " (" + worst_op + ")");
}

SelfTestResult dual_block_gradcheck(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-dual");
    const auto block = DualBranchBlock::create(4, 1, 8, rng);
    const auto a = random_tensor({2, 4}, rng), b = random_tensor({2, 4}, rng);
    const double e = gradcheck(
        [&](const std::vector<Tensor>& x) {
            auto [r, f] = block.forward(x[0], x[1]);
            return concat({r, f}, 1);
        },
        {a, b}, rng);
    return check("dual-branch block gradcheck", e < 1e-5, "rel. error " + num(e));
}

SelfTestResult softmax_sums(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-softmax");
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const auto y = softmax_lastaxis(random_tensor({4, 7}, rng, -1e3, 1e3));
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) s += y[r * 7 + j];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return check("softmax rows sum to 1", worst <= 1e-12, "max deviation " + num(worst));
}

SelfTestResult gumbel_max(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-gumbel");
    const std::vector<double> p = {0.5, 0.3, 0.2};
    const Tensor d({1, 3}, p);
    std::vector<double> freq(3, 0.0);
    bool consistent = true;
    const int draws = 20000;
    for (int i = 0; i < draws; ++i) {
        const auto s = gumbel_sample(d, 0.7, rng);
        std::size_t hard = 0, soft = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            if (s.hard[j] == 1.0) hard = j;
            if (s.soft[j] > s.soft[soft]) soft = j;
        }
        consistent = consistent && hard == soft;
        freq[hard] += 1.0 / draws;
    }
    double tv = 0.0;
    for (std::size_t j = 0; j < 3; ++j) tv += 0.5 * std::abs(freq[j] - p[j]);
    return check("Gumbel-Max frequencies and soft/hard argmax agreement", tv < 0.02 && consistent,
                 "TV " + num(tv) + (consistent ? "" : ", argmax disagreement"));
}

SelfTestResult straight_through_contract(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-st");
    auto logits = random_tensor({3, 4}, rng);
    const Tensor rates({4, 1}, {2, 4, 8, 16});
    auto u = make_rng(seed, "selftest-st-noise");
    auto u2 = u;
    const auto d = softmax_lastaxis(logits);
    const auto s = gumbel_sample(d, 0.8, u);
    const auto st = straight_through_select(s);
    bool forward_ok = true;
    for (std::size_t i = 0; i < st.numel(); ++i) forward_ok = forward_ok && st[i] == s.hard[i];
    backward(sum(matmul(st, rates)));
    const std::vector<double> g_st(logits.grad().begin(), logits.grad().end());
    logits.zero_grad();
    const auto s2 = gumbel_sample(softmax_lastaxis(logits), 0.8, u2);
    backward(sum(matmul(s2.soft, rates)));
    bool grad_ok = true;
    for (std::size_t i = 0; i < g_st.size(); ++i) grad_ok = grad_ok && g_st[i] == logits.grad()[i];
    return check("straight-through forward/backward", forward_ok && grad_ok);
}

SelfTestResult channel_statistics(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-channel");
    const std::size_t n = 100000;
    SymbolStream s;
    s.reals = Tensor::zeros({2 * n});
    s.norm = Tensor::scalar(1.0);
    ChannelConfig cfg;
    cfg.snr_db = 0.0;
    const auto rx = transmit(s, cfg, rng);
    double p = 0.0;
    for (double v : rx.noise) p += v * v;
    p /= static_cast<double>(n);

    cfg.kind = ChannelKind::rayleigh_block;
    cfg.sigma_h = 1.5;
    double mean_h = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_h += std::abs(draw_realization(cfg, rng).h) / static_cast<double>(n);
    const double expect_h = 1.5 * std::sqrt(std::acos(-1.0) / 2.0);
    const bool ok = std::abs(p - 1.0) < 0.02 && std::abs(mean_h - expect_h) / expect_h < 0.02;
    return check("channel noise power and Rayleigh gain", ok, "noise power " + num(p) + ", mean |h| " + num(mean_h));
}

SelfTestResult protocol_roundtrip(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-protocol");
    const std::size_t l_v = 6, d = 8;
    const CandidateRates rates(d);
    double worst = 0.0, worst_power = 0.0;
    bool bijection = true;
    for (int t = 0; t < 200; ++t) {
        std::vector<std::size_t> k(l_v);
        for (auto& v : k) v = rates.rates[rng() % rates.q()];
        const auto side = mask_from_counts(k, d);
        const auto back = mask_from_side_info(decode_side_info(encode_side_info(side.b)), d);
        bijection = bijection && back.k == side.k && back.mask.data().size() == side.mask.data().size();
        for (std::size_t i = 0; bijection && i < side.mask.numel(); ++i) bijection = side.mask[i] == back.mask[i];

        const auto x = hadamard(random_tensor({l_v, d}, rng, -5.0, 5.0), side.mask);
        const auto stream = flatten_r2c(x, side);
        worst_power = std::max(worst_power, stream.power());
        ChannelConfig cfg;
        cfg.snr_db = kNoiseless;
        const auto y = c2r_unflatten(transmit(stream, cfg, rng).received, side);
        for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
    }
    return check("noiseless roundtrip, power constraint, mask/b bijection",
                 worst < 1e-12 && worst_power <= 1.0 + 1e-9 && bijection,
                 "max error " + num(worst) + ", max power " + num(worst_power));
}

SelfTestResult checkpoint_roundtrip(std::uint64_t seed)
{
    auto rng = make_rng(seed, "selftest-ckpt");
    Checkpoint c;
    c.seed = seed;
    c.metadata["purpose"] = "selftest";
    c.tensors.emplace("a.weight", random_tensor({3, 2}, rng));
    c.tensors.emplace("b", random_tensor({5}, rng));
    const auto bytes = serialize_checkpoint(c);
    const auto back = deserialize_checkpoint(bytes);
    return check("checkpoint byte roundtrip", serialize_checkpoint(back) == bytes);
}

SelfTestResult codec_replay(std::uint64_t seed)
{
    JscConfig cfg;
    cfg.l_v = 4;
    cfg.d = 8;
    cfg.blocks = 2;
    cfg.heads = 1;
    auto run = [&] {
        auto init = make_rng(seed, "selftest-codec-init");
        const auto codec = JscCodec::create(cfg, init);
        auto data = make_rng(seed, "selftest-codec-data");
        const auto y = random_tensor({4, 8}, data);
        EncodeOptions opt;
        opt.tau = 2.0;
        auto rng = make_rng(seed, "selftest-codec-run");
        const auto enc = codec.encode(y, opt, rng);
        const auto out = codec.decode(enc.s_v, enc.side);
        return std::vector<double>(out.data().begin(), out.data().end());
    };
    return check("encode/decode replay determinism", run() == run());
}

}  // namespace

std::vector<SelfTestResult> run_selftest(std::uint64_t seed)
{
    std::vector<std::function<SelfTestResult(std::uint64_t)>> checks = {
        gradient_checks, dual_block_gradcheck, softmax_sums,       gumbel_max,
        straight_through_contract, channel_statistics, protocol_roundtrip, checkpoint_roundtrip,
        codec_replay,
    };
    std::vector<SelfTestResult> out;
    for (const auto& c : checks) {
        try {
            out.push_back(c(seed));
        } catch (const std::exception& e) {
            out.push_back({"check raised", false, e.what()});
        }
    }
    return out;
}

bool report_selftest(std::ostream& os, const std::vector<SelfTestResult>& results)
{
    bool all = true;
    for (const auto& r : results) {
        os << (r.passed ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) os << "  [" << r.detail << ']';
        os << '\n';
        all = all && r.passed;
    }
    return all;
}

}  // namespace vqasc
