#include "vqasc/rate_allocator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace vqasc {

CandidateRates::CandidateRates(std::size_t d_) : d(d_)
{
    if (d < 2 || !std::has_single_bit(d)) throw InputError("candidate rates: d must be a power of two >= 2");
    for (std::size_t k = 2; k <= d; k *= 2) rates.push_back(k);
}

Tensor CandidateRates::prefix_table() const
{
    std::vector<double> t(q() * d, 0.0);
    for (std::size_t j = 0; j < q(); ++j) std::fill_n(t.begin() + static_cast<std::ptrdiff_t>(j * d), rates[j], 1.0);
    return Tensor({q(), d}, std::move(t));
}

Tensor CandidateRates::rates_column() const
{
    std::vector<double> col(rates.begin(), rates.end());
    return Tensor({q(), 1}, std::move(col));
}

// ---------------------------------------------------------------------------

RatePredictor RatePredictor::create(std::size_t d, std::size_t q, bool is_final, std::size_t snr_inputs, Rng& rng)
{
    RatePredictor p;
    p.is_final = is_final;
    p.snr_inputs = snr_inputs;
    const std::size_t extras = (is_final ? q : 0) + snr_inputs;
    p.local = Linear::create(d, d, Activation::gelu, rng);
    p.mlp_hidden = Linear::create(2 * d + extras, d, Activation::gelu, rng);
    p.mlp_out = Linear::create(d, q, Activation::none, rng);
    return p;
}

Tensor RatePredictor::rate_features(const Tensor& y_rate) const
{
    if (y_rate.rank() != 2 || y_rate.dim(1) != local.in_features()) {
        throw DimensionError("rate predictor: expected [l_v, " + std::to_string(local.in_features()) + "], got " +
                             to_string(y_rate.shape()));
    }
    const auto z_local = local.forward(y_rate);
    const auto z_global = expand_leading(mean(z_local, 0), y_rate.dim(0));
    return concat({z_local, z_global}, 1);
}

Tensor RatePredictor::decide(const Tensor& features, std::span<const double> snr_db) const
{
    if (snr_db.size() != snr_inputs) {
        throw ContractError("rate predictor built for " + std::to_string(snr_inputs) + " SNR input(s), got " +
                            std::to_string(snr_db.size()));
    }
    Tensor x = features;
    if (snr_inputs > 0) {
        const std::size_t n = features.dim(0);
        std::vector<double> col(n * snr_inputs);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < snr_inputs; ++s) col[i * snr_inputs + s] = snr_db[s] / 20.0;
        x = concat({features, Tensor({n, snr_inputs}, std::move(col))}, 1);
    }
    return softmax_lastaxis(mlp_out.forward(mlp_hidden.forward(x)));
}

Tensor RatePredictor::predict_layer(const Tensor& y_rate, std::span<const double> snr_db) const
{
    if (is_final) throw ContractError("predict_layer called on the final (aggregating) predictor");
    return decide(rate_features(y_rate), snr_db);
}

void RatePredictor::collect(const std::string& prefix, ParamList& out) const
{
    local.collect(prefix + ".local", out);
    mlp_hidden.collect(prefix + ".mlp_hidden", out);
    mlp_out.collect(prefix + ".mlp_out", out);
}

Tensor aggregate_decisions(const std::vector<Tensor>& priors, std::size_t num_layers)
{
    if (priors.empty()) throw ContractError("aggregate_decisions: no prior decisions");
    Tensor acc = priors.front();
    for (std::size_t i = 1; i < priors.size(); ++i) acc = add(acc, priors[i]);
    return scale(acc, 1.0 / static_cast<double>(num_layers));
}

Tensor aggregate_final(const RatePredictor& final_predictor, const Tensor& z_rate_last,
                       const std::vector<Tensor>& priors, std::size_t num_layers, std::span<const double> snr_db)
{
    if (!final_predictor.is_final) throw ContractError("aggregate_final needs the final predictor");
    if (num_layers == 0 || priors.size() != num_layers - 1) {
        throw ContractError("aggregate_final: expected " + std::to_string(num_layers - 1) + " prior decisions, got " +
                            std::to_string(priors.size()));
    }
    const std::size_t q = final_predictor.mlp_out.out_features();
    const Tensor beta = priors.empty() ? Tensor::zeros({z_rate_last.dim(0), q}) : aggregate_decisions(priors, num_layers);
    return final_predictor.decide(concat({z_rate_last, beta}, 1), snr_db);
}

// ---------------------------------------------------------------------------

GumbelSample gumbel_sample(const Tensor& decision, double tau, Rng& rng)
{
    if (!(tau > 0.0)) throw ContractError("gumbel_sample: tau must be positive");
    if (decision.rank() != 2) throw DimensionError("gumbel_sample: expected [l_v, q], got " + to_string(decision.shape()));
    const std::size_t rows = decision.dim(0), q = decision.dim(1);
    std::vector<double> g(rows * q);
    for (auto& v : g) v = -std::log(-std::log(uniform_open(rng)));

    const auto logits = add(log(clamp_min(decision, kProbabilityFloor)), Tensor(decision.shape(), std::move(g)));
    std::vector<double> hard(rows * q, 0.0);
    const auto ld = logits.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const auto row = ld.subspan(i * q, q);
        hard[i * q + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = 1.0;
    }
    return {Tensor(decision.shape(), std::move(hard)), softmax_lastaxis(scale(logits, 1.0 / tau)), tau};
}

Tensor straight_through_select(const GumbelSample& sample) { return straight_through(sample.hard, sample.soft); }

Tensor argmax_select(const Tensor& decision)
{
    if (decision.rank() != 2) throw DimensionError("argmax_select: expected [l_v, q]");
    const std::size_t rows = decision.dim(0), q = decision.dim(1);
    std::vector<double> hard(rows * q, 0.0);
    const auto dd = decision.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const auto row = dd.subspan(i * q, q);
        hard[i * q + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = 1.0;
    }
    return Tensor(decision.shape(), std::move(hard));
}

// ---------------------------------------------------------------------------

std::size_t MaskAndSideInfo::total_retained() const
{
    std::size_t s = 0;
    for (auto v : k) s += v;
    return s;
}

MaskAndSideInfo mask_from_counts(std::span<const std::size_t> k, std::size_t d)
{
    if (k.empty()) throw InputError("mask: no tokens");
    MaskAndSideInfo out;
    std::vector<double> m(k.size() * d, 0.0);
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (k[i] < 2 || k[i] > d || k[i] % 2 != 0) {
            throw ContractError("mask: retained count " + std::to_string(k[i]) + " must be even and within [2, " +
                                std::to_string(d) + "]");
        }
        std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(i * d), k[i], 1.0);
        out.k.push_back(k[i]);
        out.b.push_back(static_cast<std::uint16_t>(k[i]));
    }
    out.mask = Tensor({k.size(), d}, std::move(m));
    return out;
}

MaskAndSideInfo build_mask(const Tensor& selection, const CandidateRates& rates)
{
    if (selection.rank() != 2 || selection.dim(1) != rates.q()) {
        throw DimensionError("build_mask: selection must be [l_v, " + std::to_string(rates.q()) + "], got " +
                             to_string(selection.shape()));
    }
    const std::size_t rows = selection.dim(0), q = rates.q();
    std::vector<std::size_t> k(rows);
    const auto sd = selection.data();
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t ones = 0, hot = 0;
        for (std::size_t j = 0; j < q; ++j) {
            const double v = sd[i * q + j];
            if (v == 1.0) {
                ++ones;
                hot = j;
            } else if (v != 0.0) {
                ones = q + 1;
            }
        }
        if (ones != 1) throw ContractError("build_mask: row " + std::to_string(i) + " is not one-hot");
        k[i] = rates.rates[hot];
    }
    return mask_from_counts(k, rates.d);
}

MaskAndSideInfo mask_from_side_info(std::span<const std::uint16_t> b, std::size_t d)
{
    std::vector<std::size_t> k(b.begin(), b.end());
    return mask_from_counts(k, d);
}

double rate_loss(const MaskAndSideInfo& mask)
{
    const auto md = mask.mask.data();
    double s = 0.0;
    for (double v : md) s += v;
    return s;
}

Tensor rate_surrogate(const Tensor& selection, const CandidateRates& rates)
{
    return sum(matmul(selection, rates.rates_column()));
}

Tensor compensate(const Tensor& s_hat, const MaskAndSideInfo& mask, const Tensor& c)
{
    if (s_hat.shape() != mask.mask.shape() || c.rank() != 1 || c.dim(0) != mask.channels()) {
        throw DimensionError("compensate: s_hat " + to_string(s_hat.shape()) + ", mask " +
                             to_string(mask.mask.shape()) + ", c " + to_string(c.shape()));
    }
    std::vector<double> inv(mask.mask.numel());
    const auto md = mask.mask.data();
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - md[i];
    const auto fill = hadamard(Tensor(mask.mask.shape(), std::move(inv)), expand_leading(c, mask.tokens()));
    return add(s_hat, fill);
}

std::vector<std::uint8_t> encode_side_info(std::span<const std::uint16_t> b)
{
    std::vector<std::uint8_t> out;
    out.reserve(2 * b.size());
    for (auto v : b) {
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    return out;
}

std::vector<std::uint16_t> decode_side_info(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() % 2 != 0) throw ProtocolError("side info: odd byte count");
    std::vector<std::uint16_t> b(bytes.size() / 2);
    for (std::size_t i = 0; i < b.size(); ++i) {
        b[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    }
    return b;
}

}  // namespace vqasc
