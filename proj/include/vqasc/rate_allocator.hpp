#pragma once

// Learning-based bandwidth allocation: per-layer rate predictors read the
// rate branch of the JSC encoder, the last predictor aggregates the earlier
// decisions, and a Gumbel straight-through sample picks one of q = log2(d)
// candidate retained-channel counts per token.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vqasc/nn.hpp"

namespace vqasc {

/// {2, 4, 8, ..., d}; q = log2(d).
struct CandidateRates {
    std::size_t d = 0;
    std::vector<std::size_t> rates;

    explicit CandidateRates(std::size_t d);
    std::size_t q() const { return rates.size(); }
    /// [q, d] with row j = rates[j] leading ones; selection . table = mask.
    Tensor prefix_table() const;
    /// [q, 1] column of rates as reals.
    Tensor rates_column() const;
};

/// Rate predictor for one encoder layer. Intermediate layers see
/// concat(Z_local, Z_global); the final one additionally sees the aggregated
/// earlier decisions (q extra channels). SNR-conditioned predictors append
/// one channel per SNR value, normalised as snr_db / 20.
struct RatePredictor {
    Linear local;       // d -> d, GELU
    Linear mlp_hidden;  // (2d + extras) -> d, GELU
    Linear mlp_out;     // d -> q
    bool is_final = false;
    std::size_t snr_inputs = 0;

    static RatePredictor create(std::size_t d, std::size_t q, bool is_final, std::size_t snr_inputs, Rng& rng);

    /// Z_rate = concat(Z_local, mean-over-tokens(Z_local)) : [l_v, 2d].
    Tensor rate_features(const Tensor& y_rate) const;
    /// Intermediate decision D_l = softmax(MLP(Z_rate[, snr])) : [l_v, q].
    Tensor predict_layer(const Tensor& y_rate, std::span<const double> snr_db = {}) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor decide(const Tensor& features, std::span<const double> snr_db) const;
};

/// beta(D_1..D_{L-1}) = (1/L) * sum_i D_i. The divisor is the block count L,
/// not the number of summed terms.
Tensor aggregate_decisions(const std::vector<Tensor>& priors, std::size_t num_layers);

/// Final decision D = softmax(MLP(concat(Z_rate^L, beta(priors)[, snr]))).
/// Requires exactly num_layers - 1 priors.
Tensor aggregate_final(const RatePredictor& final_predictor, const Tensor& z_rate_last,
                       const std::vector<Tensor>& priors, std::size_t num_layers,
                       std::span<const double> snr_db = {});

inline constexpr double kProbabilityFloor = 1e-12;

struct GumbelSample {
    Tensor hard;  // one-hot [l_v, q], no gradient
    Tensor soft;  // softmax((log D + G) / tau), differentiable
    double tau = 1.0;
};

/// One shared Gumbel(0,1) draw G produces both the hard and soft rows.
/// Probabilities are clamped at kProbabilityFloor before the log.
GumbelSample gumbel_sample(const Tensor& decision, double tau, Rng& rng);

/// Forward value equals sample.hard; gradients flow into sample.soft.
Tensor straight_through_select(const GumbelSample& sample);

/// One-hot rows at argmax(decision), lowest index on ties. Used at inference.
Tensor argmax_select(const Tensor& decision);

struct MaskAndSideInfo {
    Tensor mask;                  // [l_v, d] binary, row i = k_i leading ones
    std::vector<std::uint16_t> b; // retained-channel counts as carried on the side link
    std::vector<std::size_t> k;   // per-token retained channels

    std::size_t tokens() const { return k.size(); }
    std::size_t channels() const { return mask.dim(1); }
    std::size_t total_retained() const;
};

/// Mask from explicit per-token counts (each even, 2 <= k <= d).
MaskAndSideInfo mask_from_counts(std::span<const std::size_t> k, std::size_t d);
/// Mask from a one-hot selection over the candidate rates.
MaskAndSideInfo build_mask(const Tensor& selection, const CandidateRates& rates);
/// Receiver-side reconstruction from the side-link counts alone.
MaskAndSideInfo mask_from_side_info(std::span<const std::uint16_t> b, std::size_t d);

/// sum_ij M_ij.
double rate_loss(const MaskAndSideInfo& mask);
/// Differentiable bandwidth surrogate sum_i <selection_i, rates>.
Tensor rate_surrogate(const Tensor& selection, const CandidateRates& rates);

/// s_hat + (J - M) . c : masked channels take the learned compensation values.
Tensor compensate(const Tensor& s_hat, const MaskAndSideInfo& mask, const Tensor& c);

/// Side link encoding: l_v unsigned 16-bit little-endian counts.
std::vector<std::uint8_t> encode_side_info(std::span<const std::uint16_t> b);
std::vector<std::uint16_t> decode_side_info(std::span<const std::uint8_t> bytes);

}  // namespace vqasc
