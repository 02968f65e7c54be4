#pragma once

// Physical layer: retained channels are flattened into complex symbols
// (consecutive reals pair up as re/im), power-normalised, sent over an AWGN
// or Rayleigh block-fading channel and reassembled at the receiver.
//
// Symbols are kept as interleaved (re, im) reals inside a Tensor so the
// whole path stays differentiable. Channel noise is a constant offset in the
// backward pass; with perfect-CSI equalisation the fading gain cancels, so
// d(received)/d(sent) is the identity for both channel kinds.

#include <complex>
#include <cstddef>
#include <iosfwd>
#include <limits>
#include <vector>

#include "vqasc/rate_allocator.hpp"
#include "vqasc/rng.hpp"
#include "vqasc/tensor.hpp"

namespace vqasc {

enum class ChannelKind { awgn, rayleigh_block };

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

struct ChannelConfig {
    ChannelKind kind = ChannelKind::awgn;
    double snr_db = 10.0;  // kNoiseless disables the noise
    double sigma_h = 1.0;  // Rayleigh scale of |h|

    void validate() const;
    /// sigma^2 = 10^(-snr_db / 10) for unit signal power; 0 when noiseless.
    double noise_variance() const;
};

struct SymbolStream {
    Tensor reals;       // [2n] interleaved (re, im)
    Tensor norm;        // [1] transmitter divisor sqrt(max(1, P)); carried as metadata
    double raw_power = 0.0;  // mean |s|^2 before normalisation

    std::size_t size() const { return reals.numel() / 2; }
    std::complex<double> symbol(std::size_t i) const { return {reals[2 * i], reals[2 * i + 1]}; }
    /// (1/n) sum |s|^2 of the stream as it stands.
    double power() const;
};

/// Gather the first k_i channels of every token, pair them into complex
/// symbols and normalise the stream to mean power <= 1.
SymbolStream flatten_r2c(const Tensor& s_v, const MaskAndSideInfo& side);

/// One channel use: the block gain h (1 for AWGN), drawn before transmission
/// so an SNR-adaptive transmitter can see the instantaneous SNR.
struct ChannelRealization {
    std::complex<double> h{1.0, 0.0};

    /// snr_db + 20 log10 |h|.
    double effective_snr_db(const ChannelConfig& cfg) const;
};

ChannelRealization draw_realization(const ChannelConfig& cfg, Rng& rng);

struct TransmitResult {
    SymbolStream received;      // equalised: (h s + n) / h
    std::complex<double> h{1.0, 0.0};
    std::vector<double> noise;  // raw n as interleaved (re, im), before equalisation
};

TransmitResult transmit(const SymbolStream& s, const ChannelConfig& cfg, const ChannelRealization& real, Rng& rng);
/// Convenience overload that draws the realization from rng first.
TransmitResult transmit(const SymbolStream& s, const ChannelConfig& cfg, Rng& rng);

/// Undo the normalisation, unpack to reals and scatter into the first k_i
/// channels per token; other channels are zero. Throws ProtocolError when
/// the symbol count does not match sum(k) / 2.
Tensor c2r_unflatten(const SymbolStream& s_hat, const MaskAndSideInfo& side);

struct BcrReport {
    std::size_t n = 0;            // complex symbols
    double source_size = 0.0;     // l_v * 3 * x * y
    double bcr = 0.0;
    std::size_t side_info_bits = 0;
};

BcrReport compute_bcr(const MaskAndSideInfo& side, std::size_t frame_x = 167, std::size_t frame_y = 167);

/// CSV rows "re,im,noise_re,noise_im" for every transmitted symbol.
void write_channel_trace(std::ostream& os, const SymbolStream& sent, const TransmitResult& rx);

}  // namespace vqasc
