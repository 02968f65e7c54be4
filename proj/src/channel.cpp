#include "vqasc/channel.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

namespace vqasc {

void ChannelConfig::validate() const
{
    if (std::isnan(snr_db)) throw InputError("channel: snr_db is NaN");
    if (kind == ChannelKind::rayleigh_block && !(sigma_h > 0.0)) {
        throw InputError("channel: sigma_h must be positive for Rayleigh fading");
    }
}

double ChannelConfig::noise_variance() const
{
    if (snr_db == kNoiseless) return 0.0;
    return std::pow(10.0, -snr_db / 10.0);
}

double SymbolStream::power() const
{
    const auto r = reals.data();
    double p = 0.0;
    for (double v : r) p += v * v;
    return p / static_cast<double>(size());
}

SymbolStream flatten_r2c(const Tensor& s_v, const MaskAndSideInfo& side)
{
    if (s_v.shape() != side.mask.shape()) {
        throw DimensionError("flatten_r2c: tokens " + to_string(s_v.shape()) + " vs mask " +
                             to_string(side.mask.shape()));
    }
    const std::size_t d = side.channels();
    std::vector<std::size_t> idx;
    idx.reserve(side.total_retained());
    for (std::size_t i = 0; i < side.tokens(); ++i) {
        if (side.k[i] % 2 != 0) throw ContractError("flatten_r2c: odd retained count at token " + std::to_string(i));
        for (std::size_t j = 0; j < side.k[i]; ++j) idx.push_back(i * d + j);
    }
    const auto raw = gather(s_v, idx);
    const double n = static_cast<double>(idx.size() / 2);

    SymbolStream out;
    const auto power = scale(sum(hadamard(raw, raw)), 1.0 / n);
    out.raw_power = power.item();
    out.norm = sqrt(clamp_min(power, 1.0));
    out.reals = scale_by(raw, reciprocal(out.norm));
    return out;
}

double ChannelRealization::effective_snr_db(const ChannelConfig& cfg) const
{
    return cfg.snr_db + 20.0 * std::log10(std::abs(h));
}

ChannelRealization draw_realization(const ChannelConfig& cfg, Rng& rng)
{
    cfg.validate();
    ChannelRealization r;
    if (cfg.kind == ChannelKind::rayleigh_block) {
        const double mag = cfg.sigma_h * std::sqrt(-2.0 * std::log(uniform_open(rng)));
        const double phase = 2.0 * std::numbers::pi * uniform_open(rng);
        r.h = std::polar(mag, phase);
    }
    return r;
}

TransmitResult transmit(const SymbolStream& s, const ChannelConfig& cfg, const ChannelRealization& real, Rng& rng)
{
    cfg.validate();
    const std::size_t n = s.size();
    const double component_std = std::sqrt(cfg.noise_variance() / 2.0);

    TransmitResult rx;
    rx.h = real.h;
    rx.noise.assign(2 * n, 0.0);
    if (component_std > 0.0) {
        for (auto& v : rx.noise) v = component_std * standard_normal(rng);
    }
    // (h s + n) / h = s + n / h; the offset is a constant for autodiff.
    std::vector<double> offset(2 * n);
    for (std::size_t t = 0; t < n; ++t) {
        const std::complex<double> e = std::complex<double>(rx.noise[2 * t], rx.noise[2 * t + 1]) / real.h;
        offset[2 * t] = e.real();
        offset[2 * t + 1] = e.imag();
    }
    rx.received.reals = add(s.reals, Tensor(s.reals.shape(), std::move(offset)));
    rx.received.norm = s.norm;
    rx.received.raw_power = s.raw_power;
    return rx;
}

TransmitResult transmit(const SymbolStream& s, const ChannelConfig& cfg, Rng& rng)
{
    const auto real = draw_realization(cfg, rng);
    return transmit(s, cfg, real, rng);
}

Tensor c2r_unflatten(const SymbolStream& s_hat, const MaskAndSideInfo& side)
{
    if (s_hat.reals.numel() != side.total_retained()) {
        throw ProtocolError("c2r_unflatten: received " + std::to_string(s_hat.size()) + " symbols, side info implies " +
                            std::to_string(side.total_retained() / 2));
    }
    const std::size_t d = side.channels();
    std::vector<std::size_t> idx;
    idx.reserve(side.total_retained());
    for (std::size_t i = 0; i < side.tokens(); ++i)
        for (std::size_t j = 0; j < side.k[i]; ++j) idx.push_back(i * d + j);
    return scatter(scale_by(s_hat.reals, s_hat.norm), idx, side.mask.shape());
}

BcrReport compute_bcr(const MaskAndSideInfo& side, std::size_t frame_x, std::size_t frame_y)
{
    if (frame_x == 0 || frame_y == 0) throw InputError("compute_bcr: frame geometry must be positive");
    BcrReport r;
    r.n = side.total_retained() / 2;
    r.source_size = static_cast<double>(side.tokens()) * 3.0 * static_cast<double>(frame_x) *
                    static_cast<double>(frame_y);
    r.bcr = static_cast<double>(r.n) / r.source_size;
    r.side_info_bits = 16 * side.tokens();
    return r;
}

void write_channel_trace(std::ostream& os, const SymbolStream& sent, const TransmitResult& rx)
{
    const auto prec = os.precision(17);
    os << "re,im,noise_re,noise_im\n";
    for (std::size_t t = 0; t < sent.size(); ++t) {
        const auto s = sent.symbol(t);
        os << s.real() << ',' << s.imag() << ',' << rx.noise[2 * t] << ',' << rx.noise[2 * t + 1] << '\n';
    }
    os.precision(prec);
}

}  // namespace vqasc
