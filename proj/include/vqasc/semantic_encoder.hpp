#pragma once

// Spatiotemporal semantic encoder: object tracks are refined by temporal
// self-attention (one sequence per object slot, frames as positions), objects
// within a frame interact through a learned-affinity graph convolution, and
// the pooled object feature is fused with the frame feature and projected to
// d channels per frame. Clips are encoded independently and concatenated
// along the token axis.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "vqasc/nn.hpp"

namespace vqasc {

struct EncoderConfig {
    std::size_t l_v = 16;
    std::size_t l_c = 4;
    std::size_t l_f = 4;
    std::size_t r = 10;
    std::size_t m = 64;
    std::size_t d = 32;
    std::size_t temporal_blocks = 2;
    std::size_t temporal_heads = 4;
    std::size_t ffn_mult = 2;

    /// Throws InputError unless l_v == l_c * l_f and d is a power of two >= 2.
    void validate() const;
};

/// Backbone features for one clip.
struct ClipFeatures {
    Tensor objects;  // [l_f, r, m]
    Tensor frames;   // [l_f, m]
};

class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual std::vector<ClipFeatures> clips() const = 0;
};

/// Evenly spaced keyframe indices floor(k * total / l_v), k = 0..l_v-1.
std::vector<std::size_t> sample_keyframes(std::size_t total_frames, std::size_t l_v);

/// Dataset-level generative parameters shared by every synthetic video.
struct SyntheticWorld {
    std::size_t classes = 5;
    std::size_t r = 10;
    std::size_t m = 64;
    double noise_sigma = 0.1;
    double jitter_sigma = 0.5;
    double drift_scale = 0.25;

    std::vector<double> prototypes;    // [r, m]
    std::vector<double> object_drift;  // [classes, r, m]
    std::vector<double> frame_drift;   // [classes, m]

    static SyntheticWorld create(std::uint64_t seed, std::size_t classes, std::size_t r, std::size_t m,
                                 double noise_sigma = 0.1, double jitter_sigma = 0.5, double drift_scale = 0.25);
};

/// One synthetic video. Each object slot starts at a shared prototype plus a
/// per-video offset and moves along its class-specific direction as the video
/// progresses; i.i.d. Gaussian noise is added to every frame.
class SyntheticVideoProvider : public FeatureProvider {
public:
    SyntheticVideoProvider(std::shared_ptr<const SyntheticWorld> world, EncoderConfig cfg, std::size_t class_id,
                           std::uint64_t seed);

    std::vector<ClipFeatures> clips() const override;
    std::size_t total_frames() const { return total_frames_; }

private:
    std::shared_ptr<const SyntheticWorld> world_;
    EncoderConfig cfg_;
    std::size_t class_id_;
    std::uint64_t seed_;
    std::size_t total_frames_;
};

struct GraphConvParams {
    Tensor w_a;  // [m, m]
    Tensor w_b;  // [m, m]
    Tensor w_g;  // [m, m]

    static GraphConvParams create(std::size_t m, Rng& rng);
    void collect(const std::string& prefix, ParamList& out) const;
};

/// o: [..., l_f, r, m]. Each object slot's frame sequence runs through the
/// blocks independently; shape is preserved.
Tensor temporal_aggregate(const Tensor& o, const std::vector<TransformerBlock>& blocks);

/// o: [..., l_f, r, m]. Per frame: A = row-softmax((O W_a)(O W_b)^T),
/// out = GELU(A O W_g) + O.
Tensor spatial_graph_conv(const Tensor& o, const GraphConvParams& layer);

/// Mean over objects, concat with frame features, linear map to d.
/// o: [..., l_f, r, m], f: [..., l_f, m] -> [..., l_f, d]
Tensor pool_fuse_project(const Tensor& o, const Tensor& f, const Linear& proj);

class SemanticEncoder {
public:
    static SemanticEncoder create(const EncoderConfig& cfg, Rng& rng);

    const EncoderConfig& config() const { return cfg_; }
    /// [l_f, d] semantics for one clip.
    Tensor encode_clip(const ClipFeatures& clip) const;
    /// [l_v, d] semantics for the whole video.
    Tensor encode_video(const FeatureProvider& provider) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::vector<TransformerBlock> temporal;
    GraphConvParams graph;
    Linear proj;

private:
    EncoderConfig cfg_;
};

}  // namespace vqasc
