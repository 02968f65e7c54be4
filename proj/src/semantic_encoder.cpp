#include "vqasc/semantic_encoder.hpp"

#include <bit>

namespace vqasc {

void EncoderConfig::validate() const
{
    if (l_c == 0 || l_f == 0 || l_v != l_c * l_f) {
        throw InputError("encoder config: l_v (" + std::to_string(l_v) + ") must equal l_c * l_f (" +
                         std::to_string(l_c) + " * " + std::to_string(l_f) + ")");
    }
    if (d < 2 || !std::has_single_bit(d)) throw InputError("encoder config: d must be a power of two >= 2");
    if (r == 0 || m == 0) throw InputError("encoder config: r and m must be positive");
    if (temporal_heads == 0 || m % temporal_heads != 0) {
        throw InputError("encoder config: m must be divisible by temporal_heads");
    }
}

std::vector<std::size_t> sample_keyframes(std::size_t total_frames, std::size_t l_v)
{
    if (l_v == 0) throw InputError("sample_keyframes: l_v must be positive");
    if (total_frames < l_v) {
        throw InputError("sample_keyframes: video has " + std::to_string(total_frames) + " frames, need at least " +
                         std::to_string(l_v));
    }
    std::vector<std::size_t> idx(l_v);
    for (std::size_t k = 0; k < l_v; ++k) idx[k] = k * total_frames / l_v;
    return idx;
}

// ---------------------------------------------------------------------------

SyntheticWorld SyntheticWorld::create(std::uint64_t seed, std::size_t classes, std::size_t r, std::size_t m,
                                      double noise_sigma, double jitter_sigma, double drift_scale)
{
    SyntheticWorld w;
    w.classes = classes;
    w.r = r;
    w.m = m;
    w.noise_sigma = noise_sigma;
    w.jitter_sigma = jitter_sigma;
    w.drift_scale = drift_scale;
    auto rng = make_rng(seed, "world");
    w.prototypes.resize(r * m);
    for (auto& v : w.prototypes) v = standard_normal(rng);
    w.object_drift.resize(classes * r * m);
    for (auto& v : w.object_drift) v = drift_scale * standard_normal(rng);
    w.frame_drift.resize(classes * m);
    for (auto& v : w.frame_drift) v = drift_scale * standard_normal(rng);
    return w;
}

SyntheticVideoProvider::SyntheticVideoProvider(std::shared_ptr<const SyntheticWorld> world, EncoderConfig cfg,
                                               std::size_t class_id, std::uint64_t seed)
    : world_(std::move(world)), cfg_(cfg), class_id_(class_id), seed_(seed)
{
    cfg_.validate();
    if (!world_ || class_id_ >= world_->classes) throw InputError("synthetic provider: class id out of range");
    if (world_->r != cfg_.r || world_->m != cfg_.m) throw InputError("synthetic provider: world dims differ from config");
    auto rng = make_rng(seed_, "video-length");
    total_frames_ = cfg_.l_v + static_cast<std::size_t>(rng() % (2 * cfg_.l_v + 1));
}

std::vector<ClipFeatures> SyntheticVideoProvider::clips() const
{
    const auto& w = *world_;
    const std::size_t r = cfg_.r, m = cfg_.m;
    auto rng = make_rng(seed_, "video");

    std::vector<double> jitter(r * m);
    for (auto& v : jitter) v = w.jitter_sigma * standard_normal(rng);
    std::vector<double> background(m);
    for (auto& v : background) v = w.jitter_sigma * standard_normal(rng);

    const double* drift = w.object_drift.data() + class_id_ * r * m;
    const double* fdrift = w.frame_drift.data() + class_id_ * m;
    const auto keys = sample_keyframes(total_frames_, cfg_.l_v);

    std::vector<ClipFeatures> out;
    out.reserve(cfg_.l_c);
    for (std::size_t c = 0; c < cfg_.l_c; ++c) {
        std::vector<double> obj(cfg_.l_f * r * m);
        std::vector<double> frm(cfg_.l_f * m);
        for (std::size_t j = 0; j < cfg_.l_f; ++j) {
            const double s = static_cast<double>(keys[c * cfg_.l_f + j]) / static_cast<double>(total_frames_ - 1);
            for (std::size_t k = 0; k < r; ++k) {
                for (std::size_t e = 0; e < m; ++e) {
                    const std::size_t km = k * m + e;
                    obj[(j * r + k) * m + e] =
                        w.prototypes[km] + jitter[km] + s * drift[km] + w.noise_sigma * standard_normal(rng);
                }
            }
            for (std::size_t e = 0; e < m; ++e) {
                frm[j * m + e] = background[e] + s * fdrift[e] + w.noise_sigma * standard_normal(rng);
            }
        }
        out.push_back({Tensor({cfg_.l_f, r, m}, std::move(obj)), Tensor({cfg_.l_f, m}, std::move(frm))});
    }
    return out;
}

// ---------------------------------------------------------------------------

GraphConvParams GraphConvParams::create(std::size_t m, Rng& rng)
{
    return {normal_param({m, m}, rng), normal_param({m, m}, rng), normal_param({m, m}, rng)};
}

void GraphConvParams::collect(const std::string& prefix, ParamList& out) const
{
    out.emplace_back(prefix + ".w_a", w_a);
    out.emplace_back(prefix + ".w_b", w_b);
    out.emplace_back(prefix + ".w_g", w_g);
}

Tensor temporal_aggregate(const Tensor& o, const std::vector<TransformerBlock>& blocks)
{
    if (o.rank() < 3) throw DimensionError("temporal_aggregate: expected [..., l_f, r, m], got " + to_string(o.shape()));
    const std::size_t rank = o.rank();
    const std::size_t l_f = o.dim(rank - 3), r = o.dim(rank - 2), m = o.dim(rank - 1);
    const std::size_t lead = o.numel() / (l_f * r * m);
    for (const auto& b : blocks) {
        if (b.width() != m) throw DimensionError("temporal_aggregate: block width differs from m");
    }
    // [lead, l_f, r, m] -> [lead * r, l_f, m]: one sequence per object slot.
    auto tracks = permute(reshape(o, {lead, l_f, r, m}), {0, 2, 1, 3});
    auto x = reshape(tracks, {lead * r, l_f, m});
    for (const auto& b : blocks) x = b.forward(x);
    auto back = permute(reshape(x, {lead, r, l_f, m}), {0, 2, 1, 3});
    return reshape(back, o.shape());
}

Tensor spatial_graph_conv(const Tensor& o, const GraphConvParams& layer)
{
    if (o.rank() < 3) throw DimensionError("spatial_graph_conv: expected [..., l_f, r, m], got " + to_string(o.shape()));
    const std::size_t rank = o.rank();
    const std::size_t r = o.dim(rank - 2), m = o.dim(rank - 1);
    if (layer.w_g.shape() != Shape{m, m}) throw DimensionError("spatial_graph_conv: parameter width differs from m");
    const std::size_t frames = o.numel() / (r * m);
    auto x = reshape(o, {frames, r, m});
    auto a = softmax_lastaxis(bmm(matmul(x, layer.w_a), transpose(matmul(x, layer.w_b))));
    auto y = add(gelu(matmul(bmm(a, x), layer.w_g)), x);
    return reshape(y, o.shape());
}

Tensor pool_fuse_project(const Tensor& o, const Tensor& f, const Linear& proj)
{
    if (o.rank() < 3 || f.rank() != o.rank() - 1) {
        throw DimensionError("pool_fuse_project: objects " + to_string(o.shape()) + ", frames " + to_string(f.shape()));
    }
    auto pooled = mean(o, o.rank() - 2);
    if (pooled.shape() != f.shape()) {
        throw DimensionError("pool_fuse_project: pooled objects " + to_string(pooled.shape()) + " vs frames " +
                             to_string(f.shape()));
    }
    return proj.forward(concat({pooled, f}, f.rank() - 1));
}

// ---------------------------------------------------------------------------

SemanticEncoder SemanticEncoder::create(const EncoderConfig& cfg, Rng& rng)
{
    cfg.validate();
    SemanticEncoder enc;
    enc.cfg_ = cfg;
    for (std::size_t i = 0; i < cfg.temporal_blocks; ++i) {
        enc.temporal.push_back(TransformerBlock::create(cfg.m, cfg.temporal_heads, cfg.ffn_mult * cfg.m, rng));
    }
    enc.graph = GraphConvParams::create(cfg.m, rng);
    enc.proj = Linear::create(2 * cfg.m, cfg.d, Activation::none, rng);
    return enc;
}

Tensor SemanticEncoder::encode_clip(const ClipFeatures& clip) const
{
    if (clip.objects.shape() != Shape{cfg_.l_f, cfg_.r, cfg_.m} || clip.frames.shape() != Shape{cfg_.l_f, cfg_.m}) {
        throw DimensionError("encode_clip: objects " + to_string(clip.objects.shape()) + ", frames " +
                             to_string(clip.frames.shape()) + " do not match the encoder config");
    }
    auto o = spatial_graph_conv(temporal_aggregate(clip.objects, temporal), graph);
    return pool_fuse_project(o, clip.frames, proj);
}

Tensor SemanticEncoder::encode_video(const FeatureProvider& provider) const
{
    const auto clips = provider.clips();
    if (clips.size() != cfg_.l_c) {
        throw InputError("encode_video: provider yielded " + std::to_string(clips.size()) + " clips, expected " +
                         std::to_string(cfg_.l_c));
    }
    // All clips go through the per-clip pipeline as one batch; every op acts
    // on a single clip's slice so clips stay independent.
    std::vector<Tensor> objs, frames;
    for (const auto& c : clips) {
        if (c.objects.shape() != Shape{cfg_.l_f, cfg_.r, cfg_.m} || c.frames.shape() != Shape{cfg_.l_f, cfg_.m}) {
            throw DimensionError("encode_video: clip features do not match the encoder config");
        }
        objs.push_back(reshape(c.objects, {1, cfg_.l_f, cfg_.r, cfg_.m}));
        frames.push_back(reshape(c.frames, {1, cfg_.l_f, cfg_.m}));
    }
    auto o = spatial_graph_conv(temporal_aggregate(concat(objs, 0), temporal), graph);
    auto y = pool_fuse_project(o, concat(frames, 0), proj);
    return reshape(y, {cfg_.l_v, cfg_.d});
}

void SemanticEncoder::collect(const std::string& prefix, ParamList& out) const
{
    for (std::size_t i = 0; i < temporal.size(); ++i) temporal[i].collect(prefix + ".temporal" + std::to_string(i), out);
    graph.collect(prefix + ".graph", out);
    proj.collect(prefix + ".proj", out);
}

}  // namespace vqasc
