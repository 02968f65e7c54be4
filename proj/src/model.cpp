#include "vqasc/model.hpp"

#include <algorithm>

#include "vqasc/dataset.hpp"

namespace vqasc {

namespace {

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key)
{
    const auto it = meta.find(key);
    if (it == meta.end()) throw IoError("checkpoint metadata lacks '" + key + "'");
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw IoError("checkpoint metadata '" + key + "' is not a count: " + it->second);
    }
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

void ModelConfig::validate() const
{
    enc.validate();
    jsc.validate();
    if (jsc.l_v != enc.l_v || jsc.d != enc.d) {
        throw InputError("model config: codec dims (" + std::to_string(jsc.l_v) + ", " + std::to_string(jsc.d) +
                         ") differ from encoder (" + std::to_string(enc.l_v) + ", " + std::to_string(enc.d) + ")");
    }
    if (fuser_heads == 0 || enc.d % fuser_heads != 0) throw InputError("model config: d must divide by fuser heads");
}

std::map<std::string, std::string> ModelConfig::to_metadata() const
{
    auto s = [](std::size_t v) { return std::to_string(v); };
    return {
        {"model.l_v", s(enc.l_v)},
        {"model.l_c", s(enc.l_c)},
        {"model.l_f", s(enc.l_f)},
        {"model.r", s(enc.r)},
        {"model.m", s(enc.m)},
        {"model.d", s(enc.d)},
        {"model.temporal_blocks", s(enc.temporal_blocks)},
        {"model.temporal_heads", s(enc.temporal_heads)},
        {"model.encoder_ffn_mult", s(enc.ffn_mult)},
        {"model.jsc_blocks", s(jsc.blocks)},
        {"model.jsc_heads", s(jsc.heads)},
        {"model.jsc_ffn_mult", s(jsc.ffn_mult)},
        {"model.snr_inputs", s(jsc.snr_inputs)},
        {"model.fuser_heads", s(fuser_heads)},
        {"model.text_blocks", s(text_blocks)},
        {"model.refine_blocks", s(refine_blocks)},
        {"model.vocab", s(vocab)},
        {"model.init", "normal(0, 0.02) weights, zero biases, unit layer-norm gain"},
    };
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta)
{
    ModelConfig c;
    c.enc.l_v = meta_size(meta, "model.l_v");
    c.enc.l_c = meta_size(meta, "model.l_c");
    c.enc.l_f = meta_size(meta, "model.l_f");
    c.enc.r = meta_size(meta, "model.r");
    c.enc.m = meta_size(meta, "model.m");
    c.enc.d = meta_size(meta, "model.d");
    c.enc.temporal_blocks = meta_size(meta, "model.temporal_blocks");
    c.enc.temporal_heads = meta_size(meta, "model.temporal_heads");
    c.enc.ffn_mult = meta_size(meta, "model.encoder_ffn_mult");
    c.jsc.l_v = c.enc.l_v;
    c.jsc.d = c.enc.d;
    c.jsc.blocks = meta_size(meta, "model.jsc_blocks");
    c.jsc.heads = meta_size(meta, "model.jsc_heads");
    c.jsc.ffn_mult = meta_size(meta, "model.jsc_ffn_mult");
    c.jsc.snr_inputs = meta_size(meta, "model.snr_inputs");
    c.fuser_heads = meta_size(meta, "model.fuser_heads");
    c.text_blocks = meta_size(meta, "model.text_blocks");
    c.refine_blocks = meta_size(meta, "model.refine_blocks");
    c.vocab = meta_size(meta, "model.vocab");
    return c;
}

const char* group_name(ParamGroup g)
{
    switch (g) {
    case ParamGroup::zeta: return "zeta";
    case ParamGroup::theta: return "theta";
    case ParamGroup::epsilon: return "epsilon";
    case ParamGroup::phi: return "phi";
    case ParamGroup::nu: return "nu";
    }
    return "?";
}

ParamGroup group_of(const std::string& name)
{
    if (starts_with(name, "sem.")) return ParamGroup::zeta;
    if (starts_with(name, "fuser.")) return ParamGroup::nu;
    if (starts_with(name, "jsc.enc.pred")) return ParamGroup::epsilon;
    if (starts_with(name, "jsc.enc.block") || name == "jsc.rate_embedding") return ParamGroup::theta;
    if (starts_with(name, "jsc.dec.")) return ParamGroup::phi;
    throw ContractError("parameter '" + name + "' belongs to no group");
}

Model Model::create(const ModelConfig& cfg_in, std::uint64_t seed)
{
    ModelConfig cfg = cfg_in;
    if (cfg.vocab == 0) cfg.vocab = Vocabulary::size();
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    auto rng_sem = make_rng(seed, "init-semantic");
    auto rng_jsc = make_rng(seed, "init-jsc");
    auto rng_fuser = make_rng(seed, "init-fuser");
    m.sem = SemanticEncoder::create(cfg.enc, rng_sem);
    m.jsc = JscCodec::create(cfg.jsc, rng_jsc);
    m.text = TextEncoder::create(cfg.vocab, cfg.enc.d, cfg.fuser_heads, cfg.text_blocks, 2, rng_fuser);
    m.fuser = FuserParams::create(cfg.enc.d, cfg.fuser_heads, cfg.refine_blocks, 2, rng_fuser);
    return m;
}

Model Model::from_checkpoint(const Checkpoint& ckpt)
{
    Model m = create(ModelConfig::from_metadata(ckpt.metadata), ckpt.seed);
    m.load(ckpt);
    return m;
}

ParamList Model::parameters() const
{
    ParamList out;
    sem.collect("sem", out);
    jsc.collect("jsc", out);
    text.collect("fuser.text", out);
    fuser.collect("fuser", out);
    return out;
}

Checkpoint Model::to_checkpoint(std::uint64_t seed, std::map<std::string, std::string> extra) const
{
    Checkpoint c;
    c.seed = seed;
    c.metadata = cfg_.to_metadata();
    for (auto& [k, v] : extra) c.metadata[k] = v;
    for (const auto& [name, t] : parameters()) c.tensors.emplace(name, t.detach());
    return c;
}

void Model::load(const Checkpoint& ckpt)
{
    auto params = parameters();
    for (auto& [name, t] : params) {
        const auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw IoError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw IoError("checkpoint parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                          ", model expects " + to_string(t.shape()));
        }
        const auto src = it->second.data();
        std::copy(src.begin(), src.end(), t.mutable_data().begin());
    }
    if (ckpt.tensors.size() != params.size()) throw IoError("checkpoint holds parameters the model does not know");
}

}  // namespace vqasc
