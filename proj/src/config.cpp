#include "vqasc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace vqasc {

namespace {

struct Entry {
    std::string section;
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& v)
{
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& v)
{
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
    return out;
}

std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
Entry size_entry(std::string section, std::string key, T ExperimentConfig::*outer, std::size_t T::*field)
{
    return {std::move(section), std::move(key),
            [=](const ExperimentConfig& c) { return std::to_string((c.*outer).*field); },
            [=](ExperimentConfig& c, const std::string& v) { (c.*outer).*field = parse_u64(v); }};
}

template <class T>
Entry double_entry(std::string section, std::string key, T ExperimentConfig::*outer, double T::*field)
{
    return {std::move(section), std::move(key), [=](const ExperimentConfig& c) { return fmt((c.*outer).*field); },
            [=](ExperimentConfig& c, const std::string& v) { (c.*outer).*field = parse_double(v); }};
}

Entry model_size(std::string section, std::string key, std::function<std::size_t&(ModelConfig&)> ref)
{
    return {std::move(section), std::move(key),
            [=](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ModelConfig&>(c.model))); },
            [=](ExperimentConfig& c, const std::string& v) { ref(c.model) = parse_u64(v); }};
}

const char* rate_mode_text(RateMode m)
{
    switch (m) {
    case RateMode::adaptive: return "adaptive";
    case RateMode::fixed: return "fixed";
    case RateMode::full: return "full";
    }
    return "?";
}

std::vector<Entry> stage_entries(std::size_t index)
{
    const std::string sec = std::string("stage.") + stage_name(static_cast<Stage>(index));
    auto plan = [index](ExperimentConfig& c) -> StagePlan& { return c.plans[index]; };
    auto cplan = [index](const ExperimentConfig& c) -> const StagePlan& { return c.plans[index]; };
    std::vector<Entry> e;
    e.push_back({sec, "epochs", [=](const ExperimentConfig& c) { return std::to_string(cplan(c).epochs); },
                 [=](ExperimentConfig& c, const std::string& v) { plan(c).epochs = parse_u64(v); }});
    e.push_back({sec, "learning_rate", [=](const ExperimentConfig& c) { return fmt(cplan(c).learning_rate); },
                 [=](ExperimentConfig& c, const std::string& v) { plan(c).learning_rate = parse_double(v); }});
    e.push_back({sec, "lambda", [=](const ExperimentConfig& c) { return fmt(cplan(c).lambda); },
                 [=](ExperimentConfig& c, const std::string& v) { plan(c).lambda = parse_double(v); }});
    e.push_back({sec, "tau_init", [=](const ExperimentConfig& c) { return fmt(cplan(c).tau_init); },
                 [=](ExperimentConfig& c, const std::string& v) { plan(c).tau_init = parse_double(v); }});
    e.push_back({sec, "tau_decay", [=](const ExperimentConfig& c) { return fmt(cplan(c).tau_decay); },
                 [=](ExperimentConfig& c, const std::string& v) { plan(c).tau_decay = parse_double(v); }});
    e.push_back({sec, "rate_mode", [=](const ExperimentConfig& c) { return std::string(rate_mode_text(cplan(c).rate_mode)); },
                 [=](ExperimentConfig& c, const std::string& v) {
                     if (v == "adaptive") plan(c).rate_mode = RateMode::adaptive;
                     else if (v == "fixed") plan(c).rate_mode = RateMode::fixed;
                     else if (v == "full") plan(c).rate_mode = RateMode::full;
                     else throw ConfigError("rate_mode must be adaptive, fixed or full, got '" + v + "'");
                 }});
    e.push_back({sec, "fixed_k",
                 [=](const ExperimentConfig& c) {
                     const auto& k = cplan(c).fixed_k;
                     if (k.empty()) return std::string("none");
                     std::string s;
                     for (std::size_t i = 0; i < k.size(); ++i) s += (i ? "," : "") + std::to_string(k[i]);
                     return s;
                 },
                 [=](ExperimentConfig& c, const std::string& v) {
                     auto& k = plan(c).fixed_k;
                     k.clear();
                     if (v == "none") return;
                     for (const auto& item : split_list(v)) k.push_back(parse_u64(item));
                 }});
    return e;
}

const std::vector<Entry>& entries()
{
    static const std::vector<Entry> table = [] {
        using C = ExperimentConfig;
        std::vector<Entry> t;
        t.push_back({"run", "seed", [](const C& c) { return std::to_string(c.seed); },
                     [](C& c, const std::string& v) { c.seed = parse_u64(v); }});

        t.push_back(size_entry("data", "train_tasks", &C::data, &DatasetConfig::train_tasks));
        t.push_back(size_entry("data", "test_tasks", &C::data, &DatasetConfig::test_tasks));
        t.push_back(size_entry("data", "classes", &C::data, &DatasetConfig::classes));
        t.push_back(size_entry("data", "candidates", &C::data, &DatasetConfig::candidates));
        t.push_back(double_entry("data", "noise_sigma", &C::data, &DatasetConfig::noise_sigma));
        t.push_back(double_entry("data", "jitter_sigma", &C::data, &DatasetConfig::jitter_sigma));
        t.push_back(double_entry("data", "drift_scale", &C::data, &DatasetConfig::drift_scale));

        t.push_back(model_size("encoder", "l_v", [](ModelConfig& m) -> std::size_t& { return m.enc.l_v; }));
        t.push_back(model_size("encoder", "l_c", [](ModelConfig& m) -> std::size_t& { return m.enc.l_c; }));
        t.push_back(model_size("encoder", "l_f", [](ModelConfig& m) -> std::size_t& { return m.enc.l_f; }));
        t.push_back(model_size("encoder", "r", [](ModelConfig& m) -> std::size_t& { return m.enc.r; }));
        t.push_back(model_size("encoder", "m", [](ModelConfig& m) -> std::size_t& { return m.enc.m; }));
        t.push_back(model_size("encoder", "d", [](ModelConfig& m) -> std::size_t& { return m.enc.d; }));
        t.push_back(model_size("encoder", "temporal_blocks",
                               [](ModelConfig& m) -> std::size_t& { return m.enc.temporal_blocks; }));
        t.push_back(model_size("encoder", "temporal_heads",
                               [](ModelConfig& m) -> std::size_t& { return m.enc.temporal_heads; }));
        t.push_back(model_size("encoder", "ffn_mult", [](ModelConfig& m) -> std::size_t& { return m.enc.ffn_mult; }));

        t.push_back(model_size("jsc", "blocks", [](ModelConfig& m) -> std::size_t& { return m.jsc.blocks; }));
        t.push_back(model_size("jsc", "heads", [](ModelConfig& m) -> std::size_t& { return m.jsc.heads; }));
        t.push_back(model_size("jsc", "ffn_mult", [](ModelConfig& m) -> std::size_t& { return m.jsc.ffn_mult; }));
        t.push_back(model_size("jsc", "snr_inputs", [](ModelConfig& m) -> std::size_t& { return m.jsc.snr_inputs; }));

        t.push_back(model_size("fuser", "heads", [](ModelConfig& m) -> std::size_t& { return m.fuser_heads; }));
        t.push_back(model_size("fuser", "text_blocks", [](ModelConfig& m) -> std::size_t& { return m.text_blocks; }));
        t.push_back(model_size("fuser", "refine_blocks", [](ModelConfig& m) -> std::size_t& { return m.refine_blocks; }));

        t.push_back({"train", "stages",
                     [](const C& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.run_stages.size(); ++i) s += (i ? "," : "") + std::string(stage_name(c.run_stages[i]));
                         return s;
                     },
                     [](C& c, const std::string& v) {
                         c.run_stages.clear();
                         for (const auto& item : split_list(v)) c.run_stages.push_back(parse_stage(item));
                     }});
        t.push_back(size_entry("train", "batch_size", &C::train, &TrainConfig::batch_size));
        t.push_back(double_entry("train", "snr_start", &C::train, &TrainConfig::snr_start));
        t.push_back(double_entry("train", "snr_end", &C::train, &TrainConfig::snr_end));
        t.push_back({"train", "fixed_snr", [](const C& c) { return c.train.fixed_snr ? fmt(*c.train.fixed_snr) : std::string("none"); },
                     [](C& c, const std::string& v) {
                         if (v == "none") c.train.fixed_snr.reset();
                         else c.train.fixed_snr = parse_double(v);
                     }});
        t.push_back(double_entry("train", "clip_norm", &C::train, &TrainConfig::clip_norm));

        t.push_back({"channel", "kind", [](const C& c) { return std::string(channel_name(c.train.channel.kind)); },
                     [](C& c, const std::string& v) { c.train.channel.kind = parse_channel(v); }});
        t.push_back({"channel", "sigma_h", [](const C& c) { return fmt(c.train.channel.sigma_h); },
                     [](C& c, const std::string& v) { c.train.channel.sigma_h = parse_double(v); }});
        t.push_back(size_entry("channel", "frame_x", &C::train, &TrainConfig::frame_x));
        t.push_back(size_entry("channel", "frame_y", &C::train, &TrainConfig::frame_y));

        for (std::size_t i = 0; i < 4; ++i) {
            auto e = stage_entries(i);
            t.insert(t.end(), e.begin(), e.end());
        }

        t.push_back({"eval", "snrs",
                     [](const C& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.eval.snrs.size(); ++i) s += (i ? "," : "") + fmt(c.eval.snrs[i]);
                         return s;
                     },
                     [](C& c, const std::string& v) {
                         c.eval.snrs.clear();
                         for (const auto& item : split_list(v)) c.eval.snrs.push_back(parse_double(item));
                     }});
        t.push_back(size_entry("eval", "draws", &C::eval, &EvalOptions::draws));
        t.push_back(size_entry("eval", "max_tasks", &C::eval, &EvalOptions::max_tasks));
        t.push_back({"eval", "selection",
                     [](const C& c) { return std::string(c.eval.selection == Selection::gumbel ? "gumbel" : "argmax"); },
                     [](C& c, const std::string& v) {
                         if (v == "gumbel") c.eval.selection = Selection::gumbel;
                         else if (v == "argmax") c.eval.selection = Selection::argmax;
                         else throw ConfigError("selection must be gumbel or argmax, got '" + v + "'");
                     }});
        return t;
    }();
    return table;
}

}  // namespace

std::vector<StagePlan> ExperimentConfig::selected_plans() const
{
    std::vector<StagePlan> out;
    for (auto s : run_stages) out.push_back(plans[static_cast<std::size_t>(s)]);
    return out;
}

void ExperimentConfig::use_paper_schedule()
{
    for (auto& p : plans) {
        const auto paper = StagePlan::paper_schedule(p.stage);
        p.epochs = paper.epochs;
        p.learning_rate = paper.learning_rate;
    }
}

void ExperimentConfig::validate() const
{
    data.validate();
    model.validate();
    train.validate();
    if (run_stages.empty()) throw ConfigError("train.stages selects no stage");
    for (std::size_t i = 1; i < run_stages.size(); ++i) {
        if (run_stages[i] <= run_stages[i - 1]) throw ConfigError("train.stages must be increasing (s1 -> s4)");
    }
    for (const auto& p : plans) {
        if (p.learning_rate <= 0.0) throw ConfigError(std::string("stage ") + stage_name(p.stage) + ": learning_rate must be positive");
        if (p.tau_init <= 0.0 || p.tau_decay <= 0.0) throw ConfigError(std::string("stage ") + stage_name(p.stage) + ": tau must be positive");
        if (p.lambda < 0.0) throw ConfigError(std::string("stage ") + stage_name(p.stage) + ": lambda must be non-negative");
        if (p.rate_mode == RateMode::fixed && p.fixed_k.size() != model.enc.l_v) {
            throw ConfigError(std::string("stage ") + stage_name(p.stage) + ": fixed_k needs " +
                              std::to_string(model.enc.l_v) + " counts");
        }
    }
    if (plans[1].rate_mode == RateMode::adaptive) throw ConfigError("stage s2 cannot use adaptive allocation");
}

ExperimentConfig parse_config(std::istream& in, const std::string& source)
{
    std::map<std::string, const Entry*> index;
    std::map<std::string, bool> sections;
    for (const auto& e : entries()) {
        index[e.section + "." + e.key] = &e;
        sections[e.section] = true;
    }

    ExperimentConfig cfg;
    std::string line, section;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!sections.contains(section)) fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        if (section.empty()) fail("key outside any section");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = index.find(section + "." + key);
        if (it == index.end()) fail("unknown key '" + key + "' in [" + section + "]");
        try {
            it->second->set(cfg, value);
        } catch (const std::exception& e) {
            fail(key + ": " + e.what());
        }
    }
    cfg.model.jsc.l_v = cfg.model.enc.l_v;
    cfg.model.jsc.d = cfg.model.enc.d;
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    return parse_config(in, path);
}

std::string to_text(const ExperimentConfig& cfg)
{
    std::ostringstream os;
    std::string section;
    for (const auto& e : entries()) {
        if (e.section != section) {
            if (!section.empty()) os << '\n';
            section = e.section;
            os << '[' << section << "]\n";
        }
        os << e.key << " = " << e.get(cfg) << '\n';
    }
    return os.str();
}

}  // namespace vqasc
