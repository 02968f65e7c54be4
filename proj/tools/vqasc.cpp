// vqasc: dataset generation, training, evaluation sweeps, allocation
// reports and the invariant self-test.
//
// Exit codes: 0 success, 1 usage or input error, 2 invariant failure,
// 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vqasc/config.hpp"
#include "vqasc/selftest.hpp"
#include "vqasc/training.hpp"

namespace fs = std::filesystem;
using namespace vqasc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitInvariant = 2;
constexpr int kExitIo = 3;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "run";
    bool force = false;
};

ExperimentConfig resolve_config(const Globals& g)
{
    ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    cfg.train.seed = cfg.seed;
    return cfg;
}

void prepare_out(const Globals& g, bool must_be_empty)
{
    const fs::path out(g.out);
    if (must_be_empty && fs::exists(out) && !fs::is_empty(out) && !g.force) {
        throw InputError("output directory " + out.string() + " is not empty (use --force)");
    }
    fs::create_directories(out);
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("write failed for " + path.string());
}

void echo_config(const Globals& g, const ExperimentConfig& cfg)
{
    write_file(fs::path(g.out) / "config.resolved.ini", to_text(cfg));
}

std::vector<double> parse_snrs(const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("--snrs: '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw InputError("--snrs: no values");
    return out;
}

std::vector<ChannelKind> parse_channels(const std::string& s)
{
    std::vector<ChannelKind> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_channel(item));
    if (out.empty()) throw InputError("--channel: no values");
    return out;
}

int cmd_gen_data(const Globals& g)
{
    const auto cfg = resolve_config(g);
    prepare_out(g, true);
    const auto ds = make_dataset(cfg.seed, cfg.data, cfg.model.enc);
    std::ostringstream os;
    write_manifest(os, ds);
    write_file(fs::path(g.out) / "manifest.csv", os.str());
    echo_config(g, cfg);
    std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test tasks to "
              << (fs::path(g.out) / "manifest.csv").string() << '\n';
    return 0;
}

int cmd_train(const Globals& g, bool paper_schedule, bool resume, const std::string& init_ckpt)
{
    auto cfg = resolve_config(g);
    if (paper_schedule) cfg.use_paper_schedule();
    prepare_out(g, !resume);
    echo_config(g, cfg);
    const auto ds = make_dataset(cfg.seed, cfg.data, cfg.model.enc);
    Model model = Model::create(cfg.model, cfg.seed);
    if (!init_ckpt.empty()) model.load(load_checkpoint(init_ckpt));

    RunOptions run;
    run.out_dir = g.out;
    run.resume = resume;
    run.progress = [](const EpochMetrics& m) {
        std::fprintf(stderr, "%s epoch %zu  loss %.4f  task %.4f  acc %.3f  mean_k %.1f\n", stage_name(m.stage),
                     m.epoch, m.loss_total, m.loss_task, m.accuracy, m.mean_k);
    };
    run_training(model, ds, cfg.selected_plans(), cfg.train, run);
    std::cout << "checkpoint: " << (fs::path(g.out) / "model.ckpt").string() << '\n';
    return 0;
}

EvalOptions eval_options(const ExperimentConfig& cfg, const Checkpoint& ckpt, std::vector<double> snrs,
                         std::optional<double> sigma_h, std::size_t draws, std::size_t tasks)
{
    EvalOptions opt = eval_options_from(ckpt);
    opt.snrs = std::move(snrs);
    opt.draws = draws ? draws : cfg.eval.draws;
    opt.max_tasks = tasks ? tasks : cfg.eval.max_tasks;
    opt.selection = cfg.eval.selection;
    if (sigma_h) opt.channel.sigma_h = *sigma_h;
    return opt;
}

int cmd_eval(const Globals& g, const std::string& ckpt_path, const std::string& snrs, const std::string& channels,
             std::optional<double> sigma_h, std::size_t draws, std::size_t tasks)
{
    const auto cfg = resolve_config(g);
    auto snr_list = snrs.empty() ? cfg.eval.snrs : parse_snrs(snrs);
    const auto requested = channels.empty() ? std::vector<ChannelKind>{} : parse_channels(channels);
    prepare_out(g, false);
    const auto path = ckpt_path.empty() ? (fs::path(g.out) / "model.ckpt").string() : ckpt_path;
    const auto ckpt = load_checkpoint(path);
    const auto model = Model::from_checkpoint(ckpt);
    const auto ds = make_dataset(cfg.seed, cfg.data, model.config().enc);

    auto opt = eval_options(cfg, ckpt, std::move(snr_list), sigma_h, draws, tasks);
    const auto kinds = requested.empty() ? std::vector<ChannelKind>{opt.channel.kind} : requested;
    std::vector<SweepRow> rows;
    for (auto kind : kinds) {
        opt.channel.kind = kind;
        const auto part = evaluate_sweep(model, ds, opt, derive_seed(cfg.seed, "cmd-eval"));
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::ostringstream os;
    write_sweep_csv(os, rows);
    write_file(fs::path(g.out) / "eval.csv", os.str());
    std::cout << os.str();
    return 0;
}

int cmd_report_alloc(const Globals& g, const std::string& ckpt_path, const std::string& snrs, std::size_t tasks)
{
    const auto cfg = resolve_config(g);
    auto snr_list = snrs.empty() ? cfg.eval.snrs : parse_snrs(snrs);
    prepare_out(g, false);
    const auto path = ckpt_path.empty() ? (fs::path(g.out) / "model.ckpt").string() : ckpt_path;
    const auto ckpt = load_checkpoint(path);
    const auto model = Model::from_checkpoint(ckpt);
    const auto ds = make_dataset(cfg.seed, cfg.data, model.config().enc);

    auto opt = eval_options(cfg, ckpt, std::move(snr_list), std::nullopt, 1, tasks);
    if (opt.rate_mode != RateMode::adaptive) {
        std::cerr << "note: checkpoint uses a " << (opt.rate_mode == RateMode::fixed ? "fixed" : "full")
                  << " allocation; the report shows that allocation\n";
    }
    const auto reports = report_allocation(model, ds, opt, derive_seed(cfg.seed, "cmd-report-alloc"));
    std::ostringstream os;
    write_allocation_csv(os, reports);
    write_file(fs::path(g.out) / "allocation.csv", os.str());
    for (const auto& r : reports) {
        std::printf("snr %6.1f dB  mean sum k %8.2f  tokens per rate:", r.snr_db, r.mean_sum_k);
        for (std::size_t j = 0; j < r.rates.size(); ++j) std::printf(" k=%zu:%zu", r.rates[j], r.histogram[j]);
        std::printf("\n");
    }
    return 0;
}

int cmd_selftest(const Globals& g)
{
    const auto results = run_selftest(g.seed.value_or(1));
    return report_selftest(std::cout, results) ? 0 : kExitInvariant;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Task-oriented video semantic communication simulator"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--config", g.config_path, "Experiment configuration file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed_value, "Root seed (overrides the config)");
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--force", g.force, "Allow writing into a non-empty output directory");

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset manifest");

    bool paper = false, resume = false;
    std::string init_ckpt;
    auto* train = app.add_subcommand("train", "Run the staged training procedure");
    train->add_flag("--paper-schedule", paper, "Use the original epoch counts and learning rates");
    train->add_flag("--resume", resume, "Skip stages whose checkpoint already exists in --out");
    train->add_option("--init", init_ckpt, "Start from this checkpoint")->check(CLI::ExistingFile);

    std::string ckpt, snrs, channels;
    std::optional<double> sigma_h;
    std::size_t draws = 0, tasks = 0;
    auto* eval = app.add_subcommand("eval", "Accuracy/bandwidth sweep over SNRs");
    eval->add_option("--checkpoint", ckpt, "Checkpoint (default: <out>/model.ckpt)");
    eval->add_option("--snrs", snrs, "Comma-separated SNRs in dB");
    eval->add_option("--channel", channels, "awgn, rayleigh, or both comma-separated");
    eval->add_option("--sigma-h", sigma_h, "Rayleigh scale of |h|");
    eval->add_option("--draws", draws, "Noise draws per task");
    eval->add_option("--tasks", tasks, "Limit the number of test tasks");

    auto* alloc = app.add_subcommand("report-alloc", "Per-SNR histograms of retained channels");
    alloc->add_option("--checkpoint", ckpt, "Checkpoint (default: <out>/model.ckpt)");
    alloc->add_option("--snrs", snrs, "Comma-separated SNRs in dB");
    alloc->add_option("--tasks", tasks, "Limit the number of test tasks");

    auto* self = app.add_subcommand("selftest", "Run the invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (*gen) return cmd_gen_data(g);
        if (*train) return cmd_train(g, paper, resume, init_ckpt);
        if (*eval) return cmd_eval(g, ckpt, snrs, channels, sigma_h, draws, tasks);
        if (*alloc) return cmd_report_alloc(g, ckpt, snrs, tasks);
        if (*self) return cmd_selftest(g);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInvariant;
    }
    return kExitUsage;
}
