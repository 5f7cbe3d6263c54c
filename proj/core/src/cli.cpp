#include "silora/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "silora/checkpoint.hpp"
#include "silora/config.hpp"
#include "silora/report.hpp"

namespace silora {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// Tracks files created by this invocation so a failed run leaves no partial
// outputs behind.
class OutputGuard {
public:
    void created(const fs::path& path) {
        std::error_code ec;
        if (!fs::exists(path, ec)) {
            paths_.push_back(path); // never delete files we did not create
        }
    }

    void commit() { paths_.clear(); }

    ~OutputGuard() {
        for (const fs::path& p : paths_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }

private:
    std::vector<fs::path> paths_;
};

fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_absolute()) {
        return p;
    }
    if (const char* root = std::getenv("SILORA_OUT_ROOT"); root != nullptr && *root != '\0') {
        return fs::path(root) / p;
    }
    return p;
}

void write_text_file(OutputGuard& guard, const fs::path& path, const std::string& text) {
    guard.created(path);
    std::ofstream out(path, std::ios::trunc);
    check(out.good(), "cannot open " + path.string());
    out << text;
    out.flush();
    check(out.good(), "write failed for " + path.string());
}

struct TrainOptions {
    std::string config_path;
    std::string out = "";
    std::string data_dir;
    std::string resume_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string strategy;
    double phi = -1.0;
    bool phi_set = false;
    std::string optimizer;
    std::size_t save_every = 0;
};

ExperimentConfig config_from_options(const TrainOptions& opts) {
    ExperimentConfig cfg = opts.config_path.empty() ? default_experiment_config()
                                                    : load_experiment_config(opts.config_path);
    if (opts.seed_set) {
        cfg.train.seed = opts.seed;
    }
    if (!opts.strategy.empty()) {
        cfg.train.strategy = strategy_from_string(opts.strategy);
    }
    if (opts.phi_set) {
        check(opts.phi >= 0.0, "train: phi must be nonnegative");
        cfg.train.phi = opts.phi;
    }
    if (!opts.optimizer.empty()) {
        cfg.train.optimizer_mode = optimizer_mode_from_string(opts.optimizer);
    }
    return cfg;
}

// Shared by train/compare/sweep-phi: run one experiment, streaming curve rows
// into `curve_path` and checkpoints into `out_dir`.
RunReport run_to_files(TrainState& state, const TaskPair& tasks, OutputGuard& guard,
                       const fs::path& out_dir, std::size_t save_every) {
    const fs::path curve_path = out_dir / "curve.csv";
    guard.created(curve_path);
    std::ofstream curve(curve_path, std::ios::trunc);
    check(curve.good(), "cannot open " + curve_path.string());
    curve << curve_header();
    curve.flush();

    RunHooks hooks;
    hooks.on_step = [&](const StepRow& row) {
        curve << curve_row(row);
        curve.flush(); // rows stay parseable after interruption at any boundary
    };
    hooks.checkpoint_every = save_every;
    if (save_every > 0) {
        hooks.on_checkpoint = [&](const TrainState& snapshot) {
            const fs::path path =
                out_dir / ("ckpt_step_" + std::to_string(snapshot.global_step) + ".bin");
            guard.created(path);
            save_checkpoint(path.string(), snapshot);
        };
    }

    RunReport report = run_experiment(state, tasks, hooks);
    check(curve.good(), "write failed for " + curve_path.string());
    return report;
}

TaskPair tasks_for(const TaskSpec& spec, const std::string& data_dir) {
    if (!data_dir.empty()) {
        return load_task_pair(data_dir);
    }
    return gen_task_pair(spec);
}

int cmd_train(const TrainOptions& opts) {
    OutputGuard guard;

    TrainState state;
    TaskPair tasks;
    if (!opts.resume_path.empty()) {
        check(opts.config_path.empty() && !opts.seed_set && !opts.phi_set &&
                  opts.strategy.empty() && opts.optimizer.empty(),
              "train: --resume restores its own configuration, drop --config and the "
              "hyperparameter overrides");
        state = load_checkpoint(opts.resume_path);
        tasks = tasks_for(state.task_spec, opts.data_dir);
    } else {
        ExperimentConfig cfg = config_from_options(opts);
        tasks = tasks_for(cfg.task, opts.data_dir);
        state = make_initial_state(cfg.model, cfg.train, tasks.spec, tasks.vocab.size());
    }

    const std::string default_out = std::string("runs/train_") + to_string(state.train_cfg.strategy) +
                                    "_seed" + std::to_string(state.train_cfg.seed);
    const fs::path out_dir = resolve_out(opts.out.empty() ? default_out : opts.out);
    fs::create_directories(out_dir);

    const RunReport report = run_to_files(state, tasks, guard, out_dir, opts.save_every);

    write_text_file(guard, out_dir / "summary.json",
                    summary_json(state.train_cfg, state.model_cfg, state.task_spec, report));
    const fs::path ckpt_path = out_dir / "checkpoint.bin";
    guard.created(ckpt_path);
    save_checkpoint(ckpt_path.string(), state);

    guard.commit();
    std::cout << "run complete: forgetting=" << format_double(report.summary.forgetting)
              << " mu_accuracy=" << format_double(report.summary.mu_accuracy) << "\n"
              << "outputs in " << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& split,
             const std::string& data_dir) {
    TrainState state = load_checkpoint(checkpoint_path);
    const TaskPair tasks = tasks_for(state.task_spec, data_dir);

    const auto pick = [&](const std::string& name) -> const Dataset& {
        if (name == "nu_train") return tasks.nu_train;
        if (name == "nu_eval") return tasks.nu_eval;
        if (name == "mu_train") return tasks.mu_train;
        if (name == "mu_eval") return tasks.mu_eval;
        throw Error("eval: unknown split '" + name + "'");
    };

    ordered_json out;
    const std::vector<std::string> splits =
        split.empty() ? std::vector<std::string>{"nu_eval", "mu_eval"}
                      : std::vector<std::string>{split};
    for (const std::string& name : splits) {
        const Metrics m = evaluate(state.model, pick(name));
        ordered_json row;
        row["ce"] = m.ce_loss;
        row["ppl"] = m.perplexity;
        row["acc"] = m.accuracy;
        out[name] = row;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_compare(const TrainOptions& opts) {
    OutputGuard guard;
    ExperimentConfig cfg = config_from_options(opts);
    const TaskPair tasks = tasks_for(cfg.task, opts.data_dir);

    const fs::path out_dir =
        resolve_out(opts.out.empty() ? "runs/compare_seed" + std::to_string(cfg.train.seed)
                                     : opts.out);
    fs::create_directories(out_dir);

    std::string table = "strategy,ppl_nu,acc_mu,forgetting,nu_ce_before,nu_ce_after\n";
    double ours_seconds = 0.0, ewc_seconds = 0.0;
    std::uint64_t ours_bytes = 0, ewc_bytes = 0;

    for (const Strategy strategy : {Strategy::Ours, Strategy::LoraMu, Strategy::LoraNuMu,
                                    Strategy::RsLora, Strategy::EwcLora}) {
        TrainConfig train_cfg = cfg.train;
        train_cfg.strategy = strategy;
        TrainState state =
            make_initial_state(cfg.model, train_cfg, tasks.spec, tasks.vocab.size());
        const RunReport report = run_experiment(state, tasks);

        const double ppl_nu = std::exp(report.summary.nu_ce_after_mu);
        table += std::string(to_string(strategy)) + "," + format_double(ppl_nu) + "," +
                 format_double(report.summary.mu_accuracy) + "," +
                 format_double(report.summary.forgetting) + "," +
                 format_double(report.summary.nu_ce_before_mu) + "," +
                 format_double(report.summary.nu_ce_after_mu) + "\n";

        if (strategy == Strategy::Ours) {
            ours_seconds = state.importance_seconds;
            ours_bytes = report.summary.importance_bytes;
        } else if (strategy == Strategy::EwcLora) {
            ewc_seconds = state.importance_seconds;
            ewc_bytes = report.summary.importance_bytes;
        }
    }

    write_text_file(guard, out_dir / "comparison.csv", table);

    // desk-scale stand-in for the importance cost comparison; wall times vary
    // run to run, so this lives outside the deterministic report files
    ordered_json timing;
    timing["ours_importance_seconds"] = ours_seconds;
    timing["ewc_importance_seconds"] = ewc_seconds;
    timing["speedup_ours_over_ewc"] = ours_seconds > 0.0 ? ewc_seconds / ours_seconds : 0.0;
    timing["ours_importance_bytes"] = ours_bytes;
    timing["ewc_importance_bytes"] = ewc_bytes;
    timing["storage_ratio_ours_over_ewc"] =
        ewc_bytes > 0 ? static_cast<double>(ours_bytes) / static_cast<double>(ewc_bytes) : 0.0;
    write_text_file(guard, out_dir / "timing.json", timing.dump(2) + "\n");

    guard.commit();
    std::cout << table << "outputs in " << out_dir.string() << "\n";
    return 0;
}

int cmd_sweep_phi(const TrainOptions& opts, std::vector<double> grid) {
    OutputGuard guard;
    ExperimentConfig cfg = config_from_options(opts);
    const TaskPair tasks = tasks_for(cfg.task, opts.data_dir);

    if (grid.empty()) {
        grid = {0.0, std::exp(-4.0), std::exp(-3.0), std::exp(-2.0), std::exp(-1.0)};
    }

    const fs::path out_dir =
        resolve_out(opts.out.empty() ? "runs/sweep_phi_seed" + std::to_string(cfg.train.seed)
                                     : opts.out);
    fs::create_directories(out_dir);

    std::string table = "phi,nu_ce_before,nu_ce_after,degradation,mu_accuracy\n";
    for (const double phi : grid) {
        check(phi >= 0.0, "sweep-phi: grid values must be nonnegative");
        TrainConfig train_cfg = cfg.train;
        train_cfg.strategy = Strategy::Ours;
        train_cfg.phi = phi;
        TrainState state =
            make_initial_state(cfg.model, train_cfg, tasks.spec, tasks.vocab.size());
        const RunReport report = run_experiment(state, tasks);
        table += format_double(phi) + "," + format_double(report.summary.nu_ce_before_mu) + "," +
                 format_double(report.summary.nu_ce_after_mu) + "," +
                 format_double(report.summary.forgetting) + "," +
                 format_double(report.summary.mu_accuracy) + "\n";
    }

    write_text_file(guard, out_dir / "sweep.csv", table);
    guard.commit();
    std::cout << table << "outputs in " << out_dir.string() << "\n";
    return 0;
}

int cmd_heatmap(const std::string& checkpoint_path, const std::string& out) {
    OutputGuard guard;
    TrainState state = load_checkpoint(checkpoint_path);
    check(state.importance.consolidated(),
          "heatmap: checkpoint has no consolidated importance; train the general task first");

    const std::string csv = heatmap_csv(state.importance.layer_l2_norms());
    if (out.empty()) {
        std::cout << csv;
    } else {
        const fs::path path = resolve_out(out);
        if (path.has_parent_path()) {
            fs::create_directories(path.parent_path());
        }
        write_text_file(guard, path, csv);
        guard.commit();
        std::cout << "wrote " << path.string() << "\n";
    }
    return 0;
}

int cmd_gen_data(const TaskSpec& spec, const std::string& out) {
    OutputGuard guard;
    const TaskPair pair = gen_task_pair(spec);
    const fs::path out_dir = resolve_out(out);
    for (const char* name : {"vocab.json", "spec.json", "nu_train.jsonl", "nu_eval.jsonl",
                             "mu_train.jsonl", "mu_eval.jsonl"}) {
        guard.created(out_dir / name);
    }
    save_task_pair(pair, out_dir.string());
    guard.commit();
    std::cout << "wrote task pair (" << pair.vocab.size() << " tokens, " << pair.nu_train.size()
              << "+" << pair.nu_eval.size() << " nu, " << pair.mu_train.size() << "+"
              << pair.mu_eval.size() << " mu) to " << out_dir.string() << "\n";
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"continual LoRA fine-tuning with importance-anchored regularization"};
    app.require_subcommand(1);

    TrainOptions train_opts;
    CLI::App* train = app.add_subcommand("train", "run one two-phase experiment");
    train->add_option("--config", train_opts.config_path, "experiment config JSON");
    train->add_option("--out", train_opts.out, "output directory");
    train->add_option("--data", train_opts.data_dir, "pre-generated task pair directory");
    train->add_option("--resume", train_opts.resume_path, "checkpoint to resume from");
    train->add_option("--seed", train_opts.seed, "override run seed")
        ->each([&](const std::string&) { train_opts.seed_set = true; });
    train->add_option("--strategy", train_opts.strategy,
                      "ours | lora_mu | lora_nu_mu | rslora | ewc_lora");
    train->add_option("--phi", train_opts.phi, "override regularization coefficient")
        ->each([&](const std::string&) { train_opts.phi_set = true; });
    train->add_option("--optimizer", train_opts.optimizer, "sgd_exact | adaptive");
    train->add_option("--save-every", train_opts.save_every,
                      "write a checkpoint every N optimizer steps");

    std::string eval_checkpoint, eval_split, eval_data;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--split", eval_split, "nu_train | nu_eval | mu_train | mu_eval");
    eval_cmd->add_option("--data", eval_data, "pre-generated task pair directory");

    TrainOptions compare_opts;
    CLI::App* compare = app.add_subcommand("compare", "run all five strategies under one seed");
    compare->add_option("--config", compare_opts.config_path, "experiment config JSON");
    compare->add_option("--out", compare_opts.out, "output directory");
    compare->add_option("--data", compare_opts.data_dir, "pre-generated task pair directory");
    compare->add_option("--seed", compare_opts.seed, "override run seed")
        ->each([&](const std::string&) { compare_opts.seed_set = true; });

    TrainOptions sweep_opts;
    std::vector<double> sweep_grid;
    CLI::App* sweep = app.add_subcommand("sweep-phi", "regularization coefficient sweep");
    sweep->add_option("--config", sweep_opts.config_path, "experiment config JSON");
    sweep->add_option("--out", sweep_opts.out, "output directory");
    sweep->add_option("--data", sweep_opts.data_dir, "pre-generated task pair directory");
    sweep->add_option("--seed", sweep_opts.seed, "override run seed")
        ->each([&](const std::string&) { sweep_opts.seed_set = true; });
    sweep->add_option("--grid", sweep_grid, "phi values (default 0, e^-4, e^-3, e^-2, e^-1)")
        ->delimiter(',');

    std::string heatmap_checkpoint, heatmap_out;
    CLI::App* heatmap = app.add_subcommand("heatmap", "per-layer importance norms after the nu task");
    heatmap->add_option("--checkpoint", heatmap_checkpoint, "checkpoint file")->required();
    heatmap->add_option("--out", heatmap_out, "output CSV (stdout when omitted)");

    TaskSpec gen_spec;
    std::string gen_out = "data";
    CLI::App* gen = app.add_subcommand("gen-data", "materialize a task pair");
    gen->add_option("--generator", gen_spec.generator, "grammar-shift | mc-rules");
    gen->add_option("--seed", gen_spec.seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--nu-train", gen_spec.nu_train, "nu training examples");
    gen->add_option("--nu-eval", gen_spec.nu_eval, "nu eval examples");
    gen->add_option("--mu-train", gen_spec.mu_train, "mu training examples");
    gen->add_option("--mu-eval", gen_spec.mu_eval, "mu eval examples");
    gen->add_option("--overlap", gen_spec.overlap, "mu/nu sentence overlap probability");

    std::vector<const char*> argv;
    argv.push_back("silora");
    for (const std::string& a : args) {
        argv.push_back(a.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (train->parsed()) {
            return cmd_train(train_opts);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_checkpoint, eval_split, eval_data);
        }
        if (compare->parsed()) {
            return cmd_compare(compare_opts);
        }
        if (sweep->parsed()) {
            return cmd_sweep_phi(sweep_opts, sweep_grid);
        }
        if (heatmap->parsed()) {
            return cmd_heatmap(heatmap_checkpoint, heatmap_out);
        }
        if (gen->parsed()) {
            return cmd_gen_data(gen_spec, gen_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}

} // namespace silora
