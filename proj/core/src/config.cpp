#include "silora/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace silora {

using ordered_json = nlohmann::ordered_json;

ExperimentConfig default_experiment_config() {
    return ExperimentConfig{};
}

namespace {

void reject_unknown_keys(const ordered_json& section, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : section.items()) {
        (void)value;
        check(known.count(key) != 0, "config: unknown key '" + key + "' in section '" + where + "'");
    }
}

template <typename T>
void read_if(const ordered_json& section, const char* key, T& out) {
    if (section.contains(key)) {
        out = section.at(key).get<T>();
    }
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw Error(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown_keys(j, {"train", "model", "task"}, "<root>");

    ExperimentConfig cfg;
    if (j.contains("train")) {
        const auto& t = j.at("train");
        reject_unknown_keys(t,
                            {"eta", "phi", "xi", "rank", "alpha", "scaling_mode", "batch_size",
                             "epochs_nu", "epochs_mu", "seed", "strategy", "optimizer_mode"},
                            "train");
        read_if(t, "eta", cfg.train.eta);
        read_if(t, "phi", cfg.train.phi);
        read_if(t, "xi", cfg.train.xi);
        read_if(t, "rank", cfg.train.rank);
        read_if(t, "alpha", cfg.train.alpha);
        if (t.contains("scaling_mode")) {
            cfg.train.scaling_mode = scaling_mode_from_string(t.at("scaling_mode").get<std::string>());
        }
        read_if(t, "batch_size", cfg.train.batch_size);
        read_if(t, "epochs_nu", cfg.train.epochs_nu);
        read_if(t, "epochs_mu", cfg.train.epochs_mu);
        read_if(t, "seed", cfg.train.seed);
        if (t.contains("strategy")) {
            cfg.train.strategy = strategy_from_string(t.at("strategy").get<std::string>());
        }
        if (t.contains("optimizer_mode")) {
            cfg.train.optimizer_mode =
                optimizer_mode_from_string(t.at("optimizer_mode").get<std::string>());
        }
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown_keys(m, {"d_model", "n_blocks", "d_ff", "context_len"}, "model");
        read_if(m, "d_model", cfg.model.d_model);
        read_if(m, "n_blocks", cfg.model.n_blocks);
        read_if(m, "d_ff", cfg.model.d_ff);
        read_if(m, "context_len", cfg.model.context_len);
    }
    if (j.contains("task")) {
        const auto& t = j.at("task");
        reject_unknown_keys(
            t, {"generator", "seed", "nu_train", "nu_eval", "mu_train", "mu_eval", "overlap"},
            "task");
        read_if(t, "generator", cfg.task.generator);
        read_if(t, "seed", cfg.task.seed);
        read_if(t, "nu_train", cfg.task.nu_train);
        read_if(t, "nu_eval", cfg.task.nu_eval);
        read_if(t, "mu_train", cfg.task.mu_train);
        read_if(t, "mu_eval", cfg.task.mu_eval);
        read_if(t, "overlap", cfg.task.overlap);
    }
    validate(cfg.train);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_experiment_config(text);
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
    ordered_json j;
    ordered_json train;
    train["eta"] = cfg.train.eta;
    train["phi"] = cfg.train.phi;
    train["xi"] = cfg.train.xi;
    train["rank"] = cfg.train.rank;
    train["alpha"] = cfg.train.alpha;
    train["scaling_mode"] = to_string(cfg.train.scaling_mode);
    train["batch_size"] = cfg.train.batch_size;
    train["epochs_nu"] = cfg.train.epochs_nu;
    train["epochs_mu"] = cfg.train.epochs_mu;
    train["seed"] = cfg.train.seed;
    train["strategy"] = to_string(cfg.train.strategy);
    train["optimizer_mode"] = to_string(cfg.train.optimizer_mode);
    j["train"] = train;

    ordered_json model;
    model["d_model"] = cfg.model.d_model;
    model["n_blocks"] = cfg.model.n_blocks;
    model["d_ff"] = cfg.model.d_ff;
    model["context_len"] = cfg.model.context_len;
    j["model"] = model;

    ordered_json task;
    task["generator"] = cfg.task.generator;
    task["seed"] = cfg.task.seed;
    task["nu_train"] = cfg.task.nu_train;
    task["nu_eval"] = cfg.task.nu_eval;
    task["mu_train"] = cfg.task.mu_train;
    task["mu_eval"] = cfg.task.mu_eval;
    task["overlap"] = cfg.task.overlap;
    j["task"] = task;

    return j.dump(2) + "\n";
}

} // namespace silora
