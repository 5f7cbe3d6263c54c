#include "silora/report.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace silora {

using ordered_json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string curve_header() {
    return "step,phase,task_loss,reg_loss,weighted_total\n";
}

std::string curve_row(const StepRow& row) {
    return std::to_string(row.step) + "," + row.phase + "," + format_double(row.task_loss) + "," +
           format_double(row.reg_loss) + "," + format_double(row.weighted_total) + "\n";
}

std::string heatmap_header() {
    return "block,matrix_name,l2_norm,log10_l2_norm\n";
}

std::string heatmap_csv(const std::vector<std::pair<std::string, double>>& layer_norms) {
    std::string out = heatmap_header();
    for (const auto& [layer_id, norm] : layer_norms) {
        const auto dot = layer_id.find('.');
        check(dot != std::string::npos && layer_id.rfind("block", 0) == 0,
              "heatmap: unrecognized layer id '" + layer_id + "'");
        const std::string block = layer_id.substr(5, dot - 5);
        const std::string matrix_name = layer_id.substr(dot + 1);
        out += block + "," + matrix_name + "," + format_double(norm) + "," +
               format_double(std::log10(norm)) + "\n";
    }
    return out;
}

namespace {

ordered_json metrics_json(const Metrics& m) {
    ordered_json j;
    j["ce"] = m.ce_loss;
    j["ppl"] = m.perplexity;
    j["acc"] = m.accuracy;
    return j;
}

} // namespace

std::string summary_json(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                         const TaskSpec& task_spec, const RunReport& report) {
    ordered_json j;

    ordered_json train;
    train["eta"] = train_cfg.eta;
    train["phi"] = train_cfg.phi;
    train["xi"] = train_cfg.xi;
    train["rank"] = train_cfg.rank;
    train["alpha"] = train_cfg.alpha;
    train["scaling_mode"] = to_string(train_cfg.scaling_mode);
    train["batch_size"] = train_cfg.batch_size;
    train["epochs_nu"] = train_cfg.epochs_nu;
    train["epochs_mu"] = train_cfg.epochs_mu;
    train["seed"] = train_cfg.seed;
    train["strategy"] = to_string(train_cfg.strategy);
    train["optimizer_mode"] = to_string(train_cfg.optimizer_mode);
    j["train"] = train;

    ordered_json model;
    model["d_model"] = model_cfg.d_model;
    model["n_blocks"] = model_cfg.n_blocks;
    model["d_ff"] = model_cfg.d_ff;
    model["context_len"] = model_cfg.context_len;
    j["model"] = model;

    ordered_json task;
    task["generator"] = task_spec.generator;
    task["seed"] = task_spec.seed;
    task["nu_train"] = task_spec.nu_train;
    task["nu_eval"] = task_spec.nu_eval;
    task["mu_train"] = task_spec.mu_train;
    task["mu_eval"] = task_spec.mu_eval;
    task["overlap"] = task_spec.overlap;
    j["task"] = task;

    ordered_json evals = ordered_json::array();
    for (const EvalRow& row : report.evals) {
        ordered_json e;
        e["phase"] = row.phase;
        e["epoch"] = row.epoch;
        e["split"] = row.split;
        e["metrics"] = metrics_json(row.metrics);
        evals.push_back(e);
    }
    j["evals"] = evals;

    ordered_json final_section;
    final_section["nu_ce_before_mu"] = report.summary.nu_ce_before_mu;
    final_section["nu_ce_after_mu"] = report.summary.nu_ce_after_mu;
    final_section["forgetting"] = report.summary.forgetting;
    final_section["mu_accuracy"] = report.summary.mu_accuracy;
    ordered_json norms;
    for (const auto& [layer_id, norm] : report.summary.layer_norms) {
        norms[layer_id] = norm;
    }
    final_section["layer_norms"] = norms;
    ordered_json weights;
    for (const auto& w : report.summary.layer_softmax) {
        weights[w.layer_id] = w.weight;
    }
    final_section["layer_weights"] = weights;
    final_section["importance_bytes"] = report.summary.importance_bytes;
    j["final"] = final_section;

    return j.dump(2) + "\n";
}

} // namespace silora
