#pragma once

#include <string>

#include "silora/trainer.hpp"

namespace silora {

// Lossless, locale-independent double formatting for report files.
std::string format_double(double v);

// curve.csv: one row per optimizer step.
std::string curve_header();
std::string curve_row(const StepRow& row);

// heatmap.csv rows derive from "blockN.q_proj"-style layer ids.
std::string heatmap_header();
std::string heatmap_csv(const std::vector<std::pair<std::string, double>>& layer_norms);

// Nested key-value summary document for one run.
struct ExperimentConfig; // defined in config.hpp
std::string summary_json(const TrainConfig& train_cfg, const ModelConfig& model_cfg,
                         const TaskSpec& task_spec, const RunReport& report);

} // namespace silora
