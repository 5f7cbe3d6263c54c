#pragma once

#include <string>

#include "silora/model.hpp"
#include "silora/tasks.hpp"
#include "silora/trainer.hpp"

namespace silora {

// Everything one run needs, mirroring the config file layout.
struct ExperimentConfig {
    TrainConfig train;
    ModelConfig model;
    TaskSpec task;
};

ExperimentConfig default_experiment_config();

// Human-editable JSON with three sections ("train", "model", "task"); any
// omitted key keeps its default. Unknown keys are rejected.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_json(const ExperimentConfig& cfg);

} // namespace silora
