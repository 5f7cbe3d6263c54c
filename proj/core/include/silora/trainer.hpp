#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "silora/importance.hpp"
#include "silora/model.hpp"
#include "silora/regularizer.hpp"
#include "silora/rng.hpp"
#include "silora/tasks.hpp"

namespace silora {

enum class Strategy : std::uint8_t {
    Ours,     // importance-anchored penalty with softmax layer weights
    LoraMu,   // domain task only
    LoraNuMu, // sequential fine-tuning, no penalty
    RsLora,   // sequential fine-tuning with rank-stabilized scaling
    EwcLora,  // diagonal-Fisher penalty, uniform layer weights
};

enum class OptimizerMode : std::uint8_t {
    SgdExact, // plain SGD; the step identity holds exactly and is spot-checked
    Adaptive, // Adam; importance uses measured weight deltas instead
};

enum class Phase : std::uint8_t { Nu = 0, Mu = 1, Done = 2 };

const char* to_string(Strategy s);
const char* to_string(OptimizerMode m);
const char* to_string(Phase p);
Strategy strategy_from_string(const std::string& s);
OptimizerMode optimizer_mode_from_string(const std::string& s);

double default_phi(); // e^-3

struct TrainConfig {
    double eta = 8e-4;
    double phi = default_phi();
    double xi = 1.0; // damping at the scale of typical desk-run squared excursions
    std::size_t rank = 8;
    double alpha = 32.0;
    ScalingMode scaling_mode = ScalingMode::Standard;
    std::size_t batch_size = 20;
    std::size_t epochs_nu = 5;
    std::size_t epochs_mu = 5;
    std::uint64_t seed = 1;
    Strategy strategy = Strategy::Ours;
    OptimizerMode optimizer_mode = OptimizerMode::Adaptive;

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

// Penalty coefficient actually applied: baselines without a penalty force 0.
double effective_phi(const TrainConfig& cfg);
// rslora is sequential fine-tuning with the rank-stabilized scale.
ScalingMode effective_scaling_mode(const TrainConfig& cfg);

struct Metrics {
    double ce_loss = 0.0;
    double perplexity = 1.0;
    double accuracy = 0.0;
};

// Aggregation split out so the metric definitions are testable in isolation.
struct EvalTallies {
    double ce_sum = 0.0;
    std::size_t tokens = 0;
    std::size_t token_correct = 0;
    std::size_t mc_correct = 0;
    std::size_t mc_total = 0;
};
Metrics finalize_metrics(const EvalTallies& tallies);

Metrics evaluate(const ToyModel& model, const Dataset& data);

struct StepRow {
    std::size_t step = 0; // global, monotone across phases
    std::string phase;    // "nu" | "mu"
    double task_loss = 0.0;
    double reg_loss = 0.0;
    double weighted_total = 0.0;
};

struct EvalRow {
    std::string phase; // "base" | "nu" | "mu"
    std::size_t epoch = 0;
    std::string split; // "nu_eval" | "mu_eval"
    Metrics metrics;
};

struct RunSummary {
    double nu_ce_before_mu = 0.0;
    double nu_ce_after_mu = 0.0;
    double forgetting = 0.0; // nu-eval CE degradation caused by mu tuning
    double mu_accuracy = 0.0;
    std::vector<std::pair<std::string, double>> layer_norms; // ||Omega_l||_2
    LayerWeightVector layer_softmax;
    std::uint64_t importance_bytes = 0; // serialized size of the importance matrices
};

struct RunReport {
    std::vector<StepRow> steps;
    std::vector<EvalRow> evals;
    RunSummary summary;
};

struct PhaseResult {
    std::vector<StepRow> steps;
    std::vector<EvalRow> evals;
};

// Frozen at the mu transition and serialized with checkpoints, so a resumed
// run applies the identical penalty.
struct PenaltyContext {
    bool active = false;
    std::vector<Matrix> importance; // per adapter, canonical order
    std::vector<double> weights;
    std::vector<Matrix> theta_ref;
};

struct AdamState {
    bool active = false;
    std::uint64_t step = 0;
    std::vector<Matrix> m_b, v_b, m_a, v_a; // per adapter
};

// Complete run state; the checkpoint format round-trips this struct.
struct TrainState {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    TaskSpec task_spec;
    ToyModel model;
    ImportanceTracker importance;
    PenaltyContext penalty;
    AdamState adam;
    Rng rng{0};
    Phase phase = Phase::Nu;
    std::size_t epoch = 0;         // within the current phase
    std::size_t step_in_epoch = 0; // next batch index
    std::size_t global_step = 0;
    bool has_nu_before = false;
    double nu_ce_before_mu = 0.0;
    double importance_seconds = 0.0;
};

TrainState make_initial_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const TaskSpec& task_spec, std::size_t vocab_size);

struct RunHooks {
    std::function<void(const StepRow&)> on_step;
    std::function<void(const EvalRow&)> on_eval;
    std::size_t checkpoint_every = 0; // in global steps; 0 disables
    std::function<void(const TrainState&)> on_checkpoint;
};

// Per-batch task loss + gradients with respect to every adapter's factors
// (canonical order). Token-mean over the batch. Exposed for gradient checks.
struct BatchGrads {
    double task_loss = 0.0;
    std::size_t tokens = 0;
    std::vector<Matrix> grad_b;
    std::vector<Matrix> grad_a;
};
BatchGrads task_loss_and_grads(const ToyModel& model, const Dataset& data,
                               const std::vector<std::size_t>& batch);

// Penalty evaluation against the frozen context at the model's current
// effective weights.
RegLossBreakdown penalty_breakdown(const ToyModel& model, const PenaltyContext& penalty,
                                   double phi);

// Diagonal Fisher estimate per adapted layer: mean over sampled examples of
// the squared per-example gradient mapped to effective-weight space.
std::vector<Matrix> ewc_fisher_diag(const ToyModel& model, const Dataset& data,
                                    std::size_t n_samples, std::uint64_t seed);

// nu-phase fine-tuning with online importance recording and consolidation at
// the end. Resumes from state.epoch/state.step_in_epoch.
PhaseResult train_nu(TrainState& state, const TaskPair& tasks, const RunHooks& hooks = {});

// mu-phase fine-tuning with the strategy's penalty applied per step.
PhaseResult train_mu(TrainState& state, const TaskPair& tasks, const RunHooks& hooks = {});

// Drives the remaining phases of `state` to completion and assembles the
// report (remaining rows only, when resuming).
RunReport run_experiment(TrainState& state, const TaskPair& tasks, const RunHooks& hooks = {});

// Fresh run, building state from configs.
RunReport run_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         const TaskPair& tasks, const RunHooks& hooks = {});

} // namespace silora
