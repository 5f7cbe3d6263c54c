#include "silora/trainer.hpp"

#include <chrono>
#include <cmath>

namespace silora {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// step-identity spot check cadence: roughly 1% of steps, always step 0
constexpr std::size_t kIdentityCheckStride = 97;
constexpr double kIdentityTolerance = 1e-12;

constexpr std::size_t kFisherSampleCap = 512;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

} // namespace

const char* to_string(Strategy s) {
    switch (s) {
    case Strategy::Ours: return "ours";
    case Strategy::LoraMu: return "lora_mu";
    case Strategy::LoraNuMu: return "lora_nu_mu";
    case Strategy::RsLora: return "rslora";
    case Strategy::EwcLora: return "ewc_lora";
    }
    return "?";
}

const char* to_string(OptimizerMode m) {
    return m == OptimizerMode::SgdExact ? "sgd_exact" : "adaptive";
}

const char* to_string(Phase p) {
    switch (p) {
    case Phase::Nu: return "nu";
    case Phase::Mu: return "mu";
    case Phase::Done: return "done";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "ours") return Strategy::Ours;
    if (s == "lora_mu") return Strategy::LoraMu;
    if (s == "lora_nu_mu") return Strategy::LoraNuMu;
    if (s == "rslora") return Strategy::RsLora;
    if (s == "ewc_lora") return Strategy::EwcLora;
    throw Error("unknown strategy '" + s + "'");
}

OptimizerMode optimizer_mode_from_string(const std::string& s) {
    if (s == "sgd_exact") return OptimizerMode::SgdExact;
    if (s == "adaptive") return OptimizerMode::Adaptive;
    throw Error("unknown optimizer mode '" + s + "'");
}

double default_phi() {
    return std::exp(-3.0);
}

void validate(const TrainConfig& cfg) {
    check(cfg.eta > 0.0, "config: eta must be positive");
    check(cfg.phi >= 0.0, "config: phi must be nonnegative");
    check(cfg.xi > 0.0, "config: xi must be positive");
    check(cfg.rank >= 1, "config: rank must be >= 1");
    check(cfg.alpha > 0.0, "config: alpha must be positive");
    check(cfg.batch_size >= 1, "config: batch_size must be >= 1");
}

double effective_phi(const TrainConfig& cfg) {
    switch (cfg.strategy) {
    case Strategy::LoraMu:
    case Strategy::LoraNuMu:
    case Strategy::RsLora:
        return 0.0;
    case Strategy::Ours:
    case Strategy::EwcLora:
        return cfg.phi;
    }
    return 0.0;
}

ScalingMode effective_scaling_mode(const TrainConfig& cfg) {
    return cfg.strategy == Strategy::RsLora ? ScalingMode::RankStabilized : cfg.scaling_mode;
}

Metrics finalize_metrics(const EvalTallies& t) {
    check(t.tokens >= 1, "metrics: no scored tokens");
    Metrics m;
    m.ce_loss = t.ce_sum / static_cast<double>(t.tokens);
    m.perplexity = std::exp(m.ce_loss);
    if (t.mc_total > 0) {
        m.accuracy = static_cast<double>(t.mc_correct) / static_cast<double>(t.mc_total);
    } else {
        m.accuracy = static_cast<double>(t.token_correct) / static_cast<double>(t.tokens);
    }
    return m;
}

Metrics evaluate(const ToyModel& model, const Dataset& data) {
    check(!data.empty(), "evaluate: empty dataset");
    EvalTallies t;
    for (const Example& ex : data) {
        ExampleGraph eg = forward_example(model, ex);
        t.ce_sum += eg.graph.value_of(eg.loss).at(0, 0);
        t.tokens += eg.scored_tokens;

        const Matrix& logits = eg.graph.value_of(eg.logits);
        for (std::size_t r = 0; r < logits.rows(); ++r) {
            if (ex.targets[r] < 0) {
                continue;
            }
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c) {
                if (logits.at(r, c) > logits.at(r, best)) {
                    best = c;
                }
            }
            if (best == static_cast<std::size_t>(ex.targets[r])) {
                ++t.token_correct;
            }
        }

        if (ex.is_choice()) {
            check(ex.answer_pos >= 0 &&
                      static_cast<std::size_t>(ex.answer_pos) < logits.rows(),
                  "evaluate: answer position outside sequence");
            std::size_t best_slot = 0;
            for (std::size_t slot = 1; slot < ex.choices.size(); ++slot) {
                const auto cur = static_cast<std::size_t>(ex.choices[slot]);
                const auto best = static_cast<std::size_t>(ex.choices[best_slot]);
                if (logits.at(static_cast<std::size_t>(ex.answer_pos), cur) >
                    logits.at(static_cast<std::size_t>(ex.answer_pos), best)) {
                    best_slot = slot;
                }
            }
            ++t.mc_total;
            if (best_slot == static_cast<std::size_t>(ex.correct_index)) {
                ++t.mc_correct;
            }
        }
    }
    return finalize_metrics(t);
}

BatchGrads task_loss_and_grads(const ToyModel& model, const Dataset& data,
                               const std::vector<std::size_t>& batch) {
    check(!batch.empty(), "task_loss_and_grads: empty batch");
    const auto adapters = model.adapters();

    BatchGrads out;
    out.grad_b.reserve(adapters.size());
    out.grad_a.reserve(adapters.size());
    for (const LoraAdapter* a : adapters) {
        out.grad_b.emplace_back(a->B.rows(), a->B.cols());
        out.grad_a.emplace_back(a->A.rows(), a->A.cols());
    }

    double loss_sum = 0.0;
    for (const std::size_t idx : batch) {
        check(idx < data.size(), "task_loss_and_grads: batch index out of range");
        ExampleGraph eg = forward_example(model, data[idx]);
        eg.graph.backward(eg.loss);
        loss_sum += eg.graph.value_of(eg.loss).at(0, 0);
        out.tokens += eg.scored_tokens;
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            axpy(out.grad_b[i], 1.0, eg.graph.grad_of(eg.factor_nodes[i].first));
            axpy(out.grad_a[i], 1.0, eg.graph.grad_of(eg.factor_nodes[i].second));
        }
    }

    const double inv_tokens = 1.0 / static_cast<double>(out.tokens);
    out.task_loss = loss_sum * inv_tokens;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        out.grad_b[i] = scaled(out.grad_b[i], inv_tokens);
        out.grad_a[i] = scaled(out.grad_a[i], inv_tokens);
    }
    return out;
}

RegLossBreakdown penalty_breakdown(const ToyModel& model, const PenaltyContext& penalty,
                                   double phi) {
    check(penalty.active, "penalty_breakdown: penalty context not built");
    const auto adapters = model.adapters();
    check(penalty.importance.size() == adapters.size(),
          "penalty_breakdown: layer count mismatch");

    RegLossBreakdown breakdown;
    breakdown.phi = phi;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
        const Matrix theta = effective_weight(*adapters[i]);
        const double raw = layer_reg_loss(theta, penalty.theta_ref[i], penalty.importance[i]);
        breakdown.layer_ids.push_back(adapters[i]->layer_id);
        breakdown.raw_penalty.push_back(raw);
        breakdown.weight.push_back(penalty.weights[i]);
        breakdown.weighted_total += penalty.weights[i] * raw;
    }
    breakdown.contribution = phi * breakdown.weighted_total;
    return breakdown;
}

std::vector<Matrix> ewc_fisher_diag(const ToyModel& model, const Dataset& data,
                                    std::size_t n_samples, std::uint64_t seed) {
    check(!data.empty(), "ewc_fisher_diag: empty data");
    check(n_samples >= 1, "ewc_fisher_diag: n_samples must be >= 1");

    const auto adapters = model.adapters();
    std::vector<Matrix> fisher;
    for (const LoraAdapter* a : adapters) {
        fisher.emplace_back(a->d_out(), a->d_in());
    }

    Rng rng(seed);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const auto idx = static_cast<std::size_t>(rng.below(data.size()));
        ExampleGraph eg = forward_example(model, data[idx]);
        eg.graph.backward(eg.loss);
        const double inv_tokens = 1.0 / static_cast<double>(eg.scored_tokens);
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            const Matrix gb = scaled(eg.graph.grad_of(eg.factor_nodes[i].first), inv_tokens);
            const Matrix ga = scaled(eg.graph.grad_of(eg.factor_nodes[i].second), inv_tokens);
            // per-sample gradient in effective-weight space, eta term dropped
            Matrix g = matmul(gb, adapters[i]->A);
            matmul_accumulate(g, adapters[i]->B, ga);
            g = scaled(g, adapters[i]->scaling());
            for (std::size_t j = 0; j < g.size(); ++j) {
                fisher[i].data()[j] += g.data()[j] * g.data()[j];
            }
        }
    }
    for (Matrix& f : fisher) {
        f = scaled(f, 1.0 / static_cast<double>(n_samples));
    }
    return fisher;
}

TrainState make_initial_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const TaskSpec& task_spec, std::size_t vocab_size) {
    validate(train_cfg);
    TrainState state;
    state.model_cfg = model_cfg;
    state.train_cfg = train_cfg;
    state.task_spec = task_spec;
    state.model = build_model(model_cfg, vocab_size, train_cfg.rank, train_cfg.alpha,
                              effective_scaling_mode(train_cfg), Rng::derive(train_cfg.seed, "model"));
    state.rng.reseed(Rng::derive(train_cfg.seed, "trainer"));

    for (const LoraAdapter* a : state.model.adapters()) {
        state.importance.register_layer(a->layer_id, a->d_out(), a->d_in());
    }
    if (train_cfg.strategy != Strategy::LoraMu) {
        state.importance.begin_task(state.model.effective_weights());
        state.phase = Phase::Nu;
    } else {
        state.phase = Phase::Mu; // no general phase at all
    }

    if (train_cfg.optimizer_mode == OptimizerMode::Adaptive) {
        state.adam.active = true;
        for (const LoraAdapter* a : state.model.adapters()) {
            state.adam.m_b.emplace_back(a->B.rows(), a->B.cols());
            state.adam.v_b.emplace_back(a->B.rows(), a->B.cols());
            state.adam.m_a.emplace_back(a->A.rows(), a->A.cols());
            state.adam.v_a.emplace_back(a->A.rows(), a->A.cols());
        }
    }
    return state;
}

namespace {

void adam_update(Matrix& param, Matrix& m, Matrix& v, const Matrix& g, double eta,
                 std::uint64_t t) {
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = kAdamBeta1 * m.data()[i] + (1.0 - kAdamBeta1) * gi;
        v.data()[i] = kAdamBeta2 * v.data()[i] + (1.0 - kAdamBeta2) * gi * gi;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        param.data()[i] -= eta * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

void reset_adam(AdamState& adam) {
    if (!adam.active) {
        return;
    }
    adam.step = 0;
    for (auto* bank : {&adam.m_b, &adam.v_b, &adam.m_a, &adam.v_a}) {
        for (Matrix& m : *bank) {
            m.fill(0.0);
        }
    }
}

void check_step_identity(const Matrix& delta, const Matrix& virtual_grad, double eta,
                         const std::string& layer_id, std::size_t step) {
    Matrix residual = delta;
    axpy(residual, eta, virtual_grad);
    const double dn = delta.frobenius_norm();
    const double rn = residual.frobenius_norm();
    check(rn <= kIdentityTolerance * std::max(dn, 1e-300),
          "step identity violated at step " + std::to_string(step) + " layer " + layer_id +
              ": |delta + eta*g| / |delta| = " + std::to_string(dn > 0.0 ? rn / dn : rn));
}

struct StepOutcome {
    double task_loss = 0.0;
    double reg_loss = 0.0;
    double total = 0.0;
};

StepOutcome training_step(TrainState& state, const Dataset& data,
                          const std::vector<std::size_t>& batch, bool record_importance,
                          double phi) {
    const TrainConfig& cfg = state.train_cfg;
    auto adapters = state.model.adapters();

    BatchGrads grads = task_loss_and_grads(state.model, data, batch);
    check(std::isfinite(grads.task_loss),
          "non-finite task loss at step " + std::to_string(state.global_step));

    StepOutcome outcome;
    outcome.task_loss = grads.task_loss;

    if (phi > 0.0) {
        const RegLossBreakdown breakdown = penalty_breakdown(state.model, state.penalty, phi);
        outcome.reg_loss = breakdown.weighted_total;
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            const Matrix theta = effective_weight(*adapters[i]);
            const Matrix grad_theta =
                layer_reg_grad_theta(theta, state.penalty.theta_ref[i], state.penalty.importance[i]);
            chain_theta_grad_to_factors(grad_theta, *adapters[i], phi * breakdown.weight[i],
                                        grads.grad_b[i], grads.grad_a[i]);
        }
    }
    outcome.total = outcome.task_loss + phi * outcome.reg_loss;
    check(std::isfinite(outcome.total),
          "non-finite total loss at step " + std::to_string(state.global_step));

    std::vector<LoraAdapter> before;
    if (record_importance) {
        before.reserve(adapters.size());
        for (const LoraAdapter* a : adapters) {
            before.push_back(*a);
        }
    }

    if (cfg.optimizer_mode == OptimizerMode::SgdExact) {
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            *adapters[i] = sgd_step(*adapters[i], grads.grad_b[i], grads.grad_a[i], cfg.eta);
        }
    } else {
        state.adam.step += 1;
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            adam_update(adapters[i]->B, state.adam.m_b[i], state.adam.v_b[i], grads.grad_b[i],
                        cfg.eta, state.adam.step);
            adam_update(adapters[i]->A, state.adam.m_a[i], state.adam.v_a[i], grads.grad_a[i],
                        cfg.eta, state.adam.step);
        }
    }

    if (record_importance) {
        const auto start = Clock::now();
        const bool spot_check = cfg.optimizer_mode == OptimizerMode::SgdExact &&
                                state.global_step % kIdentityCheckStride == 0;
        for (std::size_t i = 0; i < adapters.size(); ++i) {
            const Matrix g = virtual_gradient(before[i], grads.grad_b[i], grads.grad_a[i], cfg.eta);
            const Matrix d = delta_theta(before[i], *adapters[i]);
            if (spot_check) {
                check_step_identity(d, g, cfg.eta, adapters[i]->layer_id, state.global_step);
            }
            state.importance.accumulate(adapters[i]->layer_id, g, d);
        }
        state.importance_seconds += seconds_since(start);
    }
    return outcome;
}

void build_penalty_context(TrainState& state, const TaskPair& tasks) {
    const TrainConfig& cfg = state.train_cfg;
    check(state.importance.consolidated(),
          "train_mu: strategy " + std::string(to_string(cfg.strategy)) +
              " requires consolidated importance, got a live recording state");

    PenaltyContext ctx;
    ctx.active = true;
    const auto ids = state.model.adapter_ids();
    for (const auto& id : ids) {
        ctx.theta_ref.push_back(state.importance.layer(id).theta_ref);
    }

    if (cfg.strategy == Strategy::Ours) {
        const LayerWeightVector weights = layer_weights(state.importance.layer_l2_norms());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            ctx.importance.push_back(state.importance.layer(ids[i]).Omega);
            ctx.weights.push_back(weights[i].weight);
        }
    } else { // EwcLora: diagonal Fisher on the nu-tuned model, uniform layer weights
        const auto start = Clock::now();
        const std::size_t n_samples = std::min(tasks.nu_train.size(), kFisherSampleCap);
        ctx.importance = ewc_fisher_diag(state.model, tasks.nu_train, n_samples,
                                         Rng::derive(cfg.seed, "fisher"));
        state.importance_seconds = seconds_since(start); // replaces the SI recording cost
        ctx.weights.assign(ids.size(), 1.0 / static_cast<double>(ids.size()));
    }
    state.penalty = std::move(ctx);
}

std::uint64_t importance_matrix_bytes(const TrainState& state) {
    // rows + cols headers plus payload, per layer, for the matrices a
    // deployment would persist as "the importance artifact".
    std::uint64_t bytes = 0;
    if (state.penalty.active) {
        for (const Matrix& m : state.penalty.importance) {
            bytes += 16 + 8 * static_cast<std::uint64_t>(m.size());
        }
    } else if (state.importance.consolidated()) {
        for (const auto& id : state.importance.layer_ids()) {
            bytes += 16 + 8 * static_cast<std::uint64_t>(state.importance.layer(id).Omega.size());
        }
    }
    return bytes;
}

PhaseResult run_phase(TrainState& state, const TaskPair& tasks, const RunHooks& hooks,
                      Phase phase) {
    const TrainConfig& cfg = state.train_cfg;
    const Dataset& data = phase == Phase::Nu ? tasks.nu_train : tasks.mu_train;
    const std::size_t epochs = phase == Phase::Nu ? cfg.epochs_nu : cfg.epochs_mu;
    const char* label = to_string(phase);
    const bool record_importance = phase == Phase::Nu;
    const double phi = phase == Phase::Mu ? effective_phi(cfg) : 0.0;

    PhaseResult result;
    auto emit_eval = [&](const std::string& phase_label, std::size_t epoch) {
        for (const auto& [split, dataset] :
             {std::pair<const char*, const Dataset*>{"nu_eval", &tasks.nu_eval},
              std::pair<const char*, const Dataset*>{"mu_eval", &tasks.mu_eval}}) {
            EvalRow row{phase_label, epoch, split, evaluate(state.model, *dataset)};
            result.evals.push_back(row);
            if (hooks.on_eval) {
                hooks.on_eval(row);
            }
        }
    };

    // Base metrics, once, before any training at all.
    if (state.global_step == 0 && state.epoch == 0 && state.step_in_epoch == 0 &&
        ((phase == Phase::Nu) || (phase == Phase::Mu && cfg.strategy == Strategy::LoraMu))) {
        emit_eval("base", 0);
    }

    for (std::size_t epoch = state.epoch; epoch < epochs; ++epoch) {
        state.epoch = epoch;
        const std::uint64_t epoch_seed =
            Rng::derive(cfg.seed, std::string("shuffle.") + label, epoch);
        const auto epoch_batches = batches(data, cfg.batch_size, epoch_seed);

        for (std::size_t bi = state.step_in_epoch; bi < epoch_batches.size(); ++bi) {
            const StepOutcome outcome =
                training_step(state, data, epoch_batches[bi], record_importance, phi);
            StepRow row{state.global_step, label, outcome.task_loss, outcome.reg_loss,
                        outcome.total};
            result.steps.push_back(row);
            if (hooks.on_step) {
                hooks.on_step(row);
            }
            state.global_step += 1;
            state.step_in_epoch = bi + 1;
            if (hooks.checkpoint_every > 0 && hooks.on_checkpoint &&
                state.global_step % hooks.checkpoint_every == 0) {
                hooks.on_checkpoint(state);
            }
        }
        emit_eval(label, epoch + 1);
        state.step_in_epoch = 0;
    }
    state.epoch = epochs;
    return result;
}

void append_phase(RunReport& report, PhaseResult&& phase) {
    for (auto& s : phase.steps) {
        report.steps.push_back(std::move(s));
    }
    for (auto& e : phase.evals) {
        report.evals.push_back(std::move(e));
    }
}

} // namespace

PhaseResult train_nu(TrainState& state, const TaskPair& tasks, const RunHooks& hooks) {
    check(state.phase == Phase::Nu, "train_nu: state is not in the nu phase");
    check(state.train_cfg.strategy != Strategy::LoraMu,
          "train_nu: strategy lora_mu has no nu phase");
    check(state.importance.task_open(), "train_nu: importance recording is not live");

    PhaseResult result = run_phase(state, tasks, hooks, Phase::Nu);

    const auto start = Clock::now();
    state.importance.consolidate(state.model.effective_weights(), state.train_cfg.xi);
    state.importance_seconds += seconds_since(start);

    state.nu_ce_before_mu = evaluate(state.model, tasks.nu_eval).ce_loss;
    state.has_nu_before = true;
    state.phase = Phase::Mu;
    state.epoch = 0;
    state.step_in_epoch = 0;
    reset_adam(state.adam);
    return result;
}

PhaseResult train_mu(TrainState& state, const TaskPair& tasks, const RunHooks& hooks) {
    check(state.phase == Phase::Mu, "train_mu: state is not in the mu phase");
    const TrainConfig& cfg = state.train_cfg;
    if (cfg.strategy == Strategy::Ours || cfg.strategy == Strategy::EwcLora) {
        check(state.importance.consolidated(),
              "train_mu: strategy " + std::string(to_string(cfg.strategy)) +
                  " rejects live (unconsolidated) importance");
    }

    if (!state.has_nu_before) {
        // lora_mu path: the reference point is the untuned model.
        state.nu_ce_before_mu = evaluate(state.model, tasks.nu_eval).ce_loss;
        state.has_nu_before = true;
    }
    if (effective_phi(cfg) > 0.0 && !state.penalty.active) {
        build_penalty_context(state, tasks);
    }

    PhaseResult result = run_phase(state, tasks, hooks, Phase::Mu);
    state.phase = Phase::Done;
    return result;
}

RunReport run_experiment(TrainState& state, const TaskPair& tasks, const RunHooks& hooks) {
    check(tasks.max_sequence_length() <= state.model_cfg.context_len,
          "run_experiment: task sequences exceed the model context length");

    RunReport report;
    if (state.phase == Phase::Nu) {
        append_phase(report, train_nu(state, tasks, hooks));
    }
    if (state.phase == Phase::Mu) {
        append_phase(report, train_mu(state, tasks, hooks));
    }

    RunSummary& summary = report.summary;
    summary.nu_ce_before_mu = state.nu_ce_before_mu;
    summary.nu_ce_after_mu = evaluate(state.model, tasks.nu_eval).ce_loss;
    summary.forgetting = summary.nu_ce_after_mu - summary.nu_ce_before_mu;
    summary.mu_accuracy = evaluate(state.model, tasks.mu_eval).accuracy;
    if (state.importance.consolidated()) {
        summary.layer_norms = state.importance.layer_l2_norms();
        summary.layer_softmax = layer_weights(summary.layer_norms);
    }
    summary.importance_bytes = importance_matrix_bytes(state);
    return report;
}

RunReport run_experiment(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         const TaskPair& tasks, const RunHooks& hooks) {
    TrainState state = make_initial_state(model_cfg, train_cfg, tasks.spec, tasks.vocab.size());
    return run_experiment(state, tasks, hooks);
}

} // namespace silora
