#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "silora/checkpoint.hpp"

using namespace silora;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_blocks = 1;
    cfg.d_ff = 16;
    cfg.context_len = 32;
    return cfg;
}

TaskSpec tiny_task() {
    TaskSpec spec;
    spec.seed = 5;
    spec.nu_train = 60;
    spec.nu_eval = 30;
    spec.mu_train = 60;
    spec.mu_eval = 30;
    return spec;
}

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.rank = 4;
    cfg.epochs_nu = 1;
    cfg.epochs_mu = 2;
    cfg.seed = 31;
    cfg.strategy = Strategy::Ours;
    return cfg;
}

// A state with everything populated: consolidated importance, an active
// penalty context, and mid-mu progress.
TrainState populated_state(const TaskPair& tasks) {
    TrainState state = make_initial_state(tiny_model(), tiny_train(), tasks.spec,
                                          tasks.vocab.size());
    train_nu(state, tasks);
    RunHooks hooks;
    hooks.checkpoint_every = 2;
    TrainState snapshot;
    bool taken = false;
    hooks.on_checkpoint = [&](const TrainState& s) {
        if (!taken) {
            snapshot = s;
            taken = true;
        }
    };
    train_mu(state, tasks, hooks);
    REQUIRE(taken);
    return snapshot;
}

} // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
    const TaskPair tasks = gen_task_pair(tiny_task());
    const TrainState state = populated_state(tasks);

    const std::string bytes = serialize_checkpoint(state);
    const TrainState loaded = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(loaded) == bytes);

    // spot checks on top of the byte equality
    const auto a = state.model.adapters();
    const auto b = loaded.model.adapters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->B == b[i]->B);
        CHECK(a[i]->A == b[i]->A);
        CHECK(a[i]->theta0 == b[i]->theta0);
    }
    CHECK(loaded.phase == state.phase);
    CHECK(loaded.epoch == state.epoch);
    CHECK(loaded.step_in_epoch == state.step_in_epoch);
    CHECK(loaded.global_step == state.global_step);
    CHECK(loaded.penalty.active == state.penalty.active);
    for (std::size_t i = 0; i < state.penalty.importance.size(); ++i) {
        CHECK(loaded.penalty.importance[i] == state.penalty.importance[i]);
        CHECK(loaded.penalty.theta_ref[i] == state.penalty.theta_ref[i]);
    }
    for (const auto& id : state.importance.layer_ids()) {
        CHECK(loaded.importance.layer(id).Omega == state.importance.layer(id).Omega);
        CHECK(loaded.importance.layer(id).theta_ref == state.importance.layer(id).theta_ref);
    }
}

TEST_CASE("file save and load round-trips") {
    const TaskPair tasks = gen_task_pair(tiny_task());
    const TrainState state = populated_state(tasks);

    const fs::path path = fs::temp_directory_path() / "silora_ckpt_test.bin";
    save_checkpoint(path.string(), state);
    const TrainState loaded = load_checkpoint(path.string());
    CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(state));
    fs::remove(path);
}

TEST_CASE("a bumped version field is rejected explicitly") {
    const TaskPair tasks = gen_task_pair(tiny_task());
    const TrainState state = populated_state(tasks);
    std::string bytes = serialize_checkpoint(state);
    bytes[8] = static_cast<char>(kCheckpointVersion + 1); // version follows the 8-byte magic
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes), doctest::Contains("version"), Error);
}

TEST_CASE("garbage and truncated files are rejected") {
    const TaskPair tasks = gen_task_pair(tiny_task());
    const TrainState state = populated_state(tasks);
    const std::string bytes = serialize_checkpoint(state);

    SUBCASE("bad magic") {
        std::string garbage = bytes;
        garbage[0] = 'X';
        CHECK_THROWS_WITH_AS(deserialize_checkpoint(garbage), doctest::Contains("magic"), Error);
    }
    SUBCASE("truncation at several points") {
        for (const double fraction : {0.2, 0.5, 0.9}) {
            const std::string cut = bytes.substr(0, static_cast<std::size_t>(
                                                        fraction * double(bytes.size())));
            CHECK_THROWS_AS(deserialize_checkpoint(cut), Error);
        }
    }
    SUBCASE("trailing bytes") {
        CHECK_THROWS_AS(deserialize_checkpoint(bytes + "zz"), Error);
    }
}

TEST_CASE("theta0 digests catch frozen-weight drift") {
    const TaskPair tasks = gen_task_pair(tiny_task());
    TrainState state = populated_state(tasks);
    state.model.init_seed += 1; // frozen weights will rebuild differently
    const std::string bytes = serialize_checkpoint(state);
    CHECK_THROWS_WITH_AS(deserialize_checkpoint(bytes), doctest::Contains("digest"), Error);
}

TEST_CASE("the default-architecture checkpoint stays small") {
    TaskSpec spec; // default grammar-shift sizes
    const TaskPair tasks = gen_task_pair(spec);
    TrainConfig cfg; // paper defaults
    const TrainState state =
        make_initial_state(ModelConfig{}, cfg, tasks.spec, tasks.vocab.size());
    const std::string bytes = serialize_checkpoint(state);
    CHECK(bytes.size() < 20u * 1024 * 1024);
}

TEST_CASE("resuming a mid-run checkpoint reproduces the remaining rows") {
    const TaskPair tasks = gen_task_pair(tiny_task());

    // uninterrupted run
    TrainState full_state = make_initial_state(tiny_model(), tiny_train(), tasks.spec,
                                               tasks.vocab.size());
    const RunReport full = run_experiment(full_state, tasks);

    // interrupted run: capture a checkpoint mid-mu, then resume from its bytes
    TrainState prefix_state = make_initial_state(tiny_model(), tiny_train(), tasks.spec,
                                                 tasks.vocab.size());
    train_nu(prefix_state, tasks);
    std::string checkpoint_bytes;
    std::size_t checkpoint_step = 0;
    RunHooks capture;
    capture.checkpoint_every = 3;
    capture.on_checkpoint = [&](const TrainState& s) {
        if (checkpoint_bytes.empty()) {
            checkpoint_bytes = serialize_checkpoint(s);
            checkpoint_step = s.global_step;
        }
    };
    train_mu(prefix_state, tasks, capture);
    REQUIRE_FALSE(checkpoint_bytes.empty());

    TrainState resumed = deserialize_checkpoint(checkpoint_bytes);
    const RunReport tail = run_experiment(resumed, tasks);

    // rows after the checkpoint step must match the uninterrupted run exactly
    std::vector<StepRow> expected_tail;
    for (const StepRow& row : full.steps) {
        if (row.step >= checkpoint_step) {
            expected_tail.push_back(row);
        }
    }
    REQUIRE(tail.steps.size() == expected_tail.size());
    for (std::size_t i = 0; i < tail.steps.size(); ++i) {
        CHECK(tail.steps[i].step == expected_tail[i].step);
        CHECK(tail.steps[i].task_loss == expected_tail[i].task_loss);
        CHECK(tail.steps[i].reg_loss == expected_tail[i].reg_loss);
        CHECK(tail.steps[i].weighted_total == expected_tail[i].weighted_total);
    }

    // and the final weights agree bit for bit
    const auto a = full_state.model.adapters();
    const auto b = resumed.model.adapters();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->B == b[i]->B);
        CHECK(a[i]->A == b[i]->A);
    }
}
