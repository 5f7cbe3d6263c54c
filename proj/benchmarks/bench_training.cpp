#include <benchmark/benchmark.h>

#include "silora/checkpoint.hpp"
#include "silora/trainer.hpp"

namespace {

using namespace silora;

ModelConfig bench_model() {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_blocks = 2;
    cfg.d_ff = 64;
    return cfg;
}

TaskSpec bench_task() {
    TaskSpec spec;
    spec.nu_train = 100;
    spec.nu_eval = 40;
    spec.mu_train = 100;
    spec.mu_eval = 40;
    return spec;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    Matrix a(n, n), b(n, n);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a.data()[i] = rng.uniform(-1.0, 1.0);
        b.data()[i] = rng.uniform(-1.0, 1.0);
    }
    for (auto _ : state) {
        Graph g;
        const auto pa = g.param(a);
        const auto pb = g.param(b);
        const auto prod = g.matmul(pa, pb);
        const auto ones_r = g.value(Matrix(n, 1, 1.0));
        const auto ones_l = g.value(Matrix(1, n, 1.0));
        const auto out = g.matmul(ones_l, g.matmul(prod, ones_r));
        g.backward(out);
        benchmark::DoNotOptimize(g.grad_of(pa).data());
    }
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64);

void BM_TrainingStep(benchmark::State& state) {
    const TaskPair tasks = gen_task_pair(bench_task(), 3);
    TrainConfig cfg;
    cfg.epochs_nu = 1;
    cfg.epochs_mu = 0;
    TrainState train_state =
        make_initial_state(bench_model(), cfg, tasks.spec, tasks.vocab.size());

    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        batch.push_back(i);
    }
    for (auto _ : state) {
        const BatchGrads grads = task_loss_and_grads(train_state.model, tasks.nu_train, batch);
        benchmark::DoNotOptimize(grads.task_loss);
    }
}
BENCHMARK(BM_TrainingStep);

void BM_ImportanceAccumulate(benchmark::State& state) {
    Rng rng(2);
    const std::size_t d = 32;
    ImportanceTracker tracker;
    tracker.register_layer("layer", d, d);
    tracker.begin_task({Matrix(d, d)});
    Matrix g(d, d), delta(d, d);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.data()[i] = rng.uniform(-1.0, 1.0);
        delta.data()[i] = rng.uniform(-1e-3, 1e-3);
    }
    for (auto _ : state) {
        tracker.accumulate("layer", g, delta);
        benchmark::DoNotOptimize(tracker.layer("layer").omega.data());
    }
}
BENCHMARK(BM_ImportanceAccumulate);

void BM_CheckpointRoundTrip(benchmark::State& state) {
    const TaskPair tasks = gen_task_pair(bench_task(), 4);
    TrainConfig cfg;
    cfg.epochs_nu = 1;
    cfg.epochs_mu = 0;
    TrainState train_state =
        make_initial_state(bench_model(), cfg, tasks.spec, tasks.vocab.size());
    run_experiment(train_state, tasks);

    for (auto _ : state) {
        const std::string bytes = serialize_checkpoint(train_state);
        const TrainState loaded = deserialize_checkpoint(bytes);
        benchmark::DoNotOptimize(loaded.global_step);
    }
}
BENCHMARK(BM_CheckpointRoundTrip);

} // namespace

BENCHMARK_MAIN();
