#include "silora/lora.hpp"

#include <cmath>

#include "silora/rng.hpp"

namespace silora {

const char* to_string(ScalingMode mode) {
    return mode == ScalingMode::Standard ? "standard" : "rank_stabilized";
}

ScalingMode scaling_mode_from_string(const std::string& s) {
    if (s == "standard") {
        return ScalingMode::Standard;
    }
    if (s == "rank_stabilized") {
        return ScalingMode::RankStabilized;
    }
    throw Error("unknown scaling mode '" + s + "'");
}

double LoraAdapter::scaling() const {
    const double r = static_cast<double>(rank);
    return scaling_mode == ScalingMode::Standard ? alpha / r : alpha / std::sqrt(r);
}

LoraAdapter lora_init(std::string layer_id, std::size_t d_out, std::size_t d_in,
                      std::size_t rank, double alpha, ScalingMode mode, std::uint64_t seed) {
    check(d_out >= 1 && d_in >= 1, "lora_init(" + layer_id + "): dimensions must be positive");
    check(rank >= 1, "lora_init(" + layer_id + "): rank must be >= 1");
    check(rank <= std::min(d_out, d_in),
          "lora_init(" + layer_id + "): rank " + std::to_string(rank) + " exceeds min(" +
              std::to_string(d_out) + ", " + std::to_string(d_in) + ")");
    check(alpha > 0.0, "lora_init(" + layer_id + "): alpha must be positive");

    LoraAdapter adapter;
    adapter.layer_id = std::move(layer_id);
    adapter.theta0 = Matrix(d_out, d_in);
    adapter.B = Matrix(d_out, rank); // zeros: a fresh adapter has zero delta
    adapter.A = Matrix(rank, d_in);
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.scaling_mode = mode;

    Rng rng(seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));
    for (std::size_t i = 0; i < adapter.A.size(); ++i) {
        adapter.A.data()[i] = rng.normal(0.0, stddev);
    }
    return adapter;
}

Matrix effective_weight(const LoraAdapter& adapter) {
    const Matrix delta = matmul(adapter.B, adapter.A);
    Matrix w = adapter.theta0;
    axpy(w, adapter.scaling(), delta);
    return w;
}

LoraAdapter sgd_step(const LoraAdapter& adapter, const Matrix& grad_b, const Matrix& grad_a,
                     double eta) {
    check(grad_b.same_shape(adapter.B),
          "sgd_step(" + adapter.layer_id + "): grad_b shape mismatch");
    check(grad_a.same_shape(adapter.A),
          "sgd_step(" + adapter.layer_id + "): grad_a shape mismatch");
    check(eta > 0.0, "sgd_step(" + adapter.layer_id + "): eta must be positive");

    LoraAdapter next = adapter;
    axpy(next.B, -eta, grad_b);
    axpy(next.A, -eta, grad_a);
    return next;
}

Matrix virtual_gradient(const LoraAdapter& before_step, const Matrix& grad_b,
                        const Matrix& grad_a, double eta) {
    check(grad_b.same_shape(before_step.B),
          "virtual_gradient(" + before_step.layer_id + "): grad_b shape mismatch");
    check(grad_a.same_shape(before_step.A),
          "virtual_gradient(" + before_step.layer_id + "): grad_a shape mismatch");
    check(eta > 0.0, "virtual_gradient(" + before_step.layer_id + "): eta must be positive");

    Matrix g = matmul(grad_b, before_step.A);
    matmul_accumulate(g, before_step.B, grad_a);
    matmul_accumulate(g, scaled(grad_b, -eta), grad_a);
    return scaled(g, before_step.scaling());
}

Matrix delta_theta(const LoraAdapter& before, const LoraAdapter& after) {
    check(before.theta0 == after.theta0,
          "delta_theta(" + before.layer_id + "): adapters come from different layers");
    check(before.scaling_mode == after.scaling_mode && before.rank == after.rank &&
              before.alpha == after.alpha,
          "delta_theta(" + before.layer_id + "): scaling disagrees");
    check(before.B.same_shape(after.B) && before.A.same_shape(after.A),
          "delta_theta(" + before.layer_id + "): factor shapes disagree");

    return scaled(sub(matmul(after.B, after.A), matmul(before.B, before.A)), before.scaling());
}

} // namespace silora
