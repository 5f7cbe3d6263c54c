#pragma once

#include <cstdint>
#include <string>

#include "silora/matrix.hpp"

namespace silora {

enum class ScalingMode : std::uint8_t {
    Standard,       // s = alpha / r
    RankStabilized, // s = alpha / sqrt(r)
};

const char* to_string(ScalingMode mode);
ScalingMode scaling_mode_from_string(const std::string& s);

// One adapted linear layer: a frozen base matrix plus a trainable low-rank
// delta. The effective weight is theta0 + s*B*A with B zero at init, so a
// fresh adapter is exactly the base layer.
struct LoraAdapter {
    std::string layer_id;
    Matrix theta0; // d_out x d_in, frozen after construction
    Matrix B;      // d_out x r
    Matrix A;      // r x d_in
    std::size_t rank = 0;
    double alpha = 0.0;
    ScalingMode scaling_mode = ScalingMode::Standard;

    std::size_t d_out() const { return theta0.rows(); }
    std::size_t d_in() const { return theta0.cols(); }
    double scaling() const;
};

// B = 0, A ~ N(0, 1/r) elementwise (std 1/sqrt(r)), from the given seed.
// theta0 arrives zeroed; model construction fills it in.
LoraAdapter lora_init(std::string layer_id, std::size_t d_out, std::size_t d_in,
                      std::size_t rank, double alpha, ScalingMode mode, std::uint64_t seed);

// theta0 + s*B*A.
Matrix effective_weight(const LoraAdapter& adapter);

// Plain gradient step on the factors: B - eta*gB, A - eta*gA.
LoraAdapter sgd_step(const LoraAdapter& adapter, const Matrix& grad_b, const Matrix& grad_a,
                     double eta);

// The full-weight gradient that one factor step is equivalent to:
//   s * (gB*A + B*gA - eta*gB*gA)
// evaluated at the pre-step factors. In the s-scaled effective-weight space
// the step identity delta_theta == -eta * virtual_gradient holds exactly.
Matrix virtual_gradient(const LoraAdapter& before_step, const Matrix& grad_b,
                        const Matrix& grad_a, double eta);

// effective_weight(after) - effective_weight(before), computed as
// s*(B2*A2 - B1*A1) so the frozen base cancels exactly.
Matrix delta_theta(const LoraAdapter& before, const LoraAdapter& after);

} // namespace silora
