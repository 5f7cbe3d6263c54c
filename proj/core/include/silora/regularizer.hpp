#pragma once

#include <string>
#include <utility>
#include <vector>

#include "silora/lora.hpp"
#include "silora/matrix.hpp"

namespace silora {

// Softmax-normalized per-layer coefficients, canonical layer order.
// Weights sum to 1.
struct LayerWeight {
    std::string layer_id;
    double weight = 0.0;
};
using LayerWeightVector = std::vector<LayerWeight>;

// One evaluation of the anchored penalty across layers.
struct RegLossBreakdown {
    std::vector<std::string> layer_ids;
    std::vector<double> raw_penalty;  // per-layer sum Omega*(theta - theta_ref)^2
    std::vector<double> weight;       // per-layer coefficient
    double weighted_total = 0.0;      // dot(weight, raw_penalty)
    double phi = 0.0;
    double contribution = 0.0;        // phi * weighted_total
};

// sum_i Omega_i * (theta_i - theta_ref_i)^2 for one layer. Omega must be
// nonneg (consolidation guarantees it; a negative entry means the contract
// was violated upstream).
double layer_reg_loss(const Matrix& theta_current, const Matrix& theta_ref, const Matrix& Omega);

// Gradient of layer_reg_loss with respect to theta_current: 2*Omega (.) (theta - theta_ref).
Matrix layer_reg_grad_theta(const Matrix& theta_current, const Matrix& theta_ref,
                            const Matrix& Omega);

// Chains a d(loss)/d(theta_eff) matrix onto the low-rank factors through
// theta = theta0 + s*B*A:  grad_b += coeff*s*G*A^T,  grad_a += coeff*s*B^T*G.
void chain_theta_grad_to_factors(const Matrix& grad_theta, const LoraAdapter& adapter,
                                 double coeff, Matrix& grad_b, Matrix& grad_a);

// Softmax over per-layer norms, preserving the given (canonical) order.
LayerWeightVector layer_weights(const std::vector<std::pair<std::string, double>>& norms);

// task_loss + phi * weighted regularization total.
double total_loss(double task_loss, const RegLossBreakdown& breakdown);

} // namespace silora
