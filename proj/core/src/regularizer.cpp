#include "silora/regularizer.hpp"

#include <cmath>

namespace silora {

double layer_reg_loss(const Matrix& theta_current, const Matrix& theta_ref,
                      const Matrix& Omega) {
    check(theta_current.same_shape(theta_ref) && theta_current.same_shape(Omega),
          "layer_reg_loss: shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < Omega.size(); ++i) {
        const double imp = Omega.data()[i];
        check(imp >= 0.0, "layer_reg_loss: negative importance entry (consolidation contract "
                          "violated)");
        const double d = theta_current.data()[i] - theta_ref.data()[i];
        loss += imp * d * d;
    }
    return loss;
}

Matrix layer_reg_grad_theta(const Matrix& theta_current, const Matrix& theta_ref,
                            const Matrix& Omega) {
    check(theta_current.same_shape(theta_ref) && theta_current.same_shape(Omega),
          "layer_reg_grad_theta: shape mismatch");
    Matrix g(theta_current.rows(), theta_current.cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.data()[i] = 2.0 * Omega.data()[i] * (theta_current.data()[i] - theta_ref.data()[i]);
    }
    return g;
}

void chain_theta_grad_to_factors(const Matrix& grad_theta, const LoraAdapter& adapter,
                                 double coeff, Matrix& grad_b, Matrix& grad_a) {
    check(grad_theta.rows() == adapter.d_out() && grad_theta.cols() == adapter.d_in(),
          "chain_theta_grad_to_factors: grad shape mismatch for '" + adapter.layer_id + "'");
    const double cs = coeff * adapter.scaling();
    if (cs == 0.0) {
        return;
    }
    // gB += cs * G * A^T ; gA += cs * B^T * G
    matmul_accumulate(grad_b, scaled(grad_theta, cs), adapter.A, false, true);
    matmul_accumulate(grad_a, scaled(adapter.B, cs), grad_theta, true, false);
}

LayerWeightVector layer_weights(const std::vector<std::pair<std::string, double>>& norms) {
    check(!norms.empty(), "layer_weights: empty layer set");
    double max_norm = norms.front().second;
    for (const auto& [id, n] : norms) {
        check(n >= 0.0, "layer_weights: negative norm for '" + id + "'");
        max_norm = std::max(max_norm, n);
    }
    LayerWeightVector weights;
    weights.reserve(norms.size());
    double denom = 0.0;
    for (const auto& [id, n] : norms) {
        const double e = std::exp(n - max_norm);
        weights.push_back({id, e});
        denom += e;
    }
    for (auto& w : weights) {
        w.weight /= denom;
    }
    return weights;
}

double total_loss(double task_loss, const RegLossBreakdown& breakdown) {
    check(breakdown.phi >= 0.0, "total_loss: phi must be nonnegative");
    return task_loss + breakdown.phi * breakdown.weighted_total;
}

} // namespace silora
